//! Group-conditional error rates and occupation bias categorization.
//!
//! Group A is Male (gender) or Young (age); group B is Female or Old. An
//! occupation is categorized from `ΔTPR = TPR_A - TPR_B` and
//! `ΔFPR = FPR_A - FPR_B` against per-geography thresholds `t1`, `t2`:
//!
//! 1. neutral when `|ΔTPR| < 0.01` and `|ΔFPR| < 0.01`;
//! 2. A-biased when `ΔTPR ≥ t1`, B-biased when `-ΔTPR ≥ t1`;
//! 3. with `|ΔTPR| < 0.01`: A-biased when `ΔFPR ≥ t2`, B-biased when
//!    `-ΔFPR ≥ t2`;
//! 4. otherwise left unclassified.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kg::Attribute;
use crate::linkclf::{ClassificationMetrics, PredictionRow};

/// Differences below this are treated as equal rates.
pub const NEUTRAL_BAND: f64 = 0.01;
/// Lower bound applied to both thresholds.
pub const THRESHOLD_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn tpr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let d = self.fp + self.tn;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.tn += o.tn;
    }
}

/// Rates for group A (index 0) and group B (index 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub attribute: Attribute,
    pub tpr: [Option<f64>; 2],
    pub fpr: [Option<f64>; 2],
    pub confusion: [Confusion; 2],
}

impl GroupRates {
    pub fn from_confusion(attribute: Attribute, confusion: [Confusion; 2]) -> Self {
        GroupRates {
            attribute,
            tpr: [confusion[0].tpr(), confusion[1].tpr()],
            fpr: [confusion[0].fpr(), confusion[1].fpr()],
            confusion,
        }
    }

    /// Rates given directly, without supporting counts.
    pub fn from_rates(attribute: Attribute, tpr: [f64; 2], fpr: [f64; 2]) -> Self {
        GroupRates {
            attribute,
            tpr: [Some(tpr[0]), Some(tpr[1])],
            fpr: [Some(fpr[0]), Some(fpr[1])],
            confusion: [Confusion::default(); 2],
        }
    }

    /// `(positives, negatives)` per group.
    pub fn support(&self) -> [(u64, u64); 2] {
        self.confusion.map(|c| (c.tp + c.fn_, c.fp + c.tn))
    }

    /// Group A minus group B.
    pub fn tpr_diff(&self) -> Option<f64> {
        Some(self.tpr[0]? - self.tpr[1]?)
    }

    pub fn fpr_diff(&self) -> Option<f64> {
        Some(self.fpr[0]? - self.fpr[1]?)
    }

    /// The same rates with groups A and B exchanged.
    pub fn swapped(&self) -> GroupRates {
        GroupRates {
            attribute: self.attribute,
            tpr: [self.tpr[1], self.tpr[0]],
            fpr: [self.fpr[1], self.fpr[0]],
            confusion: [self.confusion[1], self.confusion[0]],
        }
    }
}

/// Confusion counts per group over the given prediction rows. Rows whose
/// group belongs to another attribute are ignored.
pub fn group_rates<'a>(rows: impl IntoIterator<Item = &'a PredictionRow>, attribute: Attribute) -> GroupRates {
    let mut c = [Confusion::default(); 2];
    for r in rows {
        if r.group.attribute() != attribute {
            continue;
        }
        let cell = &mut c[r.group.slot()];
        match (r.label, r.predicted) {
            (true, true) => cell.tp += 1,
            (true, false) => cell.fn_ += 1,
            (false, true) => cell.fp += 1,
            (false, false) => cell.tn += 1,
        }
    }
    GroupRates::from_confusion(attribute, c)
}

/// Sums confusion counts of several rate records (micro-pooling).
pub fn pool_rates<'a>(attribute: Attribute, rates: impl IntoIterator<Item = &'a GroupRates>) -> GroupRates {
    let mut c = [Confusion::default(); 2];
    for r in rates {
        c[0].add(&r.confusion[0]);
        c[1].add(&r.confusion[1]);
    }
    GroupRates::from_confusion(attribute, c)
}

/// `|TPR_A - TPR_B|`.
pub fn equal_opportunity_gap(rates: &GroupRates) -> Option<f64> {
    rates.tpr_diff().map(f64::abs)
}

/// `max(|TPR_A - TPR_B|, |FPR_A - FPR_B|)`.
pub fn equalized_odds_gap(rates: &GroupRates) -> Option<f64> {
    Some(rates.tpr_diff()?.abs().max(rates.fpr_diff()?.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `μ - σ`, used for gender.
    MeanMinusStd,
    /// `μ + σ`, used for age.
    MeanPlusStd,
}

impl ThresholdRule {
    pub fn for_attribute(attribute: Attribute) -> Self {
        match attribute {
            Attribute::Gender => ThresholdRule::MeanMinusStd,
            Attribute::Age => ThresholdRule::MeanPlusStd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl SpreadStats {
    pub fn of(values: &[f64]) -> Option<SpreadStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(SpreadStats {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }

    pub fn cutoff(&self, rule: ThresholdRule) -> f64 {
        match rule {
            ThresholdRule::MeanMinusStd => self.mean - self.std,
            ThresholdRule::MeanPlusStd => self.mean + self.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasThresholds {
    pub attribute: Attribute,
    pub rule: ThresholdRule,
    pub t1: f64,
    pub t2: f64,
    pub tpr_stats: SpreadStats,
    pub fpr_stats: SpreadStats,
}

/// Thresholds from the spread of absolute TPR and FPR differences across
/// occupations, floored at 0.01.
pub fn compute_thresholds(rates: &[GroupRates], attribute: Attribute) -> Result<BiasThresholds> {
    let tpr: Vec<f64> = rates.iter().filter_map(|r| r.tpr_diff()).map(f64::abs).collect();
    let fpr: Vec<f64> = rates.iter().filter_map(|r| r.fpr_diff()).map(f64::abs).collect();
    thresholds_from_diffs(&tpr, &fpr, attribute)
}

pub fn thresholds_from_diffs(tpr_diffs: &[f64], fpr_diffs: &[f64], attribute: Attribute) -> Result<BiasThresholds> {
    if tpr_diffs.len() < 2 || fpr_diffs.len() < 2 {
        return Err(AuditError::InsufficientData(format!(
            "thresholds need at least 2 occupations with defined rates (have {} TPR, {} FPR)",
            tpr_diffs.len(),
            fpr_diffs.len()
        )));
    }
    let rule = ThresholdRule::for_attribute(attribute);
    let tpr_stats = SpreadStats::of(tpr_diffs).unwrap();
    let fpr_stats = SpreadStats::of(fpr_diffs).unwrap();
    Ok(BiasThresholds {
        attribute,
        rule,
        t1: tpr_stats.cutoff(rule).max(THRESHOLD_FLOOR),
        t2: fpr_stats.cutoff(rule).max(THRESHOLD_FLOOR),
        tpr_stats,
        fpr_stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCategory {
    GroupABiased,
    GroupBBiased,
    Neutral,
    Unclassified,
}

/// The rule that produced a label, in geography-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `ΔTPR ≥ t1`.
    TprFavoursA,
    /// Equal TPR, `ΔFPR ≥ t2`.
    FprFavoursA,
    /// `-ΔTPR ≥ t1`.
    TprFavoursB,
    /// Equal TPR, `-ΔFPR ≥ t2`.
    FprFavoursB,
    /// Both differences inside the neutral band.
    Neutral,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::TprFavoursA,
        Condition::FprFavoursA,
        Condition::TprFavoursB,
        Condition::FprFavoursB,
        Condition::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn category(self) -> BiasCategory {
        match self {
            Condition::TprFavoursA | Condition::FprFavoursA => BiasCategory::GroupABiased,
            Condition::TprFavoursB | Condition::FprFavoursB => BiasCategory::GroupBBiased,
            Condition::Neutral => BiasCategory::Neutral,
        }
    }

    /// The condition with the roles of groups A and B exchanged.
    pub fn mirrored(self) -> Condition {
        match self {
            Condition::TprFavoursA => Condition::TprFavoursB,
            Condition::TprFavoursB => Condition::TprFavoursA,
            Condition::FprFavoursA => Condition::FprFavoursB,
            Condition::FprFavoursB => Condition::FprFavoursA,
            Condition::Neutral => Condition::Neutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasLabel {
    pub category: BiasCategory,
    pub condition: Option<Condition>,
}

impl BiasLabel {
    pub const UNCLASSIFIED: BiasLabel = BiasLabel {
        category: BiasCategory::Unclassified,
        condition: None,
    };

    fn fired(c: Condition) -> BiasLabel {
        BiasLabel {
            category: c.category(),
            condition: Some(c),
        }
    }
}

/// Applies the categorization rules in order. Any undefined rate leaves the
/// occupation unclassified.
pub fn categorize(rates: &GroupRates, thresholds: &BiasThresholds) -> BiasLabel {
    let (Some(dt), Some(df)) = (rates.tpr_diff(), rates.fpr_diff()) else {
        return BiasLabel::UNCLASSIFIED;
    };
    categorize_diffs(dt, df, thresholds.t1, thresholds.t2)
}

pub fn categorize_diffs(tpr_diff: f64, fpr_diff: f64, t1: f64, t2: f64) -> BiasLabel {
    let tpr_equal = tpr_diff.abs() < NEUTRAL_BAND;
    if tpr_equal && fpr_diff.abs() < NEUTRAL_BAND {
        return BiasLabel::fired(Condition::Neutral);
    }
    if tpr_diff >= t1 {
        return BiasLabel::fired(Condition::TprFavoursA);
    }
    if -tpr_diff >= t1 {
        return BiasLabel::fired(Condition::TprFavoursB);
    }
    if tpr_equal {
        if fpr_diff >= t2 {
            return BiasLabel::fired(Condition::FprFavoursA);
        }
        if -fpr_diff >= t2 {
            return BiasLabel::fired(Condition::FprFavoursB);
        }
    }
    BiasLabel::UNCLASSIFIED
}

/// Direction of a rate comparison used for cross-cluster contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// TPR_A exceeds TPR_B.
    TprA,
    /// TPR_B exceeds TPR_A.
    TprB,
    /// Equal TPR, FPR_A exceeds FPR_B.
    FprA,
    /// Equal TPR, FPR_B exceeds FPR_A.
    FprB,
}

/// Unthresholded comparison of group rates: a difference counts as unequal
/// once it leaves the neutral band.
pub fn direction(rates: &GroupRates) -> Option<Direction> {
    let dt = rates.tpr_diff()?;
    if dt >= NEUTRAL_BAND {
        return Some(Direction::TprA);
    }
    if -dt >= NEUTRAL_BAND {
        return Some(Direction::TprB);
    }
    let df = rates.fpr_diff()?;
    if df >= NEUTRAL_BAND {
        Some(Direction::FprA)
    } else if -df >= NEUTRAL_BAND {
        Some(Direction::FprB)
    } else {
        None
    }
}

/// Everything recorded about one audited occupation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationAudit {
    pub occupation: String,
    pub rates: GroupRates,
    pub equal_opportunity_gap: Option<f64>,
    pub equalized_odds_gap: Option<f64>,
    pub metrics: Option<ClassificationMetrics>,
    pub label: BiasLabel,
}

impl OccupationAudit {
    pub fn new(occupation: String, rates: GroupRates, metrics: Option<ClassificationMetrics>, label: BiasLabel) -> Self {
        OccupationAudit {
            occupation,
            equal_opportunity_gap: equal_opportunity_gap(&rates),
            equalized_odds_gap: equalized_odds_gap(&rates),
            rates,
            metrics,
            label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, Group};
    use crate::linkclf::Partition;
    use proptest::prelude::*;

    fn row(group: Group, label: bool, predicted: bool) -> PredictionRow {
        PredictionRow {
            entity: EntityId(0),
            group,
            label,
            predicted,
            score: 0.5,
            partition: Partition::Test,
        }
    }

    fn gender(tpr: [f64; 2], fpr: [f64; 2]) -> GroupRates {
        GroupRates::from_rates(Attribute::Gender, tpr, fpr)
    }

    fn thresholds(t1: f64, t2: f64) -> BiasThresholds {
        let s = SpreadStats { mean: 0.0, std: 0.0, count: 0 };
        BiasThresholds { attribute: Attribute::Gender, rule: ThresholdRule::MeanMinusStd, t1, t2, tpr_stats: s, fpr_stats: s }
    }

    #[test]
    fn rates_from_confusion_cells() {
        let rows = [
            row(Group::Male, true, true),
            row(Group::Male, true, false),
            row(Group::Male, false, true),
        ];
        let r = group_rates(&rows, Attribute::Gender);
        assert_eq!(r.tpr[0], Some(0.5));
        assert_eq!(r.fpr[0], Some(1.0));
        assert_eq!(r.tpr[1], None);
        assert_eq!(r.support(), [(2, 1), (0, 0)]);

        let perfect = [
            row(Group::Male, true, true),
            row(Group::Male, false, false),
            row(Group::Female, true, true),
            row(Group::Female, false, false),
        ];
        let r = group_rates(&perfect, Attribute::Gender);
        assert_eq!((r.tpr, r.fpr), ([Some(1.0), Some(1.0)], [Some(0.0), Some(0.0)]));
    }

    #[test]
    fn gaps() {
        assert_eq!(equal_opportunity_gap(&gender([0.9, 0.9], [0.1, 0.1])), Some(0.0));
        let r = gender([0.90, 0.86], [0.15, 0.16]);
        assert!((equal_opportunity_gap(&r).unwrap() - 0.04).abs() < 1e-12);
        assert!((equalized_odds_gap(&r).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(equal_opportunity_gap(&r), equal_opportunity_gap(&r.swapped()));
        assert_eq!(equalized_odds_gap(&gender([0.7, 0.7], [0.2, 0.2])), Some(0.0));
        let mut undefined = r.clone();
        undefined.tpr[1] = None;
        assert_eq!(equal_opportunity_gap(&undefined), None);
        assert_eq!(equalized_odds_gap(&undefined), None);
    }

    #[test]
    fn threshold_arithmetic() {
        let d = [0.1, 0.2, 0.3];
        let g = thresholds_from_diffs(&d, &d, Attribute::Gender).unwrap();
        assert!((g.tpr_stats.std - 0.0816496580927726).abs() < 1e-12);
        assert!((g.t1 - 0.1183503419072274).abs() < 1e-12);
        let a = thresholds_from_diffs(&d, &d, Attribute::Age).unwrap();
        assert!((a.t1 - 0.2816496580927726).abs() < 1e-12);
        let tiny = [0.005, 0.005, 0.005];
        let f = thresholds_from_diffs(&tiny, &tiny, Attribute::Gender).unwrap();
        assert_eq!((f.t1, f.t2), (0.01, 0.01));
        let same = [0.2, 0.2];
        assert_eq!(thresholds_from_diffs(&same, &same, Attribute::Gender).unwrap().t1, 0.2);
        assert!(thresholds_from_diffs(&[0.1], &d, Attribute::Gender).is_err());
    }

    #[test]
    fn thresholds_use_absolute_differences() {
        let rates = [gender([0.9, 0.8], [0.1, 0.2]), gender([0.7, 0.9], [0.3, 0.1]), gender([0.5, 0.8], [0.0, 0.0])];
        let t = compute_thresholds(&rates, Attribute::Gender).unwrap();
        assert!((t.tpr_stats.mean - 0.2).abs() < 1e-12);
    }

    #[test]
    fn categorize_examples() {
        let t = thresholds(0.1, 0.1);
        let l = categorize(&gender([0.9, 0.7], [0.1, 0.1]), &t);
        assert_eq!(l, BiasLabel { category: BiasCategory::GroupABiased, condition: Some(Condition::TprFavoursA) });
        let l = categorize(&gender([0.8, 0.8], [0.3, 0.1]), &t);
        assert_eq!(l.condition, Some(Condition::FprFavoursA));
        let l = categorize_diffs(0.005, 0.004, 0.1, 0.1);
        assert_eq!(l.category, BiasCategory::Neutral);
        let l = categorize_diffs(0.05, 0.02, 0.1, 0.1);
        assert_eq!(l, BiasLabel::UNCLASSIFIED);
        let mut undefined = gender([0.9, 0.1], [0.0, 0.0]);
        undefined.fpr[0] = None;
        assert_eq!(categorize(&undefined, &t), BiasLabel::UNCLASSIFIED);
    }

    #[test]
    fn direction_contrasts() {
        assert_eq!(direction(&gender([0.9, 0.6], [0.0, 0.0])), Some(Direction::TprA));
        assert_eq!(direction(&gender([0.5, 0.8], [0.0, 0.0])), Some(Direction::TprB));
        assert_eq!(direction(&gender([0.5, 0.5], [0.3, 0.1])), Some(Direction::FprA));
        assert_eq!(direction(&gender([0.5, 0.5], [0.1, 0.1])), None);
    }

    proptest! {
        #[test]
        fn swapping_groups_mirrors_label(
            ta in 0u32..=200, tb in 0u32..=200, fa in 0u32..=200, fb in 0u32..=200,
            t1 in 0.01f64..0.5, t2 in 0.01f64..0.5,
        ) {
            let r = gender([ta as f64 * 0.005, tb as f64 * 0.005], [fa as f64 * 0.005, fb as f64 * 0.005]);
            let t = thresholds(t1, t2);
            let a = categorize(&r, &t);
            let b = categorize(&r.swapped(), &t);
            prop_assert_eq!(a.condition.map(Condition::mirrored), b.condition);
        }

        #[test]
        fn zero_gaps_are_neutral(x in 0.0f64..=1.0, y in 0.0f64..=1.0, t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
            let r = gender([x, x], [y, y]);
            prop_assert_eq!(categorize(&r, &thresholds(t1, t2)).category, BiasCategory::Neutral);
        }

        #[test]
        fn equalized_odds_dominates(ta in 0.0f64..=1.0, tb in 0.0f64..=1.0, fa in 0.0f64..=1.0, fb in 0.0f64..=1.0) {
            let r = gender([ta, tb], [fa, fb]);
            prop_assert!(equalized_odds_gap(&r).unwrap() >= equal_opportunity_gap(&r).unwrap());
        }

        #[test]
        fn thresholds_scale_with_differences(d in proptest::collection::vec(0.0f64..1.0, 2..20), c in 0.1f64..10.0) {
            let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
            let a = SpreadStats::of(&d).unwrap();
            let b = SpreadStats::of(&scaled).unwrap();
            for rule in [ThresholdRule::MeanMinusStd, ThresholdRule::MeanPlusStd] {
                prop_assert!((b.cutoff(rule) - c * a.cutoff(rule)).abs() < 1e-9 * (1.0 + c));
            }
        }
    }
}
