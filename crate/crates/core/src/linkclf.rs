//! Occupation link classifier.
//!
//! Each sample is the concatenation `[human | occupation relation | occupation]`
//! of embedding rows; a one-hidden-layer perceptron predicts whether the human
//! holds the occupation.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kg::{EntityId, GeoDataset, Group};
use crate::kge::EmbeddingTable;
use crate::rng;
use crate::splitter::{apportion, OccupationSplit};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleVector {
    pub features: Vec<f64>,
    pub label: bool,
    pub entity: EntityId,
    pub group: Group,
}

/// Positive samples are the hidden holders, negative samples the sampled
/// non-holders. Entities without a group under the split's attribute are
/// skipped.
pub fn assemble_features(
    embeddings: &EmbeddingTable,
    dataset: &GeoDataset,
    split: &OccupationSplit,
) -> Result<Vec<SampleVector>> {
    let g = &dataset.graph;
    let entity_row = |e: EntityId| {
        embeddings
            .entity_vector(e.index())
            .filter(|_| embeddings.entity_names[e.index()] == g.entity_name(e))
            .ok_or_else(|| AuditError::MissingEmbedding(g.entity_name(e).to_owned()))
    };
    let rel = dataset.occupation_relation;
    let rel_row = embeddings
        .relation_vector(rel.index())
        .filter(|_| embeddings.relation_names[rel.index()] == g.relation_name(rel))
        .ok_or_else(|| AuditError::MissingEmbedding(g.relation_name(rel).to_owned()))?;
    let occ_row = entity_row(split.occupation)?;

    let labelled = split
        .hidden_positives
        .iter()
        .map(|&e| (e, true))
        .chain(split.negatives.iter().map(|&e| (e, false)));
    let mut out = Vec::with_capacity(split.hidden_positives.len() + split.negatives.len());
    for (e, label) in labelled {
        let Some(group) = dataset.group_of(e, split.attribute) else {
            continue;
        };
        let mut features = Vec::with_capacity(3 * embeddings.dim());
        features.extend_from_slice(entity_row(e)?);
        features.extend_from_slice(rel_row);
        features.extend_from_slice(occ_row);
        out.push(SampleVector {
            features,
            label,
            entity: e,
            group,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when the training loss improved by less than this over
    /// `patience` epochs.
    pub min_improvement: f64,
    pub patience: usize,
    pub threshold: f64,
    pub train_fraction: f64,
    /// Z-score inputs with training-partition statistics.
    pub standardize: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 100,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            min_improvement: 1e-5,
            patience: 10,
            threshold: 0.5,
            train_fraction: 0.8,
            standardize: true,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(AuditError::InvalidConfig("mlp sizes must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AuditError::InvalidConfig("decision threshold must lie in (0, 1)".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(AuditError::InvalidConfig("train fraction must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AuditError::InvalidConfig("mlp learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Input -> ReLU hidden layer -> logistic output.
///
/// Parameters live in one flat vector laid out as `[W1 | b1 | w2 | b2]`,
/// with `W1` row-major (`hidden x input`).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
    pub threshold: f64,
    /// Applied to raw features before the first layer.
    pub scaler: Option<Standardizer>,
}

/// Per-column `(x - mean) * inv_std`; columns with zero spread map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut n = 0.0;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for x in rows {
            n += 1.0;
            for k in 0..width {
                let d = x[k] - mean[k];
                mean[k] += d / n;
                m2[k] += d * (x[k] - mean[k]);
            }
        }
        let inv_std = m2
            .iter()
            .map(|&v| {
                let sd = if n > 0.0 { (v / n).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Standardizer { mean, inv_std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

/// Maximal runs of columns holding a nonzero value in some row.
fn active_columns(rows: &[Vec<f64>], width: usize) -> Vec<Range<usize>> {
    let active: Vec<bool> = (0..width).map(|k| rows.iter().any(|x| x[k] != 0.0)).collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < width {
        if active[k] {
            let start = k;
            while k < width && active[k] {
                k += 1;
            }
            out.push(start..k);
        } else {
            k += 1;
        }
    }
    out
}

impl MlpModel {
    pub fn new(input: usize, hidden: usize, threshold: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x4d4c_5030]);
        let mut params = vec![0.0; hidden * input + hidden + hidden + 1];
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut params[..hidden * input] {
            *w = r.gen_range(-b1..=b1);
        }
        let w2 = hidden * input + hidden;
        for w in &mut params[w2..w2 + hidden] {
            *w = r.gen_range(-b2..=b2);
        }
        MlpModel {
            input,
            hidden,
            params,
            threshold,
            scaler: None,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        (b1, w2, w2 + self.hidden)
    }

    fn scaled<'a>(&self, x: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.scaler {
            Some(s) => s.apply(x).into(),
            None => x.into(),
        }
    }

    /// Output logit and hidden pre-activations. Columns outside `cols` are
    /// taken to be zero.
    fn forward(&self, x: &[f64], pre: &mut [f64], cols: &[Range<usize>]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut z = p[b2];
        for j in 0..self.hidden {
            let row = &p[j * self.input..(j + 1) * self.input];
            let mut s = p[b1 + j];
            for c in cols {
                s += row[c.clone()].iter().zip(&x[c.clone()]).map(|(w, v)| w * v).sum::<f64>();
            }
            pre[j] = s;
            if s > 0.0 {
                z += p[w2 + j] * s;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        sigmoid(self.forward(&self.scaled(x), &mut pre, &[0..self.input]))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.predict_proba(x) >= self.threshold
    }

    /// Mean binary cross-entropy over the batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[bool]) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| bce_with_logit(self.forward(&self.scaled(x), &mut pre, &[0..self.input]), y))
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean loss and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[bool]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scaled: Vec<_> = xs.iter().map(|x| self.scaled(x)).collect();
        let xs: Vec<&[f64]> = scaled.iter().map(|x| x.as_ref()).collect();
        let loss = self.accumulate_grad(&xs, ys, &mut grad, &[0..self.input]);
        (loss, grad)
    }

    /// Inputs are already scaled; columns outside `cols` must be zero.
    fn accumulate_grad(&self, xs: &[&[f64]], ys: &[bool], grad: &mut [f64], cols: &[Range<usize>]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let n = xs.len() as f64;
        let mut pre = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.forward(x, &mut pre, cols);
            loss += bce_with_logit(z, y);
            let dz = (sigmoid(z) - y as u8 as f64) / n;
            grad[b2] += dz;
            for j in 0..self.hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                grad[w2 + j] += dz * pre[j];
                let dh = dz * self.params[w2 + j];
                grad[b1 + j] += dh;
                let row = &mut grad[j * self.input..(j + 1) * self.input];
                for c in cols {
                    row[c.clone()].iter_mut().zip(&x[c.clone()]).for_each(|(g, v)| *g += dh * v);
                }
            }
        }
        loss / n
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y log σ(z) + (1-y) log(1-σ(z))]`, computed stably.
fn bce_with_logit(z: f64, y: bool) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if y { z } else { 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub entity: EntityId,
    pub group: Group,
    pub label: bool,
    pub predicted: bool,
    pub score: f64,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationPredictions {
    pub occupation: EntityId,
    /// Every sample, tagged with its partition; scores of training rows are
    /// in-sample.
    pub rows: Vec<PredictionRow>,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub warnings: Vec<String>,
}

impl OccupationPredictions {
    pub fn test_rows(&self) -> impl Iterator<Item = &PredictionRow> + '_ {
        self.rows.iter().filter(|r| r.partition == Partition::Test)
    }
}

/// Stratified split by `(label, group)` cell: the test partition holds
/// `round((1 - train_fraction) * n)` samples apportioned over the cells by
/// largest remainder. Returns a test flag per sample.
pub fn stratified_split(samples: &[SampleVector], train_fraction: f64, seed: u64) -> Vec<bool> {
    let mut cells: BTreeMap<(bool, Group), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        cells.entry((s.label, s.group)).or_default().push(i);
    }
    let sizes: Vec<usize> = cells.values().map(Vec::len).collect();
    let test_total = (((1.0 - train_fraction) * samples.len() as f64).round() as usize).min(samples.len());
    let quota = apportion(&sizes, test_total);
    let mut is_test = vec![false; samples.len()];
    for (c, ((label, group), members)) in cells.into_iter().enumerate() {
        let mut r = rng::stream(seed, &[0x5350_4c54, label as u64, group as u64]);
        let mut members = members;
        members.shuffle(&mut r);
        for &i in &members[..quota[c]] {
            is_test[i] = true;
        }
    }
    is_test
}

/// Trains one occupation's classifier on the training partition and scores
/// every sample.
pub fn train_mlp(
    occupation: EntityId,
    samples: &[SampleVector],
    config: &MlpConfig,
    seed: u64,
) -> Result<(MlpModel, OccupationPredictions)> {
    config.validate()?;
    let Some(first) = samples.first() else {
        return Err(AuditError::InsufficientData("no samples".into()));
    };
    let input = first.features.len();
    if samples.iter().any(|s| s.features.len() != input) {
        return Err(AuditError::DimensionMismatch("samples have differing feature lengths".into()));
    }
    let is_test = stratified_split(samples, config.train_fraction, seed);
    let train: Vec<usize> = (0..samples.len()).filter(|&i| !is_test[i]).collect();
    for label in [true, false] {
        let n = train.iter().filter(|&&i| samples[i].label == label).count();
        if n < 2 {
            return Err(AuditError::InsufficientData(format!(
                "training partition has {n} samples with label {}",
                label as u8
            )));
        }
    }

    let mut warnings = Vec::new();
    let mut groups: Vec<Group> = samples.iter().map(|s| s.group).collect();
    groups.sort_unstable();
    groups.dedup();
    for g in groups {
        if !(0..samples.len()).any(|i| is_test[i] && samples[i].group == g) {
            warnings.push(format!("test partition has no {} members", g.as_str()));
        }
    }

    let mut model = MlpModel::new(input, config.hidden, config.threshold, seed);
    if config.standardize {
        model.scaler = Some(Standardizer::fit(train.iter().map(|&i| samples[i].features.as_slice()), input));
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| model.scaled(&s.features).into_owned()).collect();
    // Zero columns contribute nothing to the forward pass or the gradient.
    let train_inputs: Vec<Vec<f64>> = train.iter().map(|&i| inputs[i].clone()).collect();
    let cols = active_columns(&train_inputs, input);
    drop(train_inputs);
    let mut r = rng::stream(seed, &[0x4550_4f43]);
    let mut order = train.clone();
    let mut losses: Vec<f64> = Vec::new();
    let mut grad = vec![0.0; model.params.len()];
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<bool> = batch.iter().map(|&i| samples[i].label).collect();
            grad.fill(0.0);
            total += model.accumulate_grad(&xs, &ys, &mut grad, &cols) * batch.len() as f64;
            model
                .params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= config.learning_rate * g);
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(AuditError::Diverged(mean));
        }
        losses.push(mean);
        if epoch >= config.patience && losses[epoch - config.patience] - mean < config.min_improvement {
            break;
        }
    }

    let rows = samples
        .iter()
        .zip(&is_test)
        .map(|(s, &test)| {
            let score = model.predict_proba(&s.features);
            PredictionRow {
                entity: s.entity,
                group: s.group,
                label: s.label,
                predicted: score >= model.threshold,
                score,
                partition: if test { Partition::Test } else { Partition::Train },
            }
        })
        .collect();
    let predictions = OccupationPredictions {
        occupation,
        rows,
        epochs_run: losses.len(),
        final_train_loss: *losses.last().unwrap(),
        warnings,
    };
    Ok((model, predictions))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// `None` when the test set holds a single class.
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by direct pair counting.
pub fn auc_pairwise(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positive {
        for n in negative {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (positive.len() * negative.len()) as f64)
}

/// Mann-Whitney form of the AUC using mid-ranks.
pub fn auc_rank(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Accuracy, F1 on label 1 and AUC over the test partition.
pub fn summarize_metrics(predictions: &OccupationPredictions) -> Result<ClassificationMetrics> {
    metrics_from_rows(predictions.test_rows())
}

pub fn metrics_from_rows<'a>(rows: impl Iterator<Item = &'a PredictionRow>) -> Result<ClassificationMetrics> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in rows {
        match (r.label, r.predicted) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
        if r.label {
            pos.push(r.score);
        } else {
            neg.push(r.score);
        }
    }
    let total = tp + fp + fn_ + tn;
    if total == 0 {
        return Err(AuditError::InsufficientData("empty test partition".into()));
    }
    let accuracy = (tp + tn) as f64 / total as f64;
    let both = !pos.is_empty() && !neg.is_empty();
    let f1 = both.then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    Ok(ClassificationMetrics {
        accuracy,
        f1,
        auc: auc_pairwise(&pos, &neg),
    })
}

/// `occupation,entity,group,label,pred,score` rows for the test partition.
pub fn write_predictions_csv<W: Write>(
    w: W,
    dataset: &GeoDataset,
    predictions: &[OccupationPredictions],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["occupation", "entity", "group", "label", "pred", "score"])?;
    let g = &dataset.graph;
    for p in predictions {
        for r in p.test_rows() {
            out.write_record([
                g.entity_name(p.occupation),
                g.entity_name(r.entity),
                r.group.as_str(),
                if r.label { "1" } else { "0" },
                if r.predicted { "1" } else { "0" },
                &format!("{}", r.score),
            ])?;
        }
    }
    out.flush().map_err(|e| AuditError::io("<predictions>", e))?;
    Ok(())
}
