//! Edge hiding: for every eligible occupation, a group-stratified fraction of
//! its holders lose their occupation edge in the embedding-training graph and
//! become the positive classification samples; an equal number of non-holders
//! are drawn as negatives.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kg::{Attribute, EntityId, GeoDataset, Group, KnowledgeGraph, Triple};
use crate::rng;

/// Minimum holders per group for an occupation to be audited.
pub const MIN_HOLDERS_PER_GROUP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupationSplit {
    pub occupation: EntityId,
    pub attribute: Attribute,
    pub hidden_positives: Vec<EntityId>,
    pub retained_positives: Vec<EntityId>,
    pub negatives: Vec<EntityId>,
}

#[derive(Debug, Clone)]
pub struct FilteredDataset<'a> {
    pub base: &'a GeoDataset,
    pub training_graph: KnowledgeGraph,
    pub splits: Vec<OccupationSplit>,
    pub attribute: Attribute,
    pub fraction: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

fn holders_by_group(dataset: &GeoDataset, occupation: EntityId, attribute: Attribute) -> [Vec<EntityId>; 2] {
    let mut groups = [Vec::new(), Vec::new()];
    for h in dataset.holders(occupation) {
        if let Some(g) = dataset.group_of(h, attribute) {
            groups[g.slot()].push(h);
        }
    }
    groups
}

/// Occupations with at least two holders in each group of `attribute`.
pub fn eligible_occupations(dataset: &GeoDataset, attribute: Attribute) -> Vec<EntityId> {
    let mut counts: BTreeMap<EntityId, [usize; 2]> = BTreeMap::new();
    let mut seen = HashSet::new();
    for &p in dataset.graph.relation_positions(dataset.occupation_relation) {
        let t = dataset.graph.triples()[p as usize];
        if !seen.insert((t.head, t.tail)) {
            continue;
        }
        if let Some(g) = dataset.group_of(t.head, attribute) {
            counts.entry(t.tail).or_default()[g.slot()] += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| c.iter().all(|&n| n >= MIN_HOLDERS_PER_GROUP))
        .map(|(o, _)| o)
        .collect()
}

/// Largest-remainder apportionment of `seats` over groups of the given sizes.
/// Equal remainders go to the smaller group first, then to the lower index.
pub fn apportion(sizes: &[usize], seats: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let seats = seats.min(total);
    // quota_i = seats * size_i / total, compared exactly via integer remainders
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| seats * s / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = seats * sizes[a] % total;
        let rb = seats * sizes[b] % total;
        rb.cmp(&ra).then(sizes[a].cmp(&sizes[b])).then(a.cmp(&b))
    });
    let mut left = seats - alloc.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Hidden count per group: largest remainder, then at least one hidden member
/// for any group holding two or more.
pub fn stratified_quota(group_sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let holders = group_sizes[0] + group_sizes[1];
    let seats = ((fraction * holders as f64).round() as usize).min(holders);
    let a = apportion(&group_sizes, seats);
    let mut quota = [a[0], a[1]];
    if seats >= 2 {
        for g in 0..2 {
            let other = 1 - g;
            if quota[g] == 0 && group_sizes[g] >= MIN_HOLDERS_PER_GROUP && quota[other] > 1 {
                quota[g] = 1;
                quota[other] -= 1;
            }
        }
    }
    quota
}

/// Selects the holders of `occupation` whose occupation edge is hidden.
/// Negatives are left empty; see [`sample_negatives`].
pub fn hide_edges(
    dataset: &GeoDataset,
    occupation: EntityId,
    fraction: f64,
    seed: u64,
    attribute: Attribute,
) -> Result<OccupationSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AuditError::InvalidConfig(format!("hide fraction {fraction} not in (0, 1)")));
    }
    let groups = holders_by_group(dataset, occupation, attribute);
    let quota = stratified_quota([groups[0].len(), groups[1].len()], fraction);
    let occ_label = rng::label(dataset.graph.entity_name(occupation));
    let mut hidden = Vec::new();
    let mut retained = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        let mut r = rng::stream(seed, &[occ_label, 0x4849_4445, g as u64]);
        let picked: BTreeSet<usize> = rand::seq::index::sample(&mut r, members.len(), quota[g]).into_iter().collect();
        for (i, &m) in members.iter().enumerate() {
            if picked.contains(&i) {
                hidden.push(m);
            } else {
                retained.push(m);
            }
        }
    }
    hidden.sort_unstable();
    retained.sort_unstable();
    Ok(OccupationSplit {
        occupation,
        attribute,
        hidden_positives: hidden,
        retained_positives: retained,
        negatives: Vec::new(),
    })
}

/// Uniform sample of humans with a known group who do not hold `occupation`.
/// Returns the sample and a warning when fewer than `count` candidates exist.
pub fn sample_negatives(
    dataset: &GeoDataset,
    occupation: EntityId,
    count: usize,
    seed: u64,
    attribute: Attribute,
) -> (Vec<EntityId>, Option<String>) {
    let holders: HashSet<EntityId> = dataset.holders(occupation).into_iter().collect();
    let candidates: Vec<EntityId> = dataset
        .humans
        .iter()
        .copied()
        .filter(|h| !holders.contains(h) && dataset.group_of(*h, attribute).is_some())
        .collect();
    let occ_name = dataset.graph.entity_name(occupation);
    if candidates.len() < count {
        let warning = format!(
            "{occ_name}: only {} negative candidates for {count} requested",
            candidates.len()
        );
        return (candidates, Some(warning));
    }
    let mut r = rng::stream(seed, &[rng::label(occ_name), 0x4e45_4753]);
    let mut picked: Vec<EntityId> = rand::seq::index::sample(&mut r, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    (picked, None)
}

/// Applies edge hiding and negative sampling to every eligible occupation.
pub fn build_filtered_dataset(
    dataset: &GeoDataset,
    attribute: Attribute,
    fraction: f64,
    seed: u64,
) -> Result<FilteredDataset<'_>> {
    let occupations = eligible_occupations(dataset, attribute);
    if occupations.is_empty() {
        return Err(AuditError::NoEligibleOccupations(attribute.to_string()));
    }
    let mut splits = Vec::with_capacity(occupations.len());
    let mut warnings = Vec::new();
    let mut removed: HashSet<Triple> = HashSet::new();
    for occ in occupations {
        let mut split = hide_edges(dataset, occ, fraction, seed, attribute)?;
        let (negatives, warning) = sample_negatives(dataset, occ, split.hidden_positives.len(), seed, attribute);
        warnings.extend(warning);
        split.negatives = negatives;
        for &h in &split.hidden_positives {
            removed.insert(Triple {
                head: h,
                relation: dataset.occupation_relation,
                tail: occ,
            });
        }
        splits.push(split);
    }
    let training_graph = dataset.graph.retain(|t| !removed.contains(t));
    Ok(FilteredDataset {
        base: dataset,
        training_graph,
        splits,
        attribute,
        fraction,
        seed,
        warnings,
    })
}

/// JSON export of a filtered dataset's splits, in raw identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema: String,
    pub geography: String,
    pub attribute: Attribute,
    pub fraction: f64,
    pub seed: u64,
    pub occupations: Vec<SplitRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub occupation: String,
    pub hidden: Vec<String>,
    pub retained: Vec<String>,
    pub negatives: Vec<String>,
}

impl FilteredDataset<'_> {
    pub fn manifest(&self) -> SplitManifest {
        let g = &self.base.graph;
        let names = |ids: &[EntityId]| ids.iter().map(|&e| g.entity_name(e).to_owned()).collect();
        SplitManifest {
            schema: crate::REPORT_SCHEMA.into(),
            geography: self.base.geography.clone(),
            attribute: self.attribute,
            fraction: self.fraction,
            seed: self.seed,
            occupations: self
                .splits
                .iter()
                .map(|s| SplitRecord {
                    occupation: g.entity_name(s.occupation).to_owned(),
                    hidden: names(&s.hidden_positives),
                    retained: names(&s.retained_positives),
                    negatives: names(&s.negatives),
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    /// Rebuilds a filtered dataset from an exported manifest.
    pub fn from_manifest<'a>(base: &'a GeoDataset, manifest: &SplitManifest) -> Result<FilteredDataset<'a>> {
        let g = &base.graph;
        let lookup = |name: &str| {
            g.entity(name)
                .ok_or_else(|| AuditError::Parse(format!("split manifest names unknown entity `{name}`")))
        };
        let ids = |names: &[String]| names.iter().map(|n| lookup(n)).collect::<Result<Vec<_>>>();
        let mut splits = Vec::new();
        let mut removed = HashSet::new();
        for rec in &manifest.occupations {
            let occ = lookup(&rec.occupation)?;
            let split = OccupationSplit {
                occupation: occ,
                attribute: manifest.attribute,
                hidden_positives: ids(&rec.hidden)?,
                retained_positives: ids(&rec.retained)?,
                negatives: ids(&rec.negatives)?,
            };
            for &h in &split.hidden_positives {
                removed.insert(Triple {
                    head: h,
                    relation: base.occupation_relation,
                    tail: occ,
                });
            }
            splits.push(split);
        }
        Ok(FilteredDataset {
            base,
            training_graph: base.graph.retain(|t| !removed.contains(t)),
            splits,
            attribute: manifest.attribute,
            fraction: manifest.fraction,
            seed: manifest.seed,
            warnings: manifest.warnings.clone(),
        })
    }
}

/// Group composition of a list of humans.
pub fn group_counts(dataset: &GeoDataset, humans: &[EntityId], attribute: Attribute) -> [usize; 2] {
    let mut c = [0; 2];
    for &h in humans {
        if let Some(g) = dataset.group_of(h, attribute) {
            c[g.slot()] += 1;
        }
    }
    c
}

pub fn group_name(attribute: Attribute, slot: usize) -> Group {
    attribute.groups()[slot]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_geo_dataset, FilterRules};
    use crate::kg::{intern_triples, RawTriple};

    /// Dataset with one occupation "Q900" held by the given genders
    /// (true = male) and `extra` non-holders.
    fn dataset(holders: &[(bool, i32)], extra: usize) -> GeoDataset {
        let mut raw = Vec::new();
        let mut push = |i: usize, male: bool, year: i32, occ: bool| {
            let h = format!("Q{}", 1000 + i);
            raw.push(RawTriple::new(&h, "P31", "Q5"));
            raw.push(RawTriple::new(&h, "P27", "Q30"));
            raw.push(RawTriple::new(&h, "P21", if male { "Q6581097" } else { "Q6581072" }));
            raw.push(RawTriple::new(&h, "P569", year.to_string()));
            if occ {
                raw.push(RawTriple::new(&h, "P106", "Q900"));
            }
        };
        for (i, &(male, year)) in holders.iter().enumerate() {
            push(i, male, year, true);
        }
        for j in 0..extra {
            push(holders.len() + j, j % 2 == 0, 1990, false);
        }
        let g = intern_triples(&raw).unwrap();
        build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap()
    }

    fn genders(m: usize, f: usize) -> Vec<(bool, i32)> {
        (0..m).map(|_| (true, 1990)).chain((0..f).map(|_| (false, 1990))).collect()
    }

    #[test]
    fn eligibility_boundaries() {
        let ds = dataset(&genders(2, 2), 0);
        assert_eq!(eligible_occupations(&ds, Attribute::Gender).len(), 1);
        let ds = dataset(&genders(5, 1), 0);
        assert!(eligible_occupations(&ds, Attribute::Gender).is_empty());
        // 3 young, 2 old, 4 excluded (age 50)
        let ages: Vec<(bool, i32)> = [1990, 1991, 1992, 1950, 1951, 1974, 1974, 1974, 1974]
            .iter()
            .map(|&y| (true, y))
            .collect();
        let ds = dataset(&ages, 0);
        assert_eq!(eligible_occupations(&ds, Attribute::Age).len(), 1);
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(stratified_quota([6, 4], 0.5), [3, 2]);
        // 2.5 / 1.5 with equal remainders: the smaller group wins the tie
        assert_eq!(stratified_quota([5, 3], 0.5), [2, 2]);
        assert_eq!(apportion(&[3, 5], 4), vec![2, 2]);
    }

    #[test]
    fn minority_group_always_hidden() {
        // quota for the minority is 0.1875 -> bumped to 1
        assert_eq!(stratified_quota([30, 2], 0.1), [2, 1]);
    }

    /// Minimises |hidden_a - quota_a| over all feasible splits; ties broken
    /// toward giving the extra seat to the smaller group.
    fn brute_force_apportion(a: usize, b: usize, seats: usize) -> (usize, usize) {
        let x = (a + b) as f64;
        let qa = seats as f64 * a as f64 / x;
        let mut best: Option<(f64, usize)> = None;
        for ha in 0..=seats.min(a) {
            let hb = seats - ha;
            if hb > b {
                continue;
            }
            let d = (ha as f64 - qa).abs();
            let better = match best {
                None => true,
                Some((bd, bha)) => {
                    if (d - bd).abs() < 1e-9 {
                        // tie: prefer the allocation favouring the smaller group
                        if a < b { ha > bha } else if b < a { ha < bha } else { ha > bha }
                    } else {
                        d < bd
                    }
                }
            };
            if better {
                best = Some((d, ha));
            }
        }
        let ha = best.unwrap().1;
        (ha, seats - ha)
    }

    #[test]
    fn apportion_matches_brute_force() {
        for a in 0..25 {
            for b in 0..25 {
                if a + b == 0 {
                    continue;
                }
                for seats in 0..=(a + b) {
                    let got = apportion(&[a, b], seats);
                    assert_eq!((got[0], got[1]), brute_force_apportion(a, b, seats), "a={a} b={b} seats={seats}");
                }
            }
        }
    }

    #[test]
    fn hide_is_deterministic_and_stratified() {
        let ds = dataset(&genders(6, 4), 20);
        let occ = ds.graph.entity("Q900").unwrap();
        let s1 = hide_edges(&ds, occ, 0.5, 7, Attribute::Gender).unwrap();
        let s2 = hide_edges(&ds, occ, 0.5, 7, Attribute::Gender).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(group_counts(&ds, &s1.hidden_positives, Attribute::Gender), [3, 2]);
        assert_eq!(s1.retained_positives.len(), 5);
    }

    #[test]
    fn negatives_cardinality_and_shortfall() {
        let ds = dataset(&genders(3, 3), 100);
        let occ = ds.graph.entity("Q900").unwrap();
        let (neg, warn) = sample_negatives(&ds, occ, 5, 1, Attribute::Gender);
        assert_eq!(neg.len(), 5);
        assert_eq!(neg.iter().collect::<HashSet<_>>().len(), 5);
        assert!(warn.is_none());
        let holders: HashSet<_> = ds.holders(occ).into_iter().collect();
        assert!(neg.iter().all(|n| !holders.contains(n)));

        let ds = dataset(&genders(3, 3), 3);
        let (neg, warn) = sample_negatives(&ds, occ, 5, 1, Attribute::Gender);
        assert_eq!(neg.len(), 3);
        assert!(warn.is_some());
    }

    #[test]
    fn filtered_dataset_removes_hidden_edges_only() {
        let ds = dataset(&genders(2, 2), 10);
        let fd = build_filtered_dataset(&ds, Attribute::Gender, 0.5, 3).unwrap();
        assert_eq!(fd.training_graph.len() + 2, ds.graph.len());
        let hidden: usize = fd.splits.iter().map(|s| s.hidden_positives.len()).sum();
        assert_eq!(fd.training_graph.len() + hidden, ds.graph.len());
    }

    #[test]
    fn other_occupation_survives() {
        let mut raw = Vec::new();
        for i in 0..8 {
            let h = format!("Q{}", 1000 + i);
            raw.push(RawTriple::new(&h, "P31", "Q5"));
            raw.push(RawTriple::new(&h, "P27", "Q30"));
            raw.push(RawTriple::new(&h, "P21", if i % 2 == 0 { "Q6581097" } else { "Q6581072" }));
            raw.push(RawTriple::new(&h, "P106", "Q900"));
            raw.push(RawTriple::new(&h, "P106", "Q901"));
        }
        let g = intern_triples(&raw).unwrap();
        let ds = build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap();
        let fd = build_filtered_dataset(&ds, Attribute::Gender, 0.5, 11).unwrap();
        let p = ds.occupation_relation;
        for s in &fd.splits {
            let other = fd.splits.iter().find(|o| o.occupation != s.occupation).unwrap();
            for &h in &s.hidden_positives {
                assert!(!fd.training_graph.contains(h, p, s.occupation));
                if !other.hidden_positives.contains(&h) {
                    assert!(fd.training_graph.contains(h, p, other.occupation));
                }
            }
        }
    }

    #[test]
    fn manifest_round_trip() {
        let ds = dataset(&genders(5, 4), 12);
        let fd = build_filtered_dataset(&ds, Attribute::Gender, 0.5, 5).unwrap();
        let json = serde_json::to_string(&fd.manifest()).unwrap();
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        let rebuilt = FilteredDataset::from_manifest(&ds, &back).unwrap();
        assert_eq!(rebuilt.splits, fd.splits);
        assert_eq!(rebuilt.training_graph.triples(), fd.training_graph.triples());
    }

    #[test]
    fn no_eligible_occupation_is_an_error() {
        let ds = dataset(&genders(5, 1), 3);
        assert!(matches!(
            build_filtered_dataset(&ds, Attribute::Gender, 0.5, 1),
            Err(AuditError::NoEligibleOccupations(_))
        ));
    }
}
