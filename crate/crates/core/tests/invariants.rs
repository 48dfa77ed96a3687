use auditlp::fairness::{categorize, BiasCategory, BiasThresholds, GroupRates, SpreadStats, ThresholdRule};
use auditlp::kg::{Attribute, EntityId, RelationId, Triple};
use auditlp::kge::{tail_ranks, EmbeddingTable, KgeParams, Norm, Protocol, Scorer};
use auditlp::pipeline::{load_dataset, save_dataset};
use auditlp::synthgen::{generate, SynthConfig};
use proptest::prelude::*;

fn table(ne: usize, nr: usize, dim: usize, values: &[i8]) -> EmbeddingTable {
    let mut params = KgeParams::zeros(dim, ne, nr);
    let mut it = values.iter().cycle();
    for x in params.entities.iter_mut().chain(params.relations.iter_mut()) {
        *x = *it.next().unwrap() as f64;
    }
    EmbeddingTable {
        params,
        entity_names: (0..ne).map(|i| format!("e{i}")).collect(),
        relation_names: (0..nr).map(|i| format!("r{i}")).collect(),
        training: None,
    }
}

fn triple(h: usize, r: usize, t: usize) -> Triple {
    Triple {
        head: EntityId(h as u32),
        relation: RelationId(r as u32),
        tail: EntityId(t as u32),
    }
}

fn thresholds(t1: f64, t2: f64) -> BiasThresholds {
    let s = SpreadStats {
        mean: 0.0,
        std: 0.0,
        count: 0,
    };
    BiasThresholds {
        attribute: Attribute::Gender,
        rule: ThresholdRule::MeanMinusStd,
        t1,
        t2,
        tpr_stats: s,
        fpr_stats: s,
    }
}

proptest! {
    #[test]
    fn filtered_ranks_never_exceed_raw_ranks(
        ne in 2usize..30,
        values in prop::collection::vec(-2i8..=2, 1..64),
        edges in prop::collection::vec((0usize..30, 0usize..2, 0usize..30), 1..40),
        scorer in prop::sample::select(vec![Scorer::TransE(Norm::L1), Scorer::TransE(Norm::L2), Scorer::DistMult]),
    ) {
        let emb = table(ne, 2, 3, &values);
        let known: Vec<Triple> = edges.iter().map(|&(h, r, t)| triple(h % ne, r, t % ne)).collect();
        let raw = tail_ranks(&emb, scorer, &known, &known, Protocol::Raw);
        let filtered = tail_ranks(&emb, scorer, &known, &known, Protocol::Filtered);
        for (r, f) in raw.iter().zip(&filtered) {
            prop_assert!(*f >= 1.0 && f <= r && *r <= ne as f64);
            prop_assert_eq!((r * 2.0).fract(), 0.0);
        }
    }

    #[test]
    fn swapping_groups_mirrors_the_category(
        tpr in prop::array::uniform2(0.0f64..=1.0),
        fpr in prop::array::uniform2(0.0f64..=1.0),
        t1 in 0.01f64..0.3,
        t2 in 0.01f64..0.3,
    ) {
        let rates = GroupRates::from_rates(Attribute::Gender, tpr, fpr);
        let th = thresholds(t1, t2);
        let a = categorize(&rates, &th).category;
        let b = categorize(&rates.swapped(), &th).category;
        let mirrored = match a {
            BiasCategory::GroupABiased => BiasCategory::GroupBBiased,
            BiasCategory::GroupBBiased => BiasCategory::GroupABiased,
            other => other,
        };
        prop_assert_eq!(b, mirrored);
    }

    #[test]
    fn equal_rates_are_neutral(tpr in 0.0f64..=1.0, fpr in 0.0f64..=1.0, t in 0.01f64..0.3) {
        let label = categorize(&GroupRates::from_rates(Attribute::Age, [tpr; 2], [fpr; 2]), &thresholds(t, t));
        prop_assert_eq!(label.category, BiasCategory::Neutral);
    }
}

#[test]
fn saved_datasets_load_back_unchanged() {
    let corpus = generate(&SynthConfig {
        geographies: 2,
        humans_per_geography: 200,
        occupations: 5,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (geo, ds) in corpus.geographies.iter().zip(corpus.datasets().unwrap()) {
        let path = dir.path().join(&geo.code);
        let rules = geo.rules.clone();
        save_dataset(&path, &ds, &rules).unwrap();
        let (back, back_rules) = load_dataset(&path).unwrap();
        assert_eq!(back_rules, rules);
        assert_eq!(back.graph.raw_triples(), ds.graph.raw_triples());
        assert_eq!(back.humans.len(), ds.humans.len());
        for (&e, m) in &ds.meta {
            let name = ds.graph.entity_name(e);
            let b = back.graph.entity(name).and_then(|id| back.meta.get(&id)).unwrap();
            assert_eq!((b.gender, b.birth_year), (m.gender, m.birth_year));
        }
    }
}
