//! End-to-end audit of one or more geographies, plus the on-disk forms of
//! datasets and reports used by the command-line stages.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::fairness::{
    categorize, compute_thresholds, group_rates, BiasLabel, BiasThresholds, GroupRates, OccupationAudit,
};
use crate::ingest::{apply_attribute_overrides, build_geo_dataset, parse_triple_file, write_tsv3, FilterRules, TripleFormat};
use crate::kg::{intern_triples, AgeGroup, Attribute, Gender, GeoDataset, Triple};
use crate::kge::{self, EmbeddingTable, KgeConfig, Protocol, RankingReport};
use crate::linkclf::{assemble_features, summarize_metrics, train_mlp, ClassificationMetrics, MlpConfig, OccupationPredictions};
use crate::macro_analysis::{
    cluster_attribute_summary, geography_vector, merge_to, opposite_bias, pool_cluster_rates, spectral_cluster,
    ClusterConfig, ClusterModel, ClusterSummary, CountryAttributes, GeographyVector, OppositeBiasTable,
};
use crate::rng::{derive_seed, label};
use crate::splitter::{build_filtered_dataset, eligible_occupations, FilteredDataset};
use crate::REPORT_SCHEMA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    /// Thresholds from each geography's own occupations.
    #[default]
    PerGeography,
    /// One pair of thresholds from all geographies' occupations.
    Pooled,
}

impl std::str::FromStr for ThresholdScope {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "per-geography" => Ok(ThresholdScope::PerGeography),
            "pooled" => Ok(ThresholdScope::Pooled),
            other => Err(AuditError::Parse(format!("unknown threshold scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub attribute: Attribute,
    pub fraction: f64,
    pub seed: u64,
    pub kge: KgeConfig,
    pub mlp: MlpConfig,
    pub threshold_scope: ThresholdScope,
    /// Worker threads for per-occupation classifiers; 0 uses every core.
    pub threads: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            attribute: Attribute::Gender,
            fraction: 0.5,
            seed: 0,
            kge: KgeConfig::default(),
            mlp: MlpConfig::default(),
            threshold_scope: ThresholdScope::PerGeography,
            threads: 0,
        }
    }
}

/// Held-out occupation triples: every hidden holder paired with its
/// occupation.
pub fn hidden_triples(filtered: &FilteredDataset<'_>) -> Vec<Triple> {
    let rel = filtered.base.occupation_relation;
    filtered
        .splits
        .iter()
        .flat_map(|s| {
            s.hidden_positives.iter().map(move |&h| Triple {
                head: h,
                relation: rel,
                tail: s.occupation,
            })
        })
        .collect()
}

/// Embedding training on the filtered graph followed by filtered ranking of
/// the hidden occupation triples.
pub fn train_embeddings(filtered: &FilteredDataset<'_>, config: &KgeConfig) -> Result<(EmbeddingTable, RankingReport)> {
    let table = kge::train(&filtered.training_graph, config)?;
    let test = hidden_triples(filtered);
    let ranking = kge::evaluate_ranking(
        &table,
        config.scorer(),
        &test,
        filtered.base.graph.triples(),
        Protocol::Filtered,
    )?;
    Ok((table, ranking))
}

/// Classifier outcome for one occupation before labelling.
#[derive(Debug, Clone)]
pub struct OccupationOutcome {
    pub occupation: String,
    pub rates: GroupRates,
    pub metrics: Option<ClassificationMetrics>,
    pub predictions: Option<OccupationPredictions>,
    pub warnings: Vec<String>,
}

pub fn mlp_seed(seed: u64, geography: &str, occupation: &str) -> u64 {
    derive_seed(seed, &[label("mlp"), label(geography), label(occupation)])
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AuditError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains one classifier per split and measures group rates on the test
/// partitions. Occupations whose samples cannot support a classifier keep
/// undefined rates.
pub fn classify_occupations(
    filtered: &FilteredDataset<'_>,
    embeddings: &EmbeddingTable,
    mlp: &MlpConfig,
    seed: u64,
    threads: usize,
) -> Result<Vec<OccupationOutcome>> {
    let base = filtered.base;
    let attribute = filtered.attribute;
    let run = || {
        filtered
            .splits
            .par_iter()
            .map(|split| -> Result<OccupationOutcome> {
                let name = base.graph.entity_name(split.occupation).to_owned();
                let samples = assemble_features(embeddings, base, split)?;
                let s = mlp_seed(seed, &base.geography, &name);
                match train_mlp(split.occupation, &samples, mlp, s) {
                    Ok((_, predictions)) => Ok(OccupationOutcome {
                        rates: group_rates(predictions.test_rows(), attribute),
                        metrics: summarize_metrics(&predictions).ok(),
                        warnings: predictions.warnings.iter().map(|w| format!("{name}: {w}")).collect(),
                        predictions: Some(predictions),
                        occupation: name,
                    }),
                    Err(AuditError::InsufficientData(why)) => Ok(OccupationOutcome {
                        rates: GroupRates::from_confusion(attribute, Default::default()),
                        metrics: None,
                        predictions: None,
                        warnings: vec![format!("{name}: no classifier ({why})")],
                        occupation: name,
                    }),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()
    };
    with_pool(threads, run)?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub occupations_with_metrics: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    pub mean_auc: Option<f64>,
    pub mean_equal_opportunity_gap: Option<f64>,
    pub mean_equalized_odds_gap: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricSummary {
    pub fn of(audits: &[OccupationAudit]) -> Self {
        let m = || audits.iter().filter_map(|a| a.metrics);
        MetricSummary {
            occupations_with_metrics: m().count(),
            mean_accuracy: mean(m().map(|x| x.accuracy)),
            mean_f1: mean(m().filter_map(|x| x.f1)),
            mean_auc: mean(m().filter_map(|x| x.auc)),
            mean_equal_opportunity_gap: mean(audits.iter().filter_map(|a| a.equal_opportunity_gap)),
            mean_equalized_odds_gap: mean(audits.iter().filter_map(|a| a.equalized_odds_gap)),
        }
    }
}

/// Audit report for one geography and attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeographyAudit {
    pub schema: String,
    pub geography: String,
    pub attribute: Attribute,
    pub model: kge::KgeModel,
    pub reference_year: i32,
    pub seed: u64,
    pub threshold_scope: ThresholdScope,
    pub thresholds: Option<BiasThresholds>,
    pub occupations: Vec<OccupationAudit>,
    pub summary: MetricSummary,
    pub vector: GeographyVector,
    pub warnings: Vec<String>,
}

impl GeographyAudit {
    pub fn rates_by_occupation(&self) -> BTreeMap<String, GroupRates> {
        self.occupations.iter().map(|o| (o.occupation.clone(), o.rates.clone())).collect()
    }
}

/// Classifier outcomes of one geography awaiting thresholds.
#[derive(Debug, Clone)]
pub struct ClassifiedGeography {
    pub geography: String,
    pub reference_year: i32,
    pub outcomes: Vec<OccupationOutcome>,
    pub warnings: Vec<String>,
}

pub fn label_geography(
    classified: &ClassifiedGeography,
    thresholds: Option<&BiasThresholds>,
    config: &AuditConfig,
) -> GeographyAudit {
    let mut warnings = classified.warnings.clone();
    for o in &classified.outcomes {
        warnings.extend(o.warnings.iter().cloned());
    }
    if thresholds.is_none() {
        warnings.push("too few occupations with defined rates for thresholds; all left unclassified".into());
    }
    let occupations: Vec<OccupationAudit> = classified
        .outcomes
        .iter()
        .map(|o| {
            let label = thresholds.map_or(BiasLabel::UNCLASSIFIED, |t| categorize(&o.rates, t));
            OccupationAudit::new(o.occupation.clone(), o.rates.clone(), o.metrics, label)
        })
        .collect();
    GeographyAudit {
        schema: REPORT_SCHEMA.into(),
        geography: classified.geography.clone(),
        attribute: config.attribute,
        model: config.kge.model,
        reference_year: classified.reference_year,
        seed: config.seed,
        threshold_scope: config.threshold_scope,
        thresholds: thresholds.cloned(),
        summary: MetricSummary::of(&occupations),
        vector: geography_vector(&classified.geography, occupations.iter().map(|o| &o.label)),
        occupations,
        warnings,
    }
}

/// Thresholds for each geography under the configured scope.
pub fn thresholds_for(classified: &[ClassifiedGeography], config: &AuditConfig) -> Vec<Option<BiasThresholds>> {
    let rates = |c: &ClassifiedGeography| c.outcomes.iter().map(|o| o.rates.clone()).collect::<Vec<_>>();
    match config.threshold_scope {
        ThresholdScope::PerGeography => classified
            .iter()
            .map(|c| compute_thresholds(&rates(c), config.attribute).ok())
            .collect(),
        ThresholdScope::Pooled => {
            let all: Vec<GroupRates> = classified.iter().flat_map(rates).collect();
            let t = compute_thresholds(&all, config.attribute).ok();
            vec![t; classified.len()]
        }
    }
}

/// Everything produced for one geography by the classification stages.
pub struct GeographyRun {
    pub classified: ClassifiedGeography,
    pub embeddings: EmbeddingTable,
    pub ranking: RankingReport,
}

pub fn run_geography(dataset: &GeoDataset, config: &AuditConfig) -> Result<GeographyRun> {
    let filtered = build_filtered_dataset(dataset, config.attribute, config.fraction, config.seed)?;
    let (embeddings, ranking) = train_embeddings(&filtered, &config.kge)?;
    let outcomes = classify_occupations(&filtered, &embeddings, &config.mlp, config.seed, config.threads)?;
    Ok(GeographyRun {
        classified: ClassifiedGeography {
            geography: dataset.geography.clone(),
            reference_year: dataset.reference_year,
            outcomes,
            warnings: filtered.warnings.clone(),
        },
        embeddings,
        ranking,
    })
}

/// Audits every dataset with the same configuration.
pub fn audit_geographies(datasets: &[GeoDataset], config: &AuditConfig) -> Result<Vec<GeographyAudit>> {
    let classified: Vec<ClassifiedGeography> = datasets
        .iter()
        .map(|d| run_geography(d, config).map(|r| r.classified))
        .collect::<Result<_>>()?;
    let thresholds = thresholds_for(&classified, config);
    Ok(classified
        .iter()
        .zip(&thresholds)
        .map(|(c, t)| label_geography(c, t.as_ref(), config))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroConfig {
    pub cluster: ClusterConfig,
    /// Merge clusters down to two before the opposite-bias tables.
    pub merge_gn: bool,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            cluster: ClusterConfig::default(),
            merge_gn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    pub schema: String,
    pub attribute: Attribute,
    pub vectors: Vec<GeographyVector>,
    pub clustering: ClusterModel,
    pub attribute_summary: Option<Vec<ClusterSummary>>,
    pub merge_gn: bool,
    /// Partition used for the opposite-bias tables.
    pub comparison_assignment: Vec<usize>,
    pub opposite_bias: Vec<OppositeBiasTable>,
    pub notes: Vec<String>,
}

pub fn macro_report(
    audits: &[GeographyAudit],
    attributes: Option<&CountryAttributes>,
    config: &MacroConfig,
) -> Result<MacroReport> {
    let Some(first) = audits.first() else {
        return Err(AuditError::InsufficientData("no geography audits".into()));
    };
    let attribute = first.attribute;
    if audits.iter().any(|a| a.attribute != attribute) {
        return Err(AuditError::InvalidConfig("audits mix attributes".into()));
    }
    let mut notes = vec!["cluster-level rates pool test-set confusion counts over member geographies".to_string()];
    let vectors: Vec<GeographyVector> = audits.iter().map(|a| a.vector.clone()).collect();
    let mut cluster = config.cluster.clone();
    if cluster.k_max > vectors.len() {
        notes.push(format!("k_max lowered from {} to {}", cluster.k_max, vectors.len()));
        cluster.k_max = vectors.len();
    }
    let clustering = spectral_cluster(&vectors, &cluster)?;
    let attribute_summary = attributes.map(|a| cluster_attribute_summary(&clustering, a)).transpose()?;
    let compared = if config.merge_gn && clustering.k > 2 {
        merge_to(&clustering, 2)
    } else {
        clustering.clone()
    };
    let rates: Vec<BTreeMap<String, GroupRates>> = audits.iter().map(GeographyAudit::rates_by_occupation).collect();
    let pooled: Vec<BTreeMap<String, GroupRates>> = (0..compared.k)
        .map(|c| {
            let members = compared.assignment.iter().zip(&rates).filter(|(&a, _)| a == c).map(|(_, r)| r);
            pool_cluster_rates(attribute, members)
        })
        .collect();
    let mut opposite = Vec::new();
    for i in 0..compared.k {
        for j in i + 1..compared.k {
            opposite.push(opposite_bias(&pooled[i], &pooled[j], (i, j)));
        }
    }
    Ok(MacroReport {
        schema: REPORT_SCHEMA.into(),
        attribute,
        vectors,
        clustering,
        attribute_summary,
        merge_gn: config.merge_gn,
        comparison_assignment: compared.assignment,
        opposite_bias: opposite,
        notes,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub male: usize,
    pub female: usize,
    pub unknown_gender: usize,
    pub young: usize,
    pub old: usize,
    pub excluded_age: usize,
}

/// Human and occupation counts of an ingested geography.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub schema: String,
    pub geography: String,
    pub reference_year: i32,
    pub humans: usize,
    pub groups: GroupCounts,
    pub triples: usize,
    pub entities: usize,
    pub relations: usize,
    pub occupations: usize,
    pub eligible_gender: usize,
    pub eligible_age: usize,
    pub warnings: Vec<String>,
}

pub fn dataset_stats(ds: &GeoDataset) -> DatasetStats {
    let mut groups = GroupCounts::default();
    for m in ds.meta.values() {
        match m.gender {
            Gender::Male => groups.male += 1,
            Gender::Female => groups.female += 1,
            Gender::Unknown => groups.unknown_gender += 1,
        }
        match m.age_group {
            AgeGroup::Young => groups.young += 1,
            AgeGroup::Old => groups.old += 1,
            AgeGroup::Excluded => groups.excluded_age += 1,
        }
    }
    DatasetStats {
        schema: REPORT_SCHEMA.into(),
        geography: ds.geography.clone(),
        reference_year: ds.reference_year,
        humans: ds.humans.len(),
        groups,
        triples: ds.graph.len(),
        entities: ds.graph.entity_count(),
        relations: ds.graph.relation_count(),
        occupations: ds.occupations().len(),
        eligible_gender: eligible_occupations(ds, Attribute::Gender).len(),
        eligible_age: eligible_occupations(ds, Attribute::Age).len(),
        warnings: ds.warnings.clone(),
    }
}

/// Header of a stored geography dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub geography: String,
    pub reference_year: i32,
    pub rules: FilterRules,
}

pub const DATASET_TRIPLES: &str = "dataset.tsv";
pub const DATASET_META: &str = "meta.csv";
pub const DATASET_HEADER: &str = "dataset.json";
pub const DATASET_STATS: &str = "stats.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| AuditError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the triples, attributes, header and stats of a dataset into `dir`.
pub fn save_dataset(dir: &Path, ds: &GeoDataset, rules: &FilterRules) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
    let p = dir.join(DATASET_TRIPLES);
    let f = std::fs::File::create(&p).map_err(|e| AuditError::io(&p, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_tsv3(&mut w, &ds.graph.raw_triples()).map_err(|e| AuditError::io(&p, e))?;
    w.flush().map_err(|e| AuditError::io(&p, e))?;

    let p = dir.join(DATASET_META);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["entity", "gender", "birth_year"])?;
    for m in ds.meta.values() {
        let gender = match m.gender {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        };
        let year = m.birth_year.map(|y| y.to_string()).unwrap_or_default();
        w.write_record([ds.graph.entity_name(m.entity), gender, &year])?;
    }
    w.flush().map_err(|e| AuditError::io(&p, e))?;

    let header = DatasetHeader {
        schema: REPORT_SCHEMA.into(),
        geography: ds.geography.clone(),
        reference_year: ds.reference_year,
        rules: rules.clone(),
    };
    write_json(&dir.join(DATASET_HEADER), &header)?;
    write_json(&dir.join(DATASET_STATS), &dataset_stats(ds))
}

pub fn load_dataset(dir: &Path) -> Result<(GeoDataset, FilterRules)> {
    let header: DatasetHeader = read_json(&dir.join(DATASET_HEADER))?;
    let raw = parse_triple_file(&dir.join(DATASET_TRIPLES), TripleFormat::Tsv3)?;
    let graph = intern_triples(&raw)?;
    let mut ds = build_geo_dataset(&graph, &header.rules, &header.geography, header.reference_year)?;
    let p = dir.join(DATASET_META);
    let f = std::fs::File::open(&p).map_err(|e| AuditError::io(&p, e))?;
    apply_attribute_overrides(&mut ds, f)?;
    Ok((ds, header.rules))
}
