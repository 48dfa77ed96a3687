use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use auditlp::ingest::{build_geo_dataset, parse_triple_file, write_tsv3, FilterRules, TripleFormat};
use auditlp::kg::{intern_triples, Attribute};
use auditlp::kge::{EmbeddingTable, KgeConfig};
use auditlp::linkclf::{write_predictions_csv, MlpConfig};
use auditlp::macro_analysis::{ClusterConfig, CountryAttributes};
use auditlp::pipeline::{
    classify_occupations, label_geography, load_dataset, macro_report, read_json, save_dataset, thresholds_for,
    train_embeddings, write_json, AuditConfig, ClassifiedGeography, GeographyAudit, MacroConfig, ThresholdScope,
    DATASET_HEADER, DATASET_META, DATASET_STATS, DATASET_TRIPLES,
};
use auditlp::splitter::{build_filtered_dataset, FilteredDataset, SplitManifest};
use auditlp::synthgen::generate;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, CliResult};
use crate::manifest::{digest_file, digest_files, external_key, RunManifest, StageRecord};
use crate::settings::{self, required, resolve, runs, worker_threads};

const DATASET_DIR: &str = "dataset";
pub const SPLIT_FILE: &str = "split.json";
pub const FILTERED_FILE: &str = "filtered.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const RANKING_FILE: &str = "ranking.json";
pub const TRAINING_FILE: &str = "training.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn dataset_files() -> [String; 4] {
    [DATASET_TRIPLES, DATASET_META, DATASET_HEADER, DATASET_STATS].map(|f| format!("{DATASET_DIR}/{f}"))
}

/// Dataset files a later stage actually reads.
fn dataset_inputs() -> Vec<String> {
    [DATASET_TRIPLES, DATASET_META, DATASET_HEADER].iter().map(|f| format!("{DATASET_DIR}/{f}")).collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

pub fn synth(args: settings::SynthArgs) -> CliResult<()> {
    let cfg = settings::synth_config(args.config.as_deref())?;
    let corpus = generate(&cfg)?;
    corpus.write(&args.out)?;
    write_json(&args.out.join("synth_config.json"), &cfg)?;
    println!(
        "wrote {} geographies ({} humans each) to {}",
        corpus.geographies.len(),
        cfg.humans_per_geography,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestSettings {
    triples: Vec<String>,
    format: TripleFormat,
    geography: String,
    reference_year: i32,
    rules: FilterRules,
}

pub fn ingest(args: settings::IngestArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref(), "ingest")?;
    if a.triples.is_empty() {
        return Err(CliError::usage("missing required option --triples"));
    }
    let geography = required(a.geography, "geography")?;
    let reference_year = required(a.ref_year, "ref-year")?;
    let out = required(a.out, "out")?;
    let format = a.format.unwrap_or(TripleFormat::Tsv3);
    let rules = match &a.rules {
        Some(p) => read_json::<FilterRules>(p)?,
        None => FilterRules::with_targets([geography.clone()]),
    };
    rules.validate()?;

    let mut inputs = BTreeMap::new();
    let mut raw = Vec::new();
    for p in &a.triples {
        inputs.insert(external_key(p), digest_file(p)?);
        raw.extend(parse_triple_file(p, format)?);
    }
    if let Some(p) = &a.rules {
        inputs.insert(external_key(p), digest_file(p)?);
    }
    let graph = intern_triples(&raw)?;
    let ds = build_geo_dataset(&graph, &rules, &geography, reference_year)?;
    save_dataset(&out.join(DATASET_DIR), &ds, &rules)?;

    let mut m = RunManifest::new(&geography, &inputs);
    let settings = IngestSettings {
        triples: a.triples.iter().map(|p| external_key(p)).collect(),
        format,
        geography: geography.clone(),
        reference_year,
        rules,
    };
    let outputs = digest_files(&out, refs(&dataset_files()))?;
    m.record("ingest", &settings, StageRecord { inputs, outputs })?;
    m.save(&out)?;
    for w in &ds.warnings {
        eprintln!("warning: {geography}: {w}");
    }
    println!(
        "{geography}: {} humans, {} triples, {} occupations -> {}",
        ds.humans.len(),
        ds.graph.len(),
        ds.occupations().len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitSettings {
    attribute: Attribute,
    fraction: f64,
    seed: u64,
}

pub fn split(args: settings::SplitArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref(), "split")?;
    let s = SplitSettings {
        attribute: a.attribute.unwrap_or(Attribute::Gender),
        fraction: a.fraction.unwrap_or(0.5),
        seed: a.seed.unwrap_or(0),
    };
    for run in runs(a.run)? {
        let mut m = RunManifest::load(&run)?;
        let inputs = m.verify(&run, &refs(&dataset_inputs()))?;
        let (ds, _) = load_dataset(&run.join(DATASET_DIR))?;
        let filtered = build_filtered_dataset(&ds, s.attribute, s.fraction, s.seed)?;
        write_json(&run.join(SPLIT_FILE), &filtered.manifest())?;
        let p = run.join(FILTERED_FILE);
        let f = File::create(&p).map_err(|e| io_error(&p, e))?;
        let mut w = BufWriter::new(f);
        write_tsv3(&mut w, &filtered.training_graph.raw_triples()).map_err(|e| io_error(&p, e))?;
        w.flush().map_err(|e| io_error(&p, e))?;

        let outputs = digest_files(&run, [SPLIT_FILE, FILTERED_FILE])?;
        m.record("split", &s, StageRecord { inputs, outputs })?;
        m.save(&run)?;
        let hidden: usize = filtered.splits.iter().map(|x| x.hidden_positives.len()).sum();
        println!(
            "{}: {} occupations split, {} occupation edges hidden",
            ds.geography,
            filtered.splits.len(),
            hidden
        );
    }
    Ok(())
}

fn load_split<'a>(run: &Path, ds: &'a auditlp::kg::GeoDataset) -> CliResult<FilteredDataset<'a>> {
    let manifest: SplitManifest = read_json(&run.join(SPLIT_FILE))?;
    Ok(FilteredDataset::from_manifest(ds, &manifest)?)
}

pub fn train(args: settings::TrainArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref(), "train")?;
    let d = KgeConfig::default();
    let cfg = KgeConfig {
        model: a.model.unwrap_or(d.model),
        dim: a.dim.unwrap_or(d.dim),
        neg_samples: a.neg.unwrap_or(d.neg_samples),
        epochs: a.epochs.unwrap_or(d.epochs),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        norm: a.norm.unwrap_or(d.norm),
        seed: a.seed.unwrap_or(d.seed),
        parallel: false,
    };
    cfg.validate()?;
    for run in runs(a.run)? {
        let mut m = RunManifest::load(&run)?;
        let mut needed = dataset_inputs();
        needed.push(SPLIT_FILE.into());
        let inputs = m.verify(&run, &refs(&needed))?;
        let (ds, _) = load_dataset(&run.join(DATASET_DIR))?;
        let filtered = load_split(&run, &ds)?;
        let (table, ranking) = train_embeddings(&filtered, &cfg)?;

        let p = run.join(EMBEDDINGS_FILE);
        let f = File::create(&p).map_err(|e| io_error(&p, e))?;
        let mut w = BufWriter::new(f);
        table.write(&mut w).map_err(|e| io_error(&p, e))?;
        w.flush().map_err(|e| io_error(&p, e))?;
        write_json(&run.join(RANKING_FILE), &ranking)?;
        write_json(&run.join(TRAINING_FILE), &table.training)?;

        let outputs = digest_files(&run, [EMBEDDINGS_FILE, RANKING_FILE, TRAINING_FILE])?;
        m.record("train", &cfg, StageRecord { inputs, outputs })?;
        m.save(&run)?;
        println!(
            "{}: final loss {:.4}, MRR {:.4} over {} hidden triples",
            ds.geography,
            table.final_loss().unwrap_or(f64::NAN),
            ranking.mrr,
            ranking.evaluated_triples
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditSettings {
    attribute: Attribute,
    seed: u64,
    mlp: MlpConfig,
    threshold_scope: ThresholdScope,
    /// Other run directories whose rates fed pooled thresholds.
    pooled_with: Vec<String>,
}

pub fn audit(args: settings::AuditArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref(), "audit")?;
    let run_dirs = runs(a.run)?;
    let d = MlpConfig::default();
    let mlp = MlpConfig {
        hidden: a.hidden.unwrap_or(d.hidden),
        max_epochs: a.mlp_epochs.unwrap_or(d.max_epochs),
        learning_rate: a.mlp_lr.unwrap_or(d.learning_rate),
        ..d
    };
    mlp.validate()?;
    let threads = worker_threads(a.threads.unwrap_or(0))?;
    let seed = a.seed.unwrap_or(0);
    let scope = a.threshold_scope.unwrap_or_default();

    struct Loaded {
        run: PathBuf,
        manifest: RunManifest,
        inputs: BTreeMap<String, String>,
        classified: ClassifiedGeography,
        kge: KgeConfig,
        predictions: Vec<auditlp::linkclf::OccupationPredictions>,
        dataset: auditlp::kg::GeoDataset,
    }
    let mut loaded = Vec::new();
    let mut attribute = a.attribute;
    for run in run_dirs {
        let m = RunManifest::load(&run)?;
        let mut needed = dataset_inputs();
        needed.extend([SPLIT_FILE.to_string(), EMBEDDINGS_FILE.to_string()]);
        let inputs = m.verify(&run, &refs(&needed))?;
        let split: SplitSettings = m.settings("split")?;
        match attribute {
            Some(want) if want != split.attribute => {
                return Err(CliError::usage(format!(
                    "{}: split was made for attribute {}, not {}",
                    run.display(),
                    format!("{:?}", split.attribute).to_lowercase(),
                    format!("{want:?}").to_lowercase()
                )))
            }
            _ => attribute = Some(split.attribute),
        }
        let kge: KgeConfig = m.settings("train")?;
        let (ds, _) = load_dataset(&run.join(DATASET_DIR))?;
        let p = run.join(EMBEDDINGS_FILE);
        let f = File::open(&p).map_err(|e| io_error(&p, e))?;
        let table = EmbeddingTable::read(BufReader::new(f))?;
        let (outcomes, warnings) = {
            let filtered = load_split(&run, &ds)?;
            let outcomes = classify_occupations(&filtered, &table, &mlp, seed, threads)?;
            (outcomes, filtered.warnings.clone())
        };
        let predictions = outcomes.iter().filter_map(|o| o.predictions.clone()).collect();
        loaded.push(Loaded {
            classified: ClassifiedGeography {
                geography: ds.geography.clone(),
                reference_year: ds.reference_year,
                outcomes,
                warnings,
            },
            run,
            manifest: m,
            inputs,
            kge,
            predictions,
            dataset: ds,
        });
    }
    let attribute = attribute.expect("at least one run");
    let classified: Vec<ClassifiedGeography> = loaded.iter().map(|l| l.classified.clone()).collect();
    let base = AuditConfig {
        attribute,
        seed,
        mlp: mlp.clone(),
        threshold_scope: scope,
        threads,
        ..AuditConfig::default()
    };
    let thresholds = thresholds_for(&classified, &base);
    let all_runs: Vec<String> = loaded.iter().map(|l| external_key(&l.run)).collect();

    for (l, t) in loaded.into_iter().zip(&thresholds) {
        let cfg = AuditConfig {
            kge: l.kge.clone(),
            ..base.clone()
        };
        let report = label_geography(&l.classified, t.as_ref(), &cfg);
        write_json(&l.run.join(AUDIT_FILE), &report)?;
        let p = l.run.join(PREDICTIONS_FILE);
        let f = File::create(&p).map_err(|e| io_error(&p, e))?;
        write_predictions_csv(BufWriter::new(f), &l.dataset, &l.predictions)?;

        let mut inputs = l.inputs;
        let pooled_with: Vec<String> = match scope {
            ThresholdScope::PerGeography => Vec::new(),
            ThresholdScope::Pooled => all_runs.iter().filter(|r| **r != external_key(&l.run)).cloned().collect(),
        };
        for other in &pooled_with {
            let p = Path::new(other).join(EMBEDDINGS_FILE);
            inputs.insert(external_key(&p), digest_file(&p)?);
        }
        let settings = AuditSettings {
            attribute,
            seed,
            mlp: mlp.clone(),
            threshold_scope: scope,
            pooled_with,
        };
        let outputs = digest_files(&l.run, [AUDIT_FILE, PREDICTIONS_FILE])?;
        let mut m = l.manifest;
        m.record("audit", &settings, StageRecord { inputs, outputs })?;
        m.save(&l.run)?;
        for w in &report.warnings {
            eprintln!("warning: {}: {w}", report.geography);
        }
        let c = report.vector.counts;
        println!(
            "{}: {} occupations, vector {:?}, mean accuracy {}, mean AUC {}",
            report.geography,
            report.occupations.len(),
            c,
            fmt_opt(report.summary.mean_accuracy),
            fmt_opt(report.summary.mean_auc)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

pub fn macro_stage(args: settings::MacroArgs) -> CliResult<()> {
    let config = args.config.clone();
    let a = resolve(args, config.as_deref(), "macro")?;
    let out = required(a.out, "out")?;
    let mut audits = Vec::new();
    for run in runs(a.run)? {
        let m = RunManifest::load(&run)?;
        m.verify(&run, &[AUDIT_FILE])?;
        let report: GeographyAudit = read_json(&run.join(AUDIT_FILE))?;
        audits.push(report);
    }
    let attributes = match &a.attributes {
        None => None,
        Some(p) if p == Path::new(settings::BUNDLED) => Some(CountryAttributes::bundled()),
        Some(p) => {
            let f = File::open(p).map_err(|e| io_error(p, e))?;
            Some(CountryAttributes::from_csv(BufReader::new(f))?)
        }
    };
    let d = ClusterConfig::default();
    let cfg = MacroConfig {
        cluster: ClusterConfig {
            k_max: a.clusters_max.unwrap_or(d.k_max),
            seed: a.seed.unwrap_or(d.seed),
            ..d
        },
        merge_gn: a.merge_gn.unwrap_or(true),
    };
    if cfg.cluster.k_max == 0 {
        return Err(CliError::usage("--clusters-max must be at least 1"));
    }
    let report = macro_report(&audits, attributes.as_ref(), &cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    write_json(&out, &report)?;
    println!(
        "{} geographies in {} clusters -> {}",
        report.vectors.len(),
        report.clustering.k,
        out.display()
    );
    Ok(())
}
