//! Command-line flags and their config-file mirror.
//!
//! Every flag can also be given in a TOML file passed with `--config`, under
//! a table named after the subcommand and with the flag name as key:
//!
//! ```toml
//! [train]
//! model = "transe"
//! epochs = 50
//! ```
//!
//! Flags win over the file. Relative paths in the file are resolved against
//! the file's directory.

use std::path::{Path, PathBuf};

use auditlp::ingest::TripleFormat;
use auditlp::kg::Attribute;
use auditlp::kge::{KgeModel, Norm};
use auditlp::pipeline::ThresholdScope;
use clap::Args;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{io_error, CliError, CliResult};

const SECTIONS: [&str; 6] = ["synth", "ingest", "split", "train", "audit", "macro"];

/// Fills unset fields of `self` from a lower-priority layer.
pub trait Layered: Sized {
    fn fill_from(&mut self, other: Self);
    fn rebase(&mut self, dir: &Path);
}

macro_rules! layered {
    ($t:ty; options: [$($o:ident),*]; lists: [$($l:ident),*]; paths: [$($p:ident),*]; path_lists: [$($pl:ident),*]) => {
        impl Layered for $t {
            fn fill_from(&mut self, other: Self) {
                $(if self.$o.is_none() { self.$o = other.$o; })*
                $(if self.$l.is_empty() { self.$l = other.$l; })*
            }

            fn rebase(&mut self, dir: &Path) {
                $(if let Some(p) = self.$p.take() { self.$p = Some(dir.join(p)); })*
                $(for p in self.$pl.iter_mut() { *p = dir.join(&*p); })*
                let _ = dir;
            }
        }
    };
}

fn parse_table(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn section<T: DeserializeOwned + Default>(path: &Path, table: &mut toml::Table, name: &str) -> CliResult<T> {
    match table.remove(name) {
        Some(v) => v
            .try_into()
            .map_err(|e| CliError::usage(format!("{}: [{name}]: {e}", path.display()))),
        None => Ok(T::default()),
    }
}

/// Merges the `[name]` table of `config`, if any, under the flags.
pub fn resolve<T: Layered + DeserializeOwned + Default>(mut flags: T, config: Option<&Path>, name: &str) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let mut table = parse_table(path)?;
    if let Some(unknown) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(CliError::usage(format!("{}: unknown table [{unknown}]", path.display())));
    }
    let mut file: T = section(path, &mut table, name)?;
    file.rebase(path.parent().unwrap_or(Path::new(".")));
    flags.fill_from(file);
    Ok(flags)
}

/// The synthetic-corpus settings: the `[synth]` table when the file has
/// pipeline tables, otherwise the whole file.
pub fn synth_config(path: Option<&Path>) -> CliResult<auditlp::synthgen::SynthConfig> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let mut table = parse_table(path)?;
    if table.keys().any(|k| SECTIONS.contains(&k.as_str())) {
        section(path, &mut table, "synth")
    } else {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

pub fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

pub fn runs(list: Vec<PathBuf>) -> CliResult<Vec<PathBuf>> {
    if list.is_empty() {
        return Err(CliError::usage("missing required option --run"));
    }
    Ok(list)
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    /// Generator settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the corpus and its ground truth.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct IngestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Triple files of one geography.
    #[arg(long, num_args = 1..)]
    pub triples: Vec<PathBuf>,
    /// tsv3 or kgtk.
    #[arg(long)]
    pub format: Option<TripleFormat>,
    /// Filter vocabulary (JSON). Defaults to Wikidata identifiers with the
    /// geography code as citizenship target.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub geography: Option<String>,
    /// Year ages are computed at.
    #[arg(long)]
    pub ref_year: Option<i32>,
    /// Run directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(IngestArgs; options: [format, rules, geography, ref_year, out]; lists: [triples]; paths: [rules, out]; path_lists: [triples]);

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SplitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Run directories; repeat for several geographies.
    #[arg(long = "run", num_args = 1..)]
    pub run: Vec<PathBuf>,
    /// gender or age.
    #[arg(long)]
    pub attribute: Option<Attribute>,
    /// Share of each occupation's holders whose edge is hidden.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}
layered!(SplitArgs; options: [attribute, fraction, seed]; lists: [run]; paths: []; path_lists: [run]);

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long = "run", num_args = 1..)]
    pub run: Vec<PathBuf>,
    /// transe or distmult.
    #[arg(long)]
    pub model: Option<KgeModel>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Negative samples per positive triple.
    #[arg(long)]
    pub neg: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// l1 or l2; TransE only.
    #[arg(long)]
    pub norm: Option<Norm>,
    #[arg(long)]
    pub seed: Option<u64>,
}
layered!(TrainArgs; options: [model, dim, neg, epochs, lr, batch_size, norm, seed]; lists: [run]; paths: []; path_lists: [run]);

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct AuditArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long = "run", num_args = 1..)]
    pub run: Vec<PathBuf>,
    /// Must match the attribute the split was made for.
    #[arg(long)]
    pub attribute: Option<Attribute>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden units of the classifier.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub mlp_epochs: Option<usize>,
    #[arg(long)]
    pub mlp_lr: Option<f64>,
    /// per-geography or pooled.
    #[arg(long)]
    pub threshold_scope: Option<ThresholdScope>,
    /// Classifier workers; 0 uses every core. AUDITLP_THREADS caps it.
    #[arg(long)]
    pub threads: Option<usize>,
}
layered!(AuditArgs; options: [attribute, seed, hidden, mlp_epochs, mlp_lr, threshold_scope, threads]; lists: [run]; paths: []; path_lists: [run]);

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct MacroArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long = "run", num_args = 1..)]
    pub run: Vec<PathBuf>,
    /// Upper bound on the number of clusters.
    #[arg(long)]
    pub clusters_max: Option<usize>,
    /// Country attribute CSV, or `bundled` for the shipped table.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Merge clusters down to two before the opposite-bias tables.
    #[arg(long)]
    pub merge_gn: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Layered for MacroArgs {
    fn fill_from(&mut self, other: Self) {
        self.clusters_max = self.clusters_max.or(other.clusters_max);
        self.attributes = self.attributes.take().or(other.attributes);
        self.merge_gn = self.merge_gn.or(other.merge_gn);
        self.seed = self.seed.or(other.seed);
        self.out = self.out.take().or(other.out);
        if self.run.is_empty() {
            self.run = other.run;
        }
    }

    fn rebase(&mut self, dir: &Path) {
        if let Some(a) = self.attributes.take() {
            self.attributes = Some(if a == Path::new(BUNDLED) { a } else { dir.join(a) });
        }
        self.out = self.out.take().map(|p| dir.join(p));
        for p in self.run.iter_mut() {
            *p = dir.join(&*p);
        }
    }
}

/// `--attributes` value selecting the shipped country table.
pub const BUNDLED: &str = "bundled";

/// Worker count after applying the AUDITLP_THREADS cap.
pub fn worker_threads(requested: usize) -> CliResult<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let wanted = if requested == 0 { cores } else { requested };
    match std::env::var("AUDITLP_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("AUDITLP_THREADS must be a positive integer, got `{v}`")))?;
            if cap == 0 {
                return Err(CliError::usage("AUDITLP_THREADS must be at least 1"));
            }
            Ok(wanted.min(cap))
        }
        _ => Ok(wanted),
    }
}
