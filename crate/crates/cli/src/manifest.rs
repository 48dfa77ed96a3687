//! Run directory bookkeeping: which stage wrote which file, and with what
//! settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

/// Stages in pipeline order. Rerunning one invalidates everything after it.
pub const STAGES: [&str; 4] = ["ingest", "split", "train", "audit"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Digest of every file the stage wrote, relative to the run directory.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub geography: String,
    /// Effective settings of each completed stage.
    pub config: BTreeMap<String, serde_json::Value>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn digest_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_files<'a>(dir: &Path, names: impl IntoIterator<Item = &'a str>) -> CliResult<BTreeMap<String, String>> {
    names
        .into_iter()
        .map(|n| Ok((n.to_owned(), digest_file(&dir.join(n))?)))
        .collect()
}

impl RunManifest {
    pub fn new(geography: &str, inputs: &BTreeMap<String, String>) -> Self {
        let mut h = Sha256::new();
        h.update(geography.as_bytes());
        for (k, v) in inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        RunManifest {
            schema: auditlp::REPORT_SCHEMA.into(),
            run_id: hex::encode(h.finalize())[..16].to_owned(),
            geography: geography.to_owned(),
            config: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run: &Path) -> CliResult<Self> {
        let p = run.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        if m.schema != auditlp::REPORT_SCHEMA {
            return Err(CliError::usage(format!("{}: unsupported schema `{}`", p.display(), m.schema)));
        }
        Ok(m)
    }

    pub fn save(&self, run: &Path) -> CliResult<()> {
        let p = run.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::pipeline(e.to_string()))? + "\n";
        std::fs::write(&p, text).map_err(|e| io_error(&p, e))
    }

    /// Checks that each file still has the digest recorded by the stage that
    /// wrote it, and returns those digests.
    pub fn verify(&self, run: &Path, files: &[&str]) -> CliResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for &f in files {
            let (stage, recorded) = self
                .stages
                .iter()
                .find_map(|(s, r)| r.outputs.get(f).map(|d| (s, d)))
                .ok_or_else(|| {
                    CliError::pipeline(format!(
                        "{}: no completed stage produced `{f}`; run the earlier stages first",
                        run.display()
                    ))
                })?;
            let current = digest_file(&run.join(f))?;
            if &current != recorded {
                return Err(CliError::pipeline(format!(
                    "{}: `{f}` changed since the {stage} stage wrote it; rerun {stage}",
                    run.display()
                )));
            }
            out.insert(f.to_owned(), current);
        }
        Ok(out)
    }

    /// Stores a completed stage and forgets every later one.
    pub fn record(&mut self, stage: &str, settings: &impl Serialize, record: StageRecord) -> CliResult<()> {
        let pos = STAGES.iter().position(|&s| s == stage).expect("known stage");
        for later in &STAGES[pos + 1..] {
            self.stages.remove(*later);
            self.config.remove(*later);
        }
        let value = serde_json::to_value(settings).map_err(|e| CliError::pipeline(e.to_string()))?;
        self.config.insert(stage.to_owned(), value);
        self.stages.insert(stage.to_owned(), record);
        Ok(())
    }

    pub fn settings<T: DeserializeOwned>(&self, stage: &str) -> CliResult<T> {
        let v = self
            .config
            .get(stage)
            .ok_or_else(|| CliError::pipeline(format!("the {stage} stage has not run")))?;
        serde_json::from_value(v.clone()).map_err(|e| CliError::pipeline(format!("manifest {stage} settings: {e}")))
    }
}

/// Key under which an external input file is recorded.
pub fn external_key(path: &Path) -> String {
    path.display().to_string()
}
