//! Fairness auditing of link prediction over knowledge graphs.
//!
//! The pipeline ingests triples for a geography, hides occupation edges in
//! a group-stratified way, trains a translational or bilinear embedding,
//! classifies occupation membership per occupation, and compares error rates
//! between demographic groups. A macro layer clusters geographies by their
//! bias profile.

pub mod error;
pub mod fairness;
pub mod ingest;
pub mod kg;
pub mod kge;
pub mod linkclf;
pub mod macro_analysis;
pub mod pipeline;
pub mod rng;
pub mod splitter;
pub mod synthgen;

pub use error::{AuditError, Result};

/// Schema tag written into every JSON report and manifest.
pub const REPORT_SCHEMA: &str = "auditlp-report v1";
