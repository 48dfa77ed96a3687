//! `auditlp`: run the audit pipeline one stage at a time.
//!
//! Each stage reads and writes files in a run directory (one per
//! geography) and records their digests in `manifest.json`; a stage refuses
//! to run on inputs that changed after the stage that wrote them.

mod error;
mod manifest;
mod settings;
mod stages;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "auditlp", version, about = "Audit link prediction over knowledge graphs for group bias")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted occupation bias.
    Synth(settings::SynthArgs),
    /// Build a geography dataset from triple files into a new run directory.
    Ingest(settings::IngestArgs),
    /// Hide occupation edges and sample negatives.
    Split(settings::SplitArgs),
    /// Train embeddings on the filtered graph and rank the hidden edges.
    Train(settings::TrainArgs),
    /// Train per-occupation classifiers and label occupations.
    Audit(settings::AuditArgs),
    /// Cluster geographies by bias profile.
    Macro(settings::MacroArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => stages::synth(a),
        Command::Ingest(a) => stages::ingest(a),
        Command::Split(a) => stages::split(a),
        Command::Train(a) => stages::train(a),
        Command::Audit(a) => stages::audit(a),
        Command::Macro(a) => stages::macro_stage(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("auditlp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
