//! `hiertail`: one binary for the whole pipeline.
//!
//! Subcommands: `synth` generates a reproducible long-tailed check-in
//! corpus with a known ground-truth hierarchy; `ingest` filters,
//! segments, and splits raw check-ins into a snapshot; `build-hierarchy`
//! validates and normalizes the three mapping files; `train` fits the
//! reference backbone under the hierarchical or cross-entropy loss;
//! `evaluate` scores a checkpoint and writes ranking reports; `ablate`
//! sweeps the loss-component ablations; `verify` runs the gradient and
//! oracle check suites; `report` re-prints an existing report.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration error,
//! 3 I/O error, 4 data or model inconsistency. Each command echoes its
//! fully resolved configuration into the output directory before doing
//! work; see `docs/config.md` for the config file keys.

mod commands;
mod config;
mod error;
mod formats;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hiertail", version, about, propagate_version = true)]
struct Cli {
    /// Print elapsed wall time to stderr when the command finishes.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic check-in corpus and its hierarchy files.
    Synth(commands::SynthArgs),
    /// Filter, segment, and split raw check-ins into a snapshot.
    Ingest(commands::IngestArgs),
    /// Validate three mapping files and emit normalized copies.
    BuildHierarchy(commands::BuildHierarchyArgs),
    /// Train the reference backbone and write a checkpoint.
    Train(commands::TrainArgs),
    /// Score a checkpoint on a split and write report files.
    Evaluate(commands::EvaluateArgs),
    /// Train every loss-component ablation plus both baselines.
    Ablate(commands::AblateArgs),
    /// Run the gradient and oracle check suites.
    Verify(commands::VerifyArgs),
    /// Print a previously written report.json.
    Report(commands::ReportArgs),
}

fn run(cli: &Cli) -> error::Result<()> {
    match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Ingest(args) => commands::cmd_ingest(args),
        Command::BuildHierarchy(args) => commands::cmd_build_hierarchy(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Ablate(args) => commands::cmd_ablate(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::Report(args) => commands::cmd_report(args),
    }
}

fn main() {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if cli.timing {
        // Timing goes to stderr only; written artifacts stay
        // byte-identical across fixed-seed runs.
        eprintln!("timing: {:.3}s", started.elapsed().as_secs_f64());
    }
    std::process::exit(code);
}
