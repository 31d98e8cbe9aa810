//! Subcommand implementations.
//!
//! Every command resolves its [`Settings`](crate::config::Settings),
//! echoes them to `config.resolved.txt` in the output directory, and
//! only then does real work, so any output directory doubles as a
//! reproducibility manifest for the run that produced it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use hiertail_core::check;
use hiertail_core::dataset::{
    filter_and_index, CheckinDataset, FilterThresholds, Sample, SplitTag,
};
use hiertail_core::hierarchy::LabelHierarchy;
use hiertail_core::metrics::{evaluate, EvalReport, EvalTally, MetricsError, Scorer};
use hiertail_core::synth::{generate_checkins, generate_hierarchy};
use hiertail_core::train::{train, BackboneScorer, TrainOutput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AblateMode, LossMode, Settings, SettingsArgs};
use crate::error::{CliError, Result};
use crate::formats::checkins::{read_checkins, write_checkins_csv, CheckinFormat};
use crate::formats::checkpoint::{
    load_checkpoint, save_checkpoint, save_epoch_log, save_meta, TrainMeta, CHECKPOINT_FILE,
    EPOCHS_FILE, META_FILE,
};
use crate::formats::mapping::{read_mapping, write_mapping, MAPPING_FILE_NAMES};
use crate::formats::report::{
    load_report, render_table, render_tsv, save_report, ReportDoc, REPORT_TSV_FILE,
};
use crate::formats::snapshot::{is_snapshot_dir, load_snapshot, save_snapshot};

pub const CHECKINS_FILE: &str = "checkins.csv";

fn shown(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Output directory for the corpus and mapping files.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    let config = settings.synth_config();
    config.validate()?;
    settings.echo(
        &args.out,
        &[("command", "synth".to_string()), ("out", shown(&args.out))],
    )?;
    // One seed drives the whole corpus: tree first, check-ins continue
    // from the same stream.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (hierarchy, adjacencies) = generate_hierarchy(&config, &mut rng)?;
    for (pairs, name) in adjacencies.iter().zip(MAPPING_FILE_NAMES) {
        write_mapping(&args.out.join(name), pairs)?;
    }
    let records = generate_checkins(&config, &hierarchy, &mut rng)?;
    write_checkins_csv(&args.out.join(CHECKINS_FILE), &records)?;
    println!(
        "synth: {} records, {} users, {} locations -> {}",
        records.len(),
        config.n_users,
        config.n_locations,
        shown(&args.out),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Raw check-in file (CSV or JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Override extension-based format detection.
    #[arg(long, value_enum)]
    pub format: Option<CheckinFormat>,
    /// Snapshot output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    settings.echo(
        &args.out,
        &[
            ("command", "ingest".to_string()),
            ("data", shown(&args.data)),
            ("out", shown(&args.out)),
        ],
    )?;
    let format = args
        .format
        .unwrap_or_else(|| CheckinFormat::infer(&args.data));
    let records = read_checkins(&args.data, format)?;
    let dataset = derive_dataset(&records, settings.thresholds())?;
    save_snapshot(&args.out, &dataset)?;
    let stats = dataset.stats();
    println!(
        "ingest: {} records, {} users, {} locations, {} trajectories \
         (train {}, val {}, test {}), {} head -> {}",
        stats.records,
        stats.users,
        stats.locations,
        stats.trajectories,
        stats.train_trajectories,
        stats.val_trajectories,
        stats.test_trajectories,
        stats.head_locations,
        shown(&args.out),
    );
    Ok(())
}

/// Raw records through the full pipeline: filter, segment, split,
/// partition.
fn derive_dataset(
    records: &[hiertail_core::dataset::CheckinRecord],
    thresholds: FilterThresholds,
) -> Result<CheckinDataset> {
    let mut dataset = filter_and_index(records, thresholds)?;
    dataset.segment_trajectories();
    dataset.chronological_split();
    dataset.partition_head_tail();
    Ok(dataset)
}

/// Accept either a snapshot directory or a raw check-in file.
fn load_dataset(
    path: &Path,
    format: Option<CheckinFormat>,
    thresholds: FilterThresholds,
) -> Result<CheckinDataset> {
    if is_snapshot_dir(path) {
        load_snapshot(path)
    } else if path.is_dir() {
        Err(CliError::data(format!(
            "{}: directory is not a dataset snapshot",
            path.display()
        )))
    } else {
        let format = format.unwrap_or_else(|| CheckinFormat::infer(path));
        let records = read_checkins(path, format)?;
        derive_dataset(&records, thresholds)
    }
}

// ---------------------------------------------------------------------------
// build-hierarchy

#[derive(Debug, Args)]
pub struct BuildHierarchyArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Location-to-category mapping file.
    #[arg(long)]
    pub loc2cat: PathBuf,
    /// Category-to-activity mapping file.
    #[arg(long)]
    pub cat2act: PathBuf,
    /// Activity-to-need mapping file.
    #[arg(long)]
    pub act2need: PathBuf,
    /// Directory for the validated, normalized mapping files.
    #[arg(long)]
    pub out: PathBuf,
}

/// Shared by every command that reads the three mapping files.
fn build_hierarchy_from_files(
    loc2cat: &Path,
    cat2act: &Path,
    act2need: &Path,
) -> Result<LabelHierarchy> {
    let mappings = vec![
        read_mapping(loc2cat)?,
        read_mapping(cat2act)?,
        read_mapping(act2need)?,
    ];
    Ok(LabelHierarchy::build(&mappings)?)
}

pub fn cmd_build_hierarchy(args: &BuildHierarchyArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    settings.echo(
        &args.out,
        &[
            ("command", "build-hierarchy".to_string()),
            ("loc2cat", shown(&args.loc2cat)),
            ("cat2act", shown(&args.cat2act)),
            ("act2need", shown(&args.act2need)),
            ("out", shown(&args.out)),
        ],
    )?;
    let hierarchy = build_hierarchy_from_files(&args.loc2cat, &args.cat2act, &args.act2need)?;
    for (pairs, name) in hierarchy.to_adjacencies().iter().zip(MAPPING_FILE_NAMES) {
        write_mapping(&args.out.join(name), pairs)?;
    }
    let counts: Vec<String> = hierarchy
        .class_counts()
        .iter()
        .map(|c| c.to_string())
        .collect();
    println!(
        "build-hierarchy: {} levels, class counts [{}] -> {}",
        hierarchy.depth(),
        counts.join(", "),
        shown(&args.out),
    );
    Ok(())
}

/// Build the full tree, then restrict it to exactly the dataset's
/// surviving locations so leaf indices line up with dense location
/// indices (both are lexicographic).
fn hierarchy_for_dataset(
    dataset: &CheckinDataset,
    loc2cat: &Path,
    cat2act: &Path,
    act2need: &Path,
) -> Result<LabelHierarchy> {
    let full = build_hierarchy_from_files(loc2cat, cat2act, act2need)?;
    let keep: BTreeSet<String> = dataset.locations.iter().map(|l| l.id.clone()).collect();
    let restricted = full.restrict_to_leaves(&keep)?;
    debug_assert!(restricted.num_leaves() == dataset.locations.len());
    Ok(restricted)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Check-in file or snapshot directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Override extension-based format detection for raw files.
    #[arg(long, value_enum)]
    pub format: Option<CheckinFormat>,
    #[arg(long)]
    pub loc2cat: PathBuf,
    #[arg(long)]
    pub cat2act: PathBuf,
    #[arg(long)]
    pub act2need: PathBuf,
    /// Directory for checkpoint.bin, meta.json, epochs.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    // Fail on config errors before any artifact is written.
    let train_config = settings.train_config()?;
    settings.echo(
        &args.out,
        &[
            ("command", "train".to_string()),
            ("data", shown(&args.data)),
            ("loc2cat", shown(&args.loc2cat)),
            ("cat2act", shown(&args.cat2act)),
            ("act2need", shown(&args.act2need)),
            ("out", shown(&args.out)),
        ],
    )?;
    let dataset = load_dataset(&args.data, args.format, settings.thresholds())?;
    let hierarchy = hierarchy_for_dataset(&dataset, &args.loc2cat, &args.cat2act, &args.act2need)?;
    let output = train(&dataset, &hierarchy, &train_config)?;
    write_train_artifacts(&args.out, &settings, &output)?;
    for entry in &output.log {
        println!(
            "epoch {}: train_loss {:.6} val_mrr5 {:.6}",
            entry.epoch, entry.train_loss, entry.val_mrr5
        );
    }
    match output.best_epoch {
        Some(best) => println!(
            "train: best epoch {} (val mrr@5 {:.6}) -> {}",
            best,
            output.log[best - 1].val_mrr5,
            shown(&args.out),
        ),
        None => println!("train: kept final parameters -> {}", shown(&args.out)),
    }
    Ok(())
}

fn write_train_artifacts(out: &Path, settings: &Settings, output: &TrainOutput) -> Result<()> {
    save_checkpoint(&out.join(CHECKPOINT_FILE), &output.params, &output.weights)?;
    save_meta(
        &out.join(META_FILE),
        &TrainMeta {
            settings,
            train_config: &settings.train_config()?,
            epochs: &output.log,
            best_epoch: output.best_epoch,
        },
    )?;
    save_epoch_log(&out.join(EPOCHS_FILE), &output.log)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn tag(self) -> SplitTag {
        match self {
            Self::Train => SplitTag::Train,
            Self::Val => SplitTag::Val,
            Self::Test => SplitTag::Test,
        }
    }

    fn as_str(self) -> &'static str {
        self.tag().as_str()
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Checkpoint file from a train run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Check-in file or snapshot directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Override extension-based format detection for raw files.
    #[arg(long, value_enum)]
    pub format: Option<CheckinFormat>,
    #[arg(long)]
    pub loc2cat: PathBuf,
    #[arg(long)]
    pub cat2act: PathBuf,
    #[arg(long)]
    pub act2need: PathBuf,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Debug scorer: the true label gets 1.0, everything else 0.0.
    #[arg(long)]
    pub oracle_scores: bool,
    /// Directory for report.json and report.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

/// Scores the true label highest; every ranking metric comes out 1.0.
struct OracleScorer {
    num_locations: usize,
}

impl Scorer for OracleScorer {
    fn score(&self, sample: &Sample) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_locations];
        scores[sample.target as usize] = 1.0;
        scores
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    settings.echo(
        &args.out,
        &[
            ("command", "evaluate".to_string()),
            ("checkpoint", shown(&args.checkpoint)),
            ("data", shown(&args.data)),
            ("loc2cat", shown(&args.loc2cat)),
            ("cat2act", shown(&args.cat2act)),
            ("act2need", shown(&args.act2need)),
            ("split", args.split.as_str().to_string()),
            ("oracle_scores", args.oracle_scores.to_string()),
            ("out", shown(&args.out)),
        ],
    )?;
    let dataset = load_dataset(&args.data, args.format, settings.thresholds())?;
    let hierarchy = hierarchy_for_dataset(&dataset, &args.loc2cat, &args.cat2act, &args.act2need)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    if checkpoint.params.num_locations() != dataset.locations.len() {
        return Err(CliError::data(format!(
            "checkpoint/dataset mismatch: {} vs {} locations",
            checkpoint.params.num_locations(),
            dataset.locations.len()
        )));
    }
    if checkpoint.params.num_users() != dataset.users.len() {
        return Err(CliError::data(format!(
            "checkpoint/dataset mismatch: {} vs {} users",
            checkpoint.params.num_users(),
            dataset.users.len()
        )));
    }
    if checkpoint.class_counts != hierarchy.class_counts() {
        return Err(CliError::data(
            "checkpoint/hierarchy mismatch: per-level class counts differ".to_string(),
        ));
    }

    let samples = dataset.samples(args.split.tag());
    let report = if args.oracle_scores {
        let scorer = OracleScorer {
            num_locations: dataset.locations.len(),
        };
        parallel_evaluate(
            &scorer,
            &samples,
            &hierarchy,
            &dataset.head_mask,
            &settings.eval_ks,
            settings.threads,
        )?
    } else {
        let scorer = BackboneScorer {
            params: &checkpoint.params,
        };
        parallel_evaluate(
            &scorer,
            &samples,
            &hierarchy,
            &dataset.head_mask,
            &settings.eval_ks,
            settings.threads,
        )?
    };
    save_report(&args.out, &report)?;
    print!("{}", render_table(&ReportDoc::from_report(&report)));
    println!(
        "evaluate: {} split, {} predictions -> {}",
        args.split.as_str(),
        report.counts.total,
        shown(&args.out),
    );
    Ok(())
}

/// Shard samples over `threads` workers, one tally each, merged in
/// shard order. Serial when one thread is requested. The shard count
/// (not the scheduler) fixes the reduction order, so a given thread
/// count always produces the same report.
fn parallel_evaluate<S: Scorer + Sync>(
    scorer: &S,
    samples: &[Sample],
    hierarchy: &LabelHierarchy,
    head: &[bool],
    ks: &[usize],
    threads: usize,
) -> std::result::Result<EvalReport, MetricsError> {
    if threads <= 1 || samples.len() < 2 {
        return evaluate(scorer, samples, hierarchy, head, ks);
    }
    let workers = threads.min(samples.len());
    let chunk = samples.len().div_ceil(workers);
    let tallies = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|shard| {
                scope.spawn(move || {
                    let mut tally = EvalTally::new(ks, hierarchy.depth());
                    for sample in shard {
                        let scores = scorer.score(sample);
                        tally.record(&scores, sample.target as usize, hierarchy, head)?;
                    }
                    Ok::<EvalTally, MetricsError>(tally)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut merged: Option<EvalTally> = None;
    for tally in tallies {
        let tally = tally?;
        merged = Some(match merged {
            None => tally,
            Some(mut acc) => {
                acc.merge(&tally)?;
                acc
            }
        });
    }
    merged.expect("at least one shard").finalize()
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Check-in file or snapshot directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Override extension-based format detection for raw files.
    #[arg(long, value_enum)]
    pub format: Option<CheckinFormat>,
    #[arg(long)]
    pub loc2cat: PathBuf,
    #[arg(long)]
    pub cat2act: PathBuf,
    #[arg(long)]
    pub act2need: PathBuf,
    /// Parent directory; each variant trains into its own subdirectory.
    #[arg(long)]
    pub out: PathBuf,
}

/// The sweep: full loss, its four single-component ablations, and the
/// plain cross-entropy baseline. All share seed, init, and batch order.
const ABLATION_SWEEP: [(&str, LossMode, AblateMode); 6] = [
    ("ahl", LossMode::Ahl, AblateMode::None),
    ("no_exploitation", LossMode::Ahl, AblateMode::NoExploitation),
    ("no_exploration", LossMode::Ahl, AblateMode::NoExploration),
    ("no_gumbel", LossMode::Ahl, AblateMode::NoGumbel),
    ("no_adaptive", LossMode::Ahl, AblateMode::NoAdaptive),
    ("ce", LossMode::Ce, AblateMode::None),
];

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = Settings::resolve(&args.settings)?;
    base.echo(
        &args.out,
        &[
            ("command", "ablate".to_string()),
            ("data", shown(&args.data)),
            ("out", shown(&args.out)),
        ],
    )?;
    let dataset = load_dataset(&args.data, args.format, base.thresholds())?;
    let hierarchy = hierarchy_for_dataset(&dataset, &args.loc2cat, &args.cat2act, &args.act2need)?;

    let mut summary = String::from("variant\tbest_epoch\tbest_val_mrr5\tfinal_train_loss\n");
    for (name, loss, ablate) in ABLATION_SWEEP {
        let mut settings = base.clone();
        settings.loss = loss;
        settings.ablate = ablate;
        let sub = args.out.join(name);
        settings.echo(
            &sub,
            &[
                ("command", "ablate".to_string()),
                ("variant", name.to_string()),
                ("data", shown(&args.data)),
                ("out", shown(&sub)),
            ],
        )?;
        let output = train(&dataset, &hierarchy, &settings.train_config()?)?;
        write_train_artifacts(&sub, &settings, &output)?;
        let (best_epoch, best_mrr) = match output.best_epoch {
            Some(e) => (e.to_string(), format!("{:.6}", output.log[e - 1].val_mrr5)),
            None => ("-".to_string(), "-".to_string()),
        };
        let final_loss = output
            .log
            .last()
            .map(|e| format!("{:.6}", e.train_loss))
            .unwrap_or_else(|| "-".to_string());
        println!("ablate {name}: best epoch {best_epoch}, val mrr@5 {best_mrr}");
        summary.push_str(&format!("{name}\t{best_epoch}\t{best_mrr}\t{final_loss}\n"));
    }
    let summary_path = args.out.join("summary.tsv");
    std::fs::write(&summary_path, summary).map_err(|e| CliError::io(&summary_path, e))?;
    println!("ablate: wrote {}", shown(&summary_path));
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Optional hierarchy to verify on (all three files or none; the
    /// default is a seeded random tree).
    #[arg(long, requires = "cat2act", requires = "act2need")]
    pub loc2cat: Option<PathBuf>,
    #[arg(long, requires = "loc2cat")]
    pub cat2act: Option<PathBuf>,
    #[arg(long, requires = "loc2cat")]
    pub act2need: Option<PathBuf>,
    /// Optional directory for the config echo.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let settings = Settings::resolve(&args.settings)?;
    if let Some(out) = &args.out {
        settings.echo(out, &[("command", "verify".to_string())])?;
    }
    let hierarchy = match (&args.loc2cat, &args.cat2act, &args.act2need) {
        (Some(a), Some(b), Some(c)) => build_hierarchy_from_files(a, b, c)?,
        (None, None, None) => {
            // Default: a moderate random tree seeded from the settings.
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            let adjacencies = hiertail_core::synth::random_tree(&[3, 6, 14, 40], &mut rng);
            LabelHierarchy::build(&adjacencies)?
        }
        _ => {
            return Err(CliError::config(
                "pass all three mapping files or none".to_string(),
            ))
        }
    };
    let results = check::run_all(&hierarchy, settings.seed);
    let mut failures = 0usize;
    for result in &results {
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("check {}: {status} ({})", result.name, result.detail);
        if !result.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::data(format!(
            "{failures} of {} checks failed",
            results.len()
        )));
    }
    println!("verify: all {} checks passed", results.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Existing report.json to print.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional directory to re-emit report.tsv into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let doc = load_report(&args.report)?;
    print!("{}", render_table(&doc));
    if let Some(out) = &args.out {
        let settings = Settings::resolve(&args.settings)?;
        settings.echo(
            out,
            &[
                ("command", "report".to_string()),
                ("report", shown(&args.report)),
                ("out", shown(out)),
            ],
        )?;
        let report = EvalReport {
            ks: doc.metadata.ks.clone(),
            mrr: doc.mrr.clone().into_iter().collect(),
            ndcg: doc.ndcg.clone().into_iter().collect(),
            counts: doc.metadata.counts,
            hier: doc.hier_distance.clone(),
        };
        let tsv_path = out.join(REPORT_TSV_FILE);
        std::fs::write(&tsv_path, render_tsv(&report)).map_err(|e| CliError::io(&tsv_path, e))?;
        println!("report: wrote {}", shown(&tsv_path));
    }
    Ok(())
}
