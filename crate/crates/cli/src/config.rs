//! Resolved run configuration.
//!
//! One plain-text `key = value` file can drive the whole pipeline; any
//! CLI flag overrides the file, and `HIERTAIL_SEED` overrides the file's
//! seed (but not an explicit `--seed`). Precedence, strongest first:
//! flag > environment > config file > built-in default.
//!
//! Every command writes the fully resolved settings to
//! `config.resolved.txt` in its output directory before doing any work,
//! so an output directory is a self-describing reproducibility manifest.
//! The key set is documented in `docs/config.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use hiertail_core::dataset::FilterThresholds;
use hiertail_core::loss::{ablation_config, AblationFlags, LossConfig};
use hiertail_core::synth::SynthConfig;
use hiertail_core::train::TrainConfig;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SEED_ENV_VAR: &str = "HIERTAIL_SEED";

/// Which loss drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Full hierarchical loss with disturbance and adaptive weights.
    Ahl,
    /// Plain leaf-level cross-entropy baseline.
    Ce,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ahl => "ahl",
            Self::Ce => "ce",
        }
    }
}

/// Ablation switch names as they appear in config files and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateMode {
    /// No ablation (explicit override for a config-file setting).
    #[value(name = "none")]
    None,
    /// Drop the hierarchy: cross-entropy on the disturbed distribution.
    #[value(name = "no_exploitation")]
    NoExploitation,
    /// Drop the disturbance, keep hierarchy and adaptive weights.
    #[value(name = "no_exploration")]
    NoExploration,
    /// Drop the noise only; hierarchy and weights stay on.
    #[value(name = "no_gumbel")]
    NoGumbel,
    /// Freeze the per-node weights at their init values.
    #[value(name = "no_adaptive")]
    NoAdaptive,
}

impl AblateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::NoExploitation => "no_exploitation",
            Self::NoExploration => "no_exploration",
            Self::NoGumbel => "no_gumbel",
            Self::NoAdaptive => "no_adaptive",
        }
    }

    pub fn flags(self) -> AblationFlags {
        AblationFlags {
            no_exploitation: self == Self::NoExploitation,
            no_exploration: self == Self::NoExploration,
            no_gumbel: self == Self::NoGumbel,
            no_adaptive: self == Self::NoAdaptive,
        }
    }
}

/// Flags shared by every subcommand; each one overrides the matching
/// config-file key.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct SettingsArgs {
    /// Plain-text key=value config file (see docs/config.md).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master RNG seed for every stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Embedding dimension of the reference backbone.
    #[arg(long)]
    pub d: Option<usize>,
    /// Loss mode: ahl or ce.
    #[arg(long, value_enum)]
    pub loss: Option<LossMode>,
    /// Ablation switch (implies the ahl loss family).
    #[arg(long, value_enum)]
    pub ablate: Option<AblateMode>,
    /// Ranking cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eval_ks: Option<Vec<usize>>,
    /// Evaluation worker cap (1 = serial).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Ingest filter: minimum visits per surviving location.
    #[arg(long)]
    pub min_loc_visits: Option<u32>,
    /// Ingest filter: minimum check-ins per surviving user.
    #[arg(long)]
    pub min_user_checkins: Option<u32>,
    /// Synthetic corpus: number of users.
    #[arg(long)]
    pub users: Option<usize>,
    /// Synthetic corpus: number of locations (hierarchy leaves).
    #[arg(long)]
    pub locations: Option<usize>,
    /// Synthetic corpus: number of categories.
    #[arg(long)]
    pub categories: Option<usize>,
    /// Synthetic corpus: number of activities.
    #[arg(long)]
    pub activities: Option<usize>,
    /// Synthetic corpus: number of needs.
    #[arg(long)]
    pub needs: Option<usize>,
    /// Synthetic corpus: Zipf exponent over location popularity.
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
    /// Synthetic corpus: per-user preferred-need mixing probability.
    #[arg(long)]
    pub need_bias: Option<f64>,
    /// Synthetic corpus: minimum check-ins per user.
    #[arg(long)]
    pub checkins_min: Option<usize>,
    /// Synthetic corpus: maximum check-ins per user.
    #[arg(long)]
    pub checkins_max: Option<usize>,
    /// Synthetic corpus: day span for timestamps.
    #[arg(long)]
    pub days: Option<usize>,
}

/// Every tunable the pipeline reads, after precedence resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub tau: f64,
    pub d: usize,
    pub loss: LossMode,
    pub ablate: AblateMode,
    pub eval_ks: Vec<usize>,
    pub threads: usize,
    pub min_loc_visits: u32,
    pub min_user_checkins: u32,
    pub users: usize,
    pub locations: usize,
    pub categories: usize,
    pub activities: usize,
    pub needs: usize,
    pub zipf_exponent: f64,
    pub need_bias: f64,
    pub checkins_min: usize,
    pub checkins_max: usize,
    pub days: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        Self {
            seed: train.seed,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            adam_betas: train.adam_betas,
            tau: train.tau,
            d: train.d,
            loss: LossMode::Ahl,
            ablate: AblateMode::None,
            eval_ks: hiertail_core::metrics::DEFAULT_KS.to_vec(),
            threads: 1,
            min_loc_visits: FilterThresholds::default().min_location_visits,
            min_user_checkins: FilterThresholds::default().min_user_checkins,
            users: synth.n_users,
            locations: synth.n_locations,
            categories: synth.n_categories,
            activities: synth.n_activities,
            needs: synth.n_needs,
            zipf_exponent: synth.zipf_exponent,
            need_bias: synth.need_bias,
            checkins_min: synth.checkins_min,
            checkins_max: synth.checkins_max,
            days: synth.days,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("bad value for `{key}`: `{value}`")))
}

impl Settings {
    /// Resolve from defaults, then file, then environment, then flags.
    pub fn resolve(args: &SettingsArgs) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = &args.config {
            s.apply_file(path)?;
        }
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            s.seed = parse_value(SEED_ENV_VAR, &value)?;
        }
        s.apply_args(args);
        s.validate()?;
        Ok(s)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    number + 1
                ))
            })?;
            self.apply_key(key.trim(), value.trim())
                .map_err(|e| CliError::config(format!("{}:{}: {e}", path.display(), number + 1)))?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "adam_beta1" => self.adam_betas.0 = parse_value(key, value)?,
            "adam_beta2" => self.adam_betas.1 = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "d" => self.d = parse_value(key, value)?,
            "loss" => {
                self.loss = LossMode::from_str(value, false)
                    .map_err(|_| CliError::config(format!("bad value for `loss`: `{value}`")))?
            }
            "ablate" => {
                self.ablate = AblateMode::from_str(value, false)
                    .map_err(|_| CliError::config(format!("bad value for `ablate`: `{value}`")))?
            }
            "eval_ks" => {
                self.eval_ks = value
                    .split(',')
                    .map(|v| parse_value("eval_ks", v))
                    .collect::<Result<_>>()?
            }
            "threads" => self.threads = parse_value(key, value)?,
            "min_loc_visits" => self.min_loc_visits = parse_value(key, value)?,
            "min_user_checkins" => self.min_user_checkins = parse_value(key, value)?,
            "users" => self.users = parse_value(key, value)?,
            "locations" => self.locations = parse_value(key, value)?,
            "categories" => self.categories = parse_value(key, value)?,
            "activities" => self.activities = parse_value(key, value)?,
            "needs" => self.needs = parse_value(key, value)?,
            "zipf_exponent" => self.zipf_exponent = parse_value(key, value)?,
            "need_bias" => self.need_bias = parse_value(key, value)?,
            "checkins_min" => self.checkins_min = parse_value(key, value)?,
            "checkins_max" => self.checkins_max = parse_value(key, value)?,
            "days" => self.days = parse_value(key, value)?,
            other => return Err(CliError::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn apply_args(&mut self, args: &SettingsArgs) {
        macro_rules! take {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = args.$field { $target = v; })*
            };
        }
        take! {
            seed => self.seed,
            epochs => self.epochs,
            batch_size => self.batch_size,
            learning_rate => self.learning_rate,
            tau => self.tau,
            d => self.d,
            loss => self.loss,
            ablate => self.ablate,
            threads => self.threads,
            min_loc_visits => self.min_loc_visits,
            min_user_checkins => self.min_user_checkins,
            users => self.users,
            locations => self.locations,
            categories => self.categories,
            activities => self.activities,
            needs => self.needs,
            zipf_exponent => self.zipf_exponent,
            need_bias => self.need_bias,
            checkins_min => self.checkins_min,
            checkins_max => self.checkins_max,
            days => self.days,
        }
        if let Some(ks) = &args.eval_ks {
            self.eval_ks = ks.clone();
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eval_ks.is_empty() {
            return Err(CliError::config("eval_ks must list at least one cutoff"));
        }
        if self.eval_ks.contains(&0) {
            return Err(CliError::config("eval_ks cutoffs must be at least 1"));
        }
        if self.threads == 0 {
            return Err(CliError::config("threads must be at least 1"));
        }
        if self.loss == LossMode::Ce && self.ablate != AblateMode::None {
            return Err(CliError::config(
                "ablations modify the ahl loss; drop --ablate or use --loss ahl",
            ));
        }
        Ok(())
    }

    /// The loss actually trained, after ablation resolution.
    pub fn loss_config(&self) -> Result<LossConfig> {
        match self.ablate {
            AblateMode::None => Ok(match self.loss {
                LossMode::Ahl => LossConfig::ahl(),
                LossMode::Ce => LossConfig::ce(),
            }),
            mode => Ok(ablation_config(mode.flags())?),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam_betas: self.adam_betas,
            seed: self.seed,
            loss: self.loss_config()?,
            tau: self.tau,
            d: self.d,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.users,
            n_locations: self.locations,
            n_categories: self.categories,
            n_activities: self.activities,
            n_needs: self.needs,
            zipf_exponent: self.zipf_exponent,
            need_bias: self.need_bias,
            checkins_min: self.checkins_min,
            checkins_max: self.checkins_max,
            days: self.days,
            seed: self.seed,
        }
    }

    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            min_location_visits: self.min_loc_visits,
            min_user_checkins: self.min_user_checkins,
        }
    }

    /// Deterministic `key = value` rendering; `extra` carries the
    /// command name and its path arguments.
    pub fn render(&self, extra: &[(&str, String)]) -> String {
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        for (k, v) in extra {
            pairs.insert(k, v.clone());
        }
        pairs.insert("seed", self.seed.to_string());
        pairs.insert("epochs", self.epochs.to_string());
        pairs.insert("batch_size", self.batch_size.to_string());
        pairs.insert("learning_rate", self.learning_rate.to_string());
        pairs.insert("adam_beta1", self.adam_betas.0.to_string());
        pairs.insert("adam_beta2", self.adam_betas.1.to_string());
        pairs.insert("tau", self.tau.to_string());
        pairs.insert("d", self.d.to_string());
        pairs.insert("loss", self.loss.as_str().to_string());
        pairs.insert("ablate", self.ablate.as_str().to_string());
        pairs.insert(
            "eval_ks",
            self.eval_ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        pairs.insert("threads", self.threads.to_string());
        pairs.insert("min_loc_visits", self.min_loc_visits.to_string());
        pairs.insert("min_user_checkins", self.min_user_checkins.to_string());
        pairs.insert("users", self.users.to_string());
        pairs.insert("locations", self.locations.to_string());
        pairs.insert("categories", self.categories.to_string());
        pairs.insert("activities", self.activities.to_string());
        pairs.insert("needs", self.needs.to_string());
        pairs.insert("zipf_exponent", self.zipf_exponent.to_string());
        pairs.insert("need_bias", self.need_bias.to_string());
        pairs.insert("checkins_min", self.checkins_min.to_string());
        pairs.insert("checkins_max", self.checkins_max.to_string());
        pairs.insert("days", self.days.to_string());
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// Write `config.resolved.txt` into `out_dir`, creating the
    /// directory first. Called before a command does any real work.
    pub fn echo(&self, out_dir: &Path, extra: &[(&str, String)]) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let path = out_dir.join("config.resolved.txt");
        std::fs::write(&path, self.render(extra)).map_err(|e| CliError::io(&path, e))
    }
}
