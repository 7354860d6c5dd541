//! Command-line definitions.

use std::path::PathBuf;

use amdl_core::data::{SynthKind, Split};
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Evaluate, GenData, Source};
use crate::error::{AppError, AppResult};
use crate::run_config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "amdl", version, about = "Multi-domain learning with a frozen base, parallel adapters and early exits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test AMDS files for a synthetic domain.
    GenData(GenDataArgs),
    /// Train a base network on one dataset and freeze it.
    TrainBase(TrainBaseArgs),
    /// Attach a domain to a frozen base and train its adapters and exits.
    TrainDomain(TrainDomainArgs),
    /// Per-exit accuracy of a base or adapter bundle on one split.
    Evaluate(EvaluateArgs),
    /// Pick the cheapest exit per domain within T accuracy points.
    Select(SelectArgs),
    /// Write the selection report as CSV and JSON.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// easy, medium or hard.
    #[arg(long)]
    pub kind: String,
    /// Training images.
    #[arg(long)]
    pub n: usize,
    /// Validation images [default: n/4, at least one per class].
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Test images [default: n/4, at least one per class].
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// File prefix [default: the kind].
    #[arg(long)]
    pub name: Option<String>,
}

/// Settings shared by the training commands; each also has a config key.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (`key = value` lines); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network preset: tiny or resnet26.
    #[arg(long)]
    pub preset: Option<String>,
    /// Input side length, overriding the preset.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Schedule preset: desk or paper.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated epochs where the learning rate steps.
    #[arg(long)]
    pub milestones: Option<String>,
    /// Comma-separated learning rates, one more than milestones.
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// A number, or `auto` for the training-set-size rule.
    #[arg(long)]
    pub weight_decay: Option<String>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    fn run_config(&self) -> AppResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.set("preset", self.preset.as_ref());
        c.set("image_size", self.image_size);
        c.set("schedule", self.schedule.as_ref());
        c.set("seed", self.seed);
        c.set("epochs", self.epochs);
        c.set("batch_size", self.batch_size);
        c.set("milestones", self.milestones.as_ref());
        c.set("lr", self.lr.as_ref());
        c.set("momentum", self.momentum);
        c.set("weight_decay", self.weight_decay.as_ref());
        c.set("data", self.data.as_ref().map(|p| p.display()));
        c.set("out", self.out.as_ref().map(|p| p.display()));
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainBaseArgs {
    /// Dataset prefix inside the data directory.
    #[arg(long, default_value = "hard")]
    pub name: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct TrainDomainArgs {
    /// Frozen base checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Dataset prefix inside the data directory; also the domain id.
    #[arg(long)]
    pub domain: String,
    /// Early-exit head: basic, mlp:W[,W..] or conv1x1.
    #[arg(long)]
    pub topology: Option<String>,
    /// joint, blockwise or exits_only.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Train normalization and heads only, without parallel adapters.
    #[arg(long)]
    pub no_adapt: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frozen base checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Adapter bundle; without it the base is scored on its own classes.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset prefix inside the data directory.
    #[arg(long)]
    pub domain: String,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Configuration name written to the results.
    #[arg(long)]
    pub config_name: Option<String>,
    /// Write the per-exit results to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `*.eval.csv` results.
    #[arg(long, conflicts_with = "fixture")]
    pub results: Option<PathBuf>,
    /// Built-in reference table: table2.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Accuracy-loss threshold in points [default: 3.5].
    #[arg(long = "T", visible_alias = "threshold")]
    pub threshold: Option<f64>,
}

impl SourceArgs {
    fn resolve(&self) -> AppResult<(Source, f64, RunConfig)> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.set("threshold", self.threshold);
        c.set("results", self.results.as_ref().map(|p| p.display()));
        let source = match (&self.fixture, c.get("results")) {
            (Some(f), _) => commands::parse_fixture_name(f)?,
            (None, Some(r)) => Source::Results(r.into()),
            (None, None) => return Err(AppError::usage("give --results DIR or --fixture table2")),
        };
        Ok((source, c.threshold()?, c))
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output directory for report.csv and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_split(n: usize, classes: usize) -> usize {
    (n / 4).max(classes)
}

/// Validates `AMDL_THREADS`. Kernels run on one thread regardless, which is
/// the bitwise reference mode.
pub fn check_threads(value: Option<&str>) -> AppResult<usize> {
    match value {
        None => Ok(1),
        Some(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| AppError::usage(format!("AMDL_THREADS must be a positive integer, got '{v}'"))),
    }
}

pub fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::GenData(a) => {
            let kind = SynthKind::parse(&a.kind).ok_or_else(|| AppError::usage(format!("unknown kind '{}' (easy, medium, hard)", a.kind)))?;
            let c = kind.num_classes();
            let sizes = [a.n, a.n_val.unwrap_or(default_split(a.n, c)), a.n_test.unwrap_or(default_split(a.n, c))];
            commands::gen_data(&GenData { kind, name: a.name, sizes, seed: a.seed, image_size: a.size, out: a.out })?;
        }
        Command::TrainBase(a) => {
            commands::cmd_train_base(&a.train.run_config()?, &a.name)?;
        }
        Command::TrainDomain(a) => {
            let mut c = a.train.run_config()?;
            c.set("base", a.base.as_ref().map(|p| p.display()));
            c.set("topology", a.topology.as_ref());
            c.set("strategy", a.strategy.as_ref());
            if a.no_adapt {
                c.set("adapt", Some(false));
            }
            commands::cmd_train_domain(&c, &a.domain)?;
        }
        Command::Evaluate(a) => {
            let mut c = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            c.set("base", a.base.as_ref().map(|p| p.display()));
            c.set("data", a.data.as_ref().map(|p| p.display()));
            let split = Split::parse(&a.split).ok_or_else(|| AppError::usage(format!("unknown split '{}'", a.split)))?;
            commands::cmd_evaluate(&c, &Evaluate { bundle: a.bundle, domain: a.domain, split, config_name: a.config_name, out: a.out })?;
        }
        Command::Select(a) => {
            let (source, t, _) = a.source.resolve()?;
            commands::cmd_select(&source, t)?;
        }
        Command::Report(a) => {
            let (source, t, mut c) = a.source.resolve()?;
            c.set("out", a.out.as_ref().map(|p| p.display()));
            commands::cmd_report(&source, t, &c.path("out")?)?;
        }
    }
    Ok(())
}
