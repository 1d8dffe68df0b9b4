use std::path::PathBuf;

use calibkit::data::{Generator, SyntheticSpec};
use calibkit::metatrain::Mode;
use calibkit::metrics::{BinningKind, DEFAULT_SWEEP};
use calibkit::smoothcal::{DEFAULT_BANDWIDTH, DEFAULT_KDE_GRID};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "calibkit", version, about = "Calibration metrics, temperature scaling and meta-learned focal loss")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Write the primary output here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibration report for a prediction file.
    Metrics {
        input: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// ECE and MCE over a range of equal-width bin counts.
    SweepBins {
        input: PathBuf,
        /// Comma-separated bin counts.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
        ms: Vec<usize>,
    },
    /// Per-bin accuracy and confidence.
    Reliability {
        input: PathBuf,
        #[arg(long, short = 'm', default_value_t = 10)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Scheme::EqualWidth)]
        scheme: Scheme,
    },
    /// Fit a temperature on logits and report before and after.
    TempScale {
        input: PathBuf,
        /// Fraction of rows used to fit T; the rest are reported. At 1 the
        /// same rows are used for both.
        #[arg(long, default_value_t = 1.0)]
        fit_fraction: f64,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Train a classifier under one of the loss modes.
    Train(Box<TrainArgs>),
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        spec: SynthArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    EqualWidth,
    EqualMass,
}

impl From<Scheme> for BinningKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::EqualWidth => BinningKind::EqualWidth,
            Scheme::EqualMass => BinningKind::EqualMass,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Bins for ECE, MCE and classwise ECE.
    #[arg(long, short = 'm', default_value_t = 10)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = Scheme::EqualWidth)]
    pub scheme: Scheme,
    /// Kernel bandwidth for SECE and KDE-ECE.
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    pub bandwidth: f64,
    /// ACE ranges per class; defaults to the bin count.
    #[arg(long)]
    pub ace_ranges: Option<usize>,
    /// Minimum class probability counted by ACE.
    #[arg(long, default_value_t = 0.0)]
    pub ace_threshold: f64,
    /// Grid points for KDE-ECE.
    #[arg(long, default_value_t = DEFAULT_KDE_GRID)]
    pub kde_grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Blobs,
    TwoRings,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = GeneratorArg::Blobs)]
    pub generator: GeneratorArg,
    /// Classes.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Samples.
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Label-noise rate.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
}

impl SynthArgs {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            generator: match self.generator {
                GeneratorArg::Blobs => Generator::Blobs,
                GeneratorArg::TwoRings => Generator::TwoRings,
            },
            classes: self.k,
            samples: self.n,
            features: self.d,
            sigma: self.sigma,
            rho: self.rho,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ce,
    FocalFixed,
    FlGammaSece,
    FlGammaNone,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ce => Mode::Ce,
            ModeArg::FocalFixed => Mode::FocalFixed,
            ModeArg::FlGammaSece => Mode::FlGammaSece,
            ModeArg::FlGammaNone => Mode::FlGammaNone,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV `x0,...,label`. Without it a synthetic dataset is
    /// generated from the synth flags.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub meta_batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub meta_lr: Option<f64>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Per-epoch log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint; the dataset flags must match the
    /// original run.
    #[arg(long, conflicts_with_all = ["config", "mode", "epochs", "batch_size", "meta_batch_size", "lr", "meta_lr", "focal_gamma", "bandwidth", "hidden"])]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs without a final report.
    #[arg(long, requires = "checkpoint")]
    pub stop_after: Option<usize>,
    /// Write the selected model's test predictions (logits) here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}
