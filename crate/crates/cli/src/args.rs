use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hmexp_core::autodiff::OptimizerConfig;
use hmexp_core::crosscell::Category;
use hmexp_core::data::{Label, Split};
use hmexp_core::models::ArchKind;
use hmexp_core::training::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "hmexp", version, about = "Histone-modification classifiers, GAN probes and cross-cell grids")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "HMEXP_OUT", default_value = "hmexp-out")]
    pub out: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic multi-cell corpus.
    Synth(SynthArgs),
    /// Train a classifier on one or more cells.
    Train(TrainArgs),
    /// Train a GAN on real inputs.
    TrainGan(TrainGanArgs),
    /// Optimize an input toward a class.
    VisualizeOpt(VisualizeOptArgs),
    /// Monte Carlo selection of GAN samples.
    VisualizeMc(VisualizeMcArgs),
    /// Run the cross-cell experiment grid.
    CrossCell(CrossCellArgs),
    /// Evaluate every single-cell model on every other cell.
    TestOnRest(TestOnRestArgs),
    /// Correlation matrix, AUROC and class-probability summaries.
    Metrics(MetricsArgs),
    /// Export the weights of a linear classifier.
    WeightsReport(WeightsReportArgs),
    /// Prediction difference of two classifiers binned by expression.
    RpkmDiff(RpkmDiffArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Original,
    Avgpool,
    Strided,
    Linear,
}

impl From<ArchArg> for ArchKind {
    fn from(a: ArchArg) -> ArchKind {
        match a {
            ArchArg::Original => ArchKind::Original,
            ArchArg::Avgpool => ArchKind::Avgpool,
            ArchArg::Strided => ArchKind::Strided,
            ArchArg::Linear => ArchKind::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    Pos,
    Neg,
}

impl From<ClassArg> for Label {
    fn from(c: ClassArg) -> Label {
        match c {
            ClassArg::Pos => Label::Positive,
            ClassArg::Neg => Label::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CategoryArg {
    Deepchrome,
    All,
    Highly,
    Somewhat,
    Random,
}

impl From<CategoryArg> for Category {
    fn from(c: CategoryArg) -> Category {
        match c {
            CategoryArg::Deepchrome => Category::Deepchrome,
            CategoryArg::All => Category::All,
            CategoryArg::Highly => Category::Highly,
            CategoryArg::Somewhat => Category::Somewhat,
            CategoryArg::Random => Category::Random,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub cells: usize,
    #[arg(long, default_value_t = 2000)]
    pub genes: usize,
    /// Per-cell perturbation scale (lower means more correlated cells).
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// Comma-separated per-cell perturbation scales.
    #[arg(long, value_delimiter = ',')]
    pub cell_perturbations: Option<Vec<f64>>,
    /// Standard deviation of the label noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "original")]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Override the architecture's dropout rate.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
}

impl FitArgs {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerConfig::adam(self.lr),
                OptimizerArg::Sgd => OptimizerConfig::sgd(self.lr),
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            seed,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory written by `synth` (or in the same layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Cells to pool for training (comma-separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub cell: Vec<String>,
    /// Train this many seeds and keep the best on validation.
    #[arg(long, default_value_t = 1)]
    pub best_of: usize,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub cell: Vec<String>,
    /// Split whose inputs serve as real samples.
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta1: f64,
    #[arg(long, default_value_t = 64)]
    pub latent_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "128,256")]
    pub generator_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "256,64")]
    pub discriminator_hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Start from a generator sample.
    Hot,
    /// Start from uniform noise.
    Uniform,
}

#[derive(Debug, Args)]
pub struct VisualizeOptArgs {
    /// Classifier checkpoint.
    #[arg(long)]
    pub classifier: PathBuf,
    /// GAN checkpoint (needed for lambda > 0 or a hot start).
    #[arg(long)]
    pub gan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pos")]
    pub class: ClassArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub phi: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value = "hot")]
    pub init: InitArg,
    /// Upper bound of the uniform initialization.
    #[arg(long, default_value_t = 1.0)]
    pub uniform_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TopK,
    Threshold,
}

#[derive(Debug, Args)]
pub struct VisualizeMcArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub gan: PathBuf,
    /// Samples to generate.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Samples to keep per class.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "top-k")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct CrossCellArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Categories to run (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "deepchrome,all,highly,somewhat,random")]
    pub categories: Vec<CategoryArg>,
    /// Correlate raw RPKM instead of ln(1 + RPKM).
    #[arg(long)]
    pub raw_correlation: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct TestOnRestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub raw_correlation: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub raw_correlation: bool,
    /// Classifier to score on `--cell`.
    #[arg(long, requires = "cell")]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub cell: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// GAN checkpoint: adds mean class probabilities of real, generated and
    /// uniform-random inputs.
    #[arg(long, requires = "classifier")]
    pub gan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsReportArgs {
    #[arg(long)]
    pub classifier: PathBuf,
}

#[derive(Debug, Args)]
pub struct RpkmDiffArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cell: String,
    /// First classifier.
    #[arg(long)]
    pub a: PathBuf,
    /// Second classifier.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}
