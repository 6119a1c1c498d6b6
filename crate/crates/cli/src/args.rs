use std::path::PathBuf;

use attrauth::heads::MissingPolicy;
use attrauth::trainer::AttrNormalization;
use attrauth::Family;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "attrauth", version, about = "Part-based facial attributes and attribute-based face authentication")]
#[serde(rename_all = "kebab-case")]
pub struct Cli {
    /// TOML file of defaults: top-level keys for global options, one table
    /// per subcommand (e.g. `[train]`). Command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Seed for every random choice (initialisation, sampling, clustering).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,

    #[command(subcommand)]
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train part networks (or one binary full-face network).
    Train(TrainArgs),
    /// Fit attribute heads and write the per-attribute accuracy table.
    EvalAttrs(EvalAttrsArgs),
    /// Build per-part dictionaries by sparse subspace clustering.
    Discover(DiscoverArgs),
    /// Average per-frame features into one descriptor per video.
    ExtractFeatures(ExtractArgs),
    /// Run the verification protocol and report ROC curves and EERs.
    Authenticate(AuthArgs),
    /// Battery life under continuous authentication.
    Budget(BudgetArgs),
    /// Time forward passes of the part networks.
    Bench(BenchArgs),
    /// Parameter and MAC counts of the part networks.
    Params(ParamsArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Deep,
    Wide,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Deep => Family::Deep,
            FamilyArg::Wide => Family::Wide,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    BatchSize,
    PositiveCount,
}

impl From<Normalization> for AttrNormalization {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::BatchSize => AttrNormalization::BatchSize,
            Normalization::PositiveCount => AttrNormalization::PositiveCount,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Missing {
    Exclude,
    Impute,
}

impl From<Missing> for MissingPolicy {
    fn from(m: Missing) -> Self {
        match m {
            Missing::Exclude => MissingPolicy::Exclude,
            Missing::Impute => MissingPolicy::Impute,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for attrauth::datapipe::Split {
    fn from(s: SplitArg) -> Self {
        use attrauth::datapipe::Split;
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Calibrated attribute probabilities (40 values).
    Attrs,
    /// Discovered-attribute cluster memberships (clusters x parts values).
    Discattrs,
}

/// Inputs shared by every command that reads labelled images.
#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// JSON-lines manifest of labelled images.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Part table (JSON); defaults to the built-in 68-landmark table.
    #[arg(long, value_name = "FILE")]
    pub parts: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = FamilyArg::Deep)]
    pub family: FamilyArg,
    /// Train only these parts (repeatable); default all.
    #[arg(long = "part", value_name = "NAME")]
    pub part: Vec<String>,
    /// Train one single-attribute network on aligned full faces instead.
    #[arg(long, value_name = "ATTRIBUTE", conflicts_with = "part")]
    pub binary: Option<String>,
    /// Continue from the checkpoints in this directory.
    #[arg(long, value_name = "DIR")]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, value_enum, default_value_t = Normalization::BatchSize)]
    pub normalization: Normalization,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalAttrsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Directory of part checkpoints (`<Part>.ckpt`).
    #[arg(long, value_name = "DIR")]
    pub checkpoints: PathBuf,
    /// Use these heads instead of fitting new ones on train/dev.
    #[arg(long, value_name = "FILE")]
    pub heads: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Row label in the accuracy table.
    #[arg(long, default_value = "CNNAA")]
    pub method: String,
    #[arg(long, value_enum, default_value_t = Missing::Exclude)]
    pub missing: Missing,
    /// SVM regularisation values tried on dev (repeatable).
    #[arg(long = "svm-c", value_name = "C")]
    pub svm_c: Vec<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiscoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "DIR")]
    pub checkpoints: PathBuf,
    /// Split whose embeddings form the dictionaries.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long = "part", value_name = "NAME")]
    pub part: Vec<String>,
    /// Dictionary atoms per part.
    #[arg(long, default_value_t = 10_000)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    /// Sparsity of the self-expressive codes.
    #[arg(long, default_value_t = 20)]
    pub sparsity: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExtractArgs {
    /// JSON-lines video manifest.
    #[arg(long, value_name = "FILE")]
    pub videos: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub parts: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub checkpoints: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureMode::Attrs)]
    pub mode: FeatureMode,
    /// Heads file (attrs mode).
    #[arg(long, value_name = "FILE", required_if_eq("mode", "attrs"))]
    pub heads: Option<PathBuf>,
    /// Dictionary directory (discattrs mode).
    #[arg(long, value_name = "DIR", required_if_eq("mode", "discattrs"))]
    pub dictionaries: Option<PathBuf>,
    /// Sparsity of the per-frame codes (discattrs mode).
    #[arg(long, default_value_t = 20)]
    pub sparsity: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AuthArgs {
    /// Descriptor file, optionally labelled: `MultiDeep=deep.jsonl` (repeatable).
    #[arg(long = "descriptors", value_name = "[METHOD=]FILE", required = true)]
    pub descriptors: Vec<String>,
    /// `altogether`, `same-session`, `cross-session`, `1->2,3`,
    /// `sensor:A->B`, `site:NAME` or `per-site` (repeatable).
    #[arg(long = "pairing", value_name = "PAIRING")]
    pub pairing: Vec<String>,
    /// Skip the SVG plot.
    #[arg(long)]
    pub no_plot: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BudgetArgs {
    /// Battery capacity, watt-hours.
    #[arg(long, default_value_t = 8.74)]
    pub capacity_wh: f64,
    /// Power draw in normal use, watts.
    #[arg(long, default_value_t = 0.6)]
    pub pn: f64,
    /// Power draw of the detector, watts.
    #[arg(long, default_value_t = 0.78)]
    pub pd: f64,
    /// Authentication ratio in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Fraction of time in use, in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Prediction time of the detector, seconds.
    #[arg(long, default_value_t = 1.22)]
    pub ta: f64,
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Deep)]
    pub family: FamilyArg,
    #[arg(long, value_name = "FILE")]
    pub parts: Option<PathBuf>,
    /// Time these checkpoints instead of freshly initialised networks.
    #[arg(long, value_name = "DIR")]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Also time the single-attribute full-face network.
    #[arg(long)]
    pub binary: bool,
    /// Time the part networks concurrently.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    Deep,
    Wide,
    Both,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ParamsArgs {
    #[arg(long, value_enum, default_value_t = FamilyChoice::Both)]
    pub family: FamilyChoice,
    #[arg(long, value_name = "FILE")]
    pub parts: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
