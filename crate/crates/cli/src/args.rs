use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use compound_kge::training::OptimizerKind;
use compound_kge::transform::OperatorChain;
use compound_kge::{ModelPreset, Norm, RelationInit, Split, Variant, DEFAULT_ETA};

#[derive(Parser, Debug, Clone)]
#[command(name = "compound-kge", version, about = "Train, evaluate and inspect compound affine knowledge graph embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Train a model and write best/last checkpoints.
    Train(TrainArgs),
    /// Filtered link-prediction metrics for a checkpoint.
    Eval(EvalArgs),
    /// Per-relation heads-per-tail / tails-per-head categories.
    Categorize(CategorizeArgs),
    /// Algebraic diagnostics and parameter exports for a checkpoint.
    Diagnose(DiagnoseArgs),
}

fn parse_chain(s: &str) -> Result<OperatorChain, String> {
    OperatorChain::parse(&s.to_ascii_uppercase()).map_err(|e| match e {
        compound_kge::KgeError::InvalidArgument(m) => m,
        other => other.to_string(),
    })
}

fn parse_with<T: std::str::FromStr<Err = compound_kge::KgeError>>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|e| match e {
        compound_kge::KgeError::InvalidArgument(m) => m,
        other => other.to_string(),
    })
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.to_ascii_lowercase().as_str() {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}`; expected valid or test")),
    }
}

fn parse_init(s: &str) -> Result<RelationInit, String> {
    match s.to_ascii_lowercase().as_str() {
        "random" => Ok(RelationInit::Random),
        "identity" => Ok(RelationInit::Identity),
        _ => Err(format!("unknown initialization `{s}`; expected random or identity")),
    }
}

/// Every field is optional so a `--config` file can supply the rest;
/// flags given on the command line override the file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Replay a saved run_config.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory with train.txt, valid.txt, test.txt.
    #[arg(long, required_unless_present = "config")]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_with::<Variant>)]
    pub variant: Option<Variant>,
    /// Head chain as a written matrix product, e.g. SRT (T applies first).
    #[arg(long, value_parser = parse_chain)]
    pub head_order: Option<OperatorChain>,
    #[arg(long, value_parser = parse_chain)]
    pub tail_order: Option<OperatorChain>,
    #[arg(long, value_parser = parse_with::<ModelPreset>)]
    pub preset: Option<ModelPreset>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub neg_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_with::<Norm>)]
    pub norm: Option<Norm>,
    #[arg(long, value_parser = parse_with::<OptimizerKind>)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub valid_interval: Option<u64>,
    /// Output directory for checkpoints, log and resolved config.
    #[arg(long)]
    pub save: Option<PathBuf>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long)]
    pub deterministic: bool,
    /// Separate head and tail angles in full variants.
    #[arg(long)]
    pub unshared_rotation: bool,
    /// Relation initialization: random or identity.
    #[arg(long, value_parser = parse_init)]
    pub init: Option<RelationInit>,
    /// Relation-category threshold used for validation reports.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Write per-relation histograms of the best model into DIR.
    #[arg(long, value_name = "DIR")]
    pub export_histograms: Option<PathBuf>,
    /// Write the best model's entity embeddings as CSV.
    #[arg(long, value_name = "FILE")]
    pub export_embeddings: Option<PathBuf>,
    /// Entity labels (`name<TAB>label` lines) joined into the embedding export.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CategorizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("selection").required(true).args(["relation", "all"])))]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Relation name; repeat for several.
    #[arg(long)]
    pub relation: Vec<String>,
    #[arg(long)]
    pub all: bool,
    #[arg(long, value_name = "DIR")]
    pub export_histograms: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub export_embeddings: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Scale magnitude counted as zero.
    #[arg(long, default_value_t = compound_kge::diagnostics::TRAINED_SCALE_TOLERANCE)]
    pub scale_tolerance: f64,
}
