use std::fs;
use std::path::{Path, PathBuf};

use compound_kge::transform::OperatorChain;
use compound_kge::{CompoundSpec, ModelPreset, Norm, TrainConfig, Variant, DEFAULT_ETA};
use serde::{Deserialize, Serialize};

use crate::args::TrainArgs;
use crate::error::CliError;

pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_BINS: usize = 50;
const DEFAULT_ORDER: &str = "TRS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub histograms: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub bins: usize,
}

/// Everything needed to repeat a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Preset the spec was expanded from, if any.
    pub preset: Option<ModelPreset>,
    pub spec: CompoundSpec,
    pub train: TrainConfig,
    pub save: Option<PathBuf>,
    pub eta: f64,
    pub export: ExportOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Resolves command-line flags, on top of `--config` when given.
    pub fn from_args(args: &TrainArgs) -> Result<Self, CliError> {
        let base = args.config.as_deref().map(Self::load).transpose()?;
        let explicit_order = args.variant.is_some() || args.head_order.is_some() || args.tail_order.is_some();
        if args.preset.is_some() && explicit_order {
            return Err(CliError::Usage(
                "--preset cannot be combined with --variant, --head-order or --tail-order".into(),
            ));
        }

        let data = match (&args.data, &base) {
            (Some(d), _) => d.clone(),
            (None, Some(b)) => b.data.clone(),
            (None, None) => return Err(CliError::Usage("--data is required".into())),
        };
        let dim = args.dim.or(base.as_ref().map(|b| b.spec.dim)).unwrap_or(DEFAULT_DIM);
        let norm = args.norm.or(base.as_ref().map(|b| b.spec.norm)).unwrap_or_default();

        let (preset, spec) = if let Some(p) = args.preset {
            (Some(p), p.spec(dim, norm).map_err(CliError::usage)?)
        } else if explicit_order {
            (None, explicit_spec(args, dim, norm)?)
        } else if let Some(b) = &base {
            let s = CompoundSpec::new(b.spec.variant, b.spec.head_chain.clone(), b.spec.tail_chain.clone(), dim, norm)
                .map_err(CliError::usage)?;
            (b.preset, s)
        } else {
            (Some(ModelPreset::CompoundE), ModelPreset::CompoundE.spec(dim, norm).map_err(CliError::usage)?)
        };

        let mut train = base.as_ref().map(|b| b.train.clone()).unwrap_or_default();
        if let Some(v) = args.lr {
            train.learning_rate = v;
        }
        if let Some(v) = args.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = args.neg_size {
            train.negative_size = v;
        }
        if let Some(v) = args.alpha {
            train.adversarial_temperature = v;
        }
        if let Some(v) = args.margin {
            train.margin = v;
        }
        if let Some(v) = args.steps {
            train.max_steps = v;
        }
        if let Some(v) = args.seed {
            train.seed = v;
        }
        if let Some(v) = args.optimizer {
            train.optimizer = v;
        }
        if let Some(v) = args.valid_interval {
            train.valid_interval = v;
        }
        if let Some(v) = args.init {
            train.relation_init = v;
        }
        train.deterministic |= args.deterministic;
        if args.unshared_rotation {
            train.shared_rotation = false;
        }
        train.validate().map_err(CliError::usage)?;

        let base_export = base.as_ref().map(|b| b.export.clone()).unwrap_or(ExportOptions {
            bins: DEFAULT_BINS,
            ..ExportOptions::default()
        });
        let export = ExportOptions {
            histograms: args.export_histograms.clone().or(base_export.histograms),
            embeddings: args.export_embeddings.clone().or(base_export.embeddings),
            labels: args.labels.clone().or(base_export.labels),
            bins: args.bins.unwrap_or(base_export.bins),
        };
        let eta = args.eta.or(base.as_ref().map(|b| b.eta)).unwrap_or(DEFAULT_ETA);
        if !(eta >= 0.0) {
            return Err(CliError::Usage("--eta must be non-negative".into()));
        }

        Ok(Self {
            data,
            preset,
            spec,
            train,
            save: args.save.clone().or(base.and_then(|b| b.save)),
            eta,
            export,
        })
    }
}

fn explicit_spec(args: &TrainArgs, dim: usize, norm: Norm) -> Result<CompoundSpec, CliError> {
    let variant = match (args.variant, &args.head_order, &args.tail_order) {
        (Some(v), _, _) => v,
        (None, Some(_), Some(_)) => Variant::Full,
        (None, Some(_), None) => Variant::Head,
        (None, None, _) => Variant::Tail,
    };
    let default = || OperatorChain::parse(DEFAULT_ORDER).expect("default order");
    let (head, tail) = match variant {
        Variant::Head => {
            if args.tail_order.is_some() {
                return Err(CliError::Usage("--tail-order has no effect with --variant head".into()));
            }
            (args.head_order.clone().unwrap_or_else(default), OperatorChain::identity())
        }
        Variant::Tail => {
            if args.head_order.is_some() {
                return Err(CliError::Usage("--head-order has no effect with --variant tail".into()));
            }
            (OperatorChain::identity(), args.tail_order.clone().unwrap_or_else(default))
        }
        Variant::Full => (
            args.head_order.clone().unwrap_or_else(default),
            args.tail_order.clone().unwrap_or_else(default),
        ),
    };
    CompoundSpec::new(variant, head, tail, dim, norm).map_err(CliError::usage)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            preset: Some(ModelPreset::CompoundE),
            spec: ModelPreset::CompoundE.spec(DEFAULT_DIM, Norm::L1).expect("default spec"),
            train: TrainConfig::default(),
            save: None,
            eta: DEFAULT_ETA,
            export: ExportOptions {
                bins: DEFAULT_BINS,
                ..ExportOptions::default()
            },
        }
    }
}
