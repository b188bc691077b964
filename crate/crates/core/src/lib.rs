//! Knowledge graph embeddings built from cascaded translation, rotation and
//! scaling operators.
//!
//! The core is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the aliases below name the common instantiations.

pub mod checkpoint;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod scalar;
pub mod scoring;
pub mod training;
pub mod transform;

pub use dataset::{
    categorize_relations, complex_triple_fraction, load_dataset, FilterIndex, RelationCategory, RelationType, Split,
    Triple, TripleStore, Vocabulary, DEFAULT_ETA,
};
pub use error::{KgeError, Result};
pub use evaluation::{evaluate, filtered_rank, Direction, EvalOptions, EvalReport, Metrics};
pub use model::{EntityTable, KgeModel, RelationInit};
pub use scalar::Scalar;
pub use scoring::{
    grad_score, preset_linearre, preset_pairre, preset_rotate, preset_transe, score, CompoundSpec, ModelPreset, Norm,
    RelationParams, ScoreGradient, Variant,
};
pub use training::{train, TrainConfig, TrainOutcome};
pub use transform::{
    apply_chain, apply_rotation, apply_scaling, apply_translation, compound_matrix_2d, invert_compound_2d, Mat3,
    OperatorChain, OperatorKind, ParamsView, TransformParams,
};

pub type Model32 = KgeModel<f32>;
pub type Model64 = KgeModel<f64>;
pub type RelationParams32 = RelationParams<f32>;
pub type RelationParams64 = RelationParams<f64>;
pub type TransformParams32 = TransformParams<f32>;
pub type TransformParams64 = TransformParams<f64>;
pub type EntityTable32 = EntityTable<f32>;
pub type EntityTable64 = EntityTable<f64>;
