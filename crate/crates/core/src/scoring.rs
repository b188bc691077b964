//! Compound scoring functions and their analytic gradients.
//!
//! A triple scores `‖M·h − M̂·t‖` where `M` and `M̂` are the head and tail
//! operator chains of the relation. Lower is more plausible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::scalar::Scalar;
use crate::transform::{
    apply_chain_in_place, backward_chain, forward_traced, OperatorChain, OperatorKind,
    ParamsGradMut, ParamsView, TransformParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Head,
    Tail,
    Full,
}

impl FromStr for Variant {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(Variant::Head),
            "tail" => Ok(Variant::Tail),
            "full" => Ok(Variant::Full),
            _ => Err(KgeError::invalid(format!(
                "unknown variant `{s}`; expected head, tail or full"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            _ => Err(KgeError::invalid(format!("unknown norm `{s}`; expected l1 or l2"))),
        }
    }
}

/// Declarative description of a model variant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompoundSpec {
    pub variant: Variant,
    pub head_chain: OperatorChain,
    pub tail_chain: OperatorChain,
    pub dim: usize,
    pub norm: Norm,
}

impl CompoundSpec {
    pub fn new(
        variant: Variant,
        head_chain: OperatorChain,
        tail_chain: OperatorChain,
        dim: usize,
        norm: Norm,
    ) -> Result<Self> {
        let spec = Self {
            variant,
            head_chain,
            tail_chain,
            dim,
            norm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn head(chain: OperatorChain, dim: usize, norm: Norm) -> Result<Self> {
        Self::new(Variant::Head, chain, OperatorChain::identity(), dim, norm)
    }

    pub fn tail(chain: OperatorChain, dim: usize, norm: Norm) -> Result<Self> {
        Self::new(Variant::Tail, OperatorChain::identity(), chain, dim, norm)
    }

    pub fn full(head: OperatorChain, tail: OperatorChain, dim: usize, norm: Norm) -> Result<Self> {
        Self::new(Variant::Full, head, tail, dim, norm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(KgeError::invalid("embedding dimension must be positive"));
        }
        match self.variant {
            Variant::Head if !self.tail_chain.is_empty() => {
                return Err(KgeError::invalid("head variant must have an empty tail chain"))
            }
            Variant::Tail if !self.head_chain.is_empty() => {
                return Err(KgeError::invalid("tail variant must have an empty head chain"))
            }
            Variant::Full if self.head_chain.is_empty() || self.tail_chain.is_empty() => {
                return Err(KgeError::invalid("full variant needs non-empty head and tail chains"))
            }
            _ => {}
        }
        let rotates = self.head_chain.contains(OperatorKind::Rotation)
            || self.tail_chain.contains(OperatorKind::Rotation);
        if rotates && self.dim % 2 != 0 {
            return Err(KgeError::invalid(format!(
                "dimension {} must be even when a chain rotates",
                self.dim
            )));
        }
        Ok(())
    }

    /// Whether rotation angles can be shared between the two chains.
    pub fn can_share_rotation(&self) -> bool {
        self.head_chain.contains(OperatorKind::Rotation)
            && self.tail_chain.contains(OperatorKind::Rotation)
    }
}

impl fmt::Display for CompoundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |c: &OperatorChain, v: &str| {
            if c.is_empty() {
                v.to_string()
            } else {
                let ops: Vec<String> = c.kinds().iter().map(|k| k.symbol().to_string()).collect();
                format!("{}·{v}", ops.join("·"))
            }
        };
        write!(
            f,
            "‖{} − {}‖ ({:?}, d={})",
            side(&self.head_chain, "h"),
            side(&self.tail_chain, "t"),
            self.norm,
            self.dim
        )
    }
}

/// Operator parameters of one relation. With `shared_rotation` the tail
/// chain reads the head's angles and `tail.angles` is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationParams<T> {
    pub head: TransformParams<T>,
    pub tail: TransformParams<T>,
    pub shared_rotation: bool,
}

impl<T: Scalar> RelationParams<T> {
    pub fn identity(dim: usize, shared_rotation: bool) -> Self {
        let mut tail = TransformParams::identity(dim);
        if shared_rotation {
            tail.angles.clear();
        }
        Self {
            head: TransformParams::identity(dim),
            tail,
            shared_rotation,
        }
    }

    /// Zero-filled buffer with the same layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut tail = TransformParams::zeros(self.head.dim());
        if self.shared_rotation {
            tail.angles.clear();
        }
        Self {
            head: TransformParams::zeros(self.head.dim()),
            tail,
            shared_rotation: self.shared_rotation,
        }
    }

    pub fn head_view(&self) -> ParamsView<'_, T> {
        self.head.view()
    }

    pub fn tail_view(&self) -> ParamsView<'_, T> {
        ParamsView {
            translation: &self.tail.translation,
            angles: if self.shared_rotation {
                &self.head.angles
            } else {
                &self.tail.angles
            },
            scale: &self.tail.scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn cast<U: Scalar>(&self) -> RelationParams<U> {
        RelationParams {
            head: self.head.cast(),
            tail: self.tail.cast(),
            shared_rotation: self.shared_rotation,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let want_tail_angles = if self.shared_rotation { 0 } else { dim / 2 };
        let ok = self.head.translation.len() == dim
            && self.head.scale.len() == dim
            && self.head.angles.len() == dim / 2
            && self.tail.translation.len() == dim
            && self.tail.scale.len() == dim
            && self.tail.angles.len() == want_tail_angles;
        if !ok {
            return Err(KgeError::invalid(format!(
                "relation parameters do not match dimension {dim}"
            )));
        }
        Ok(())
    }

    /// Adds `other` elementwise (gradient accumulation).
    pub fn add_assign(&mut self, other: &Self) {
        let pairs = [
            (&mut self.head.translation, &other.head.translation),
            (&mut self.head.angles, &other.head.angles),
            (&mut self.head.scale, &other.head.scale),
            (&mut self.tail.translation, &other.tail.translation),
            (&mut self.tail.angles, &other.tail.angles),
            (&mut self.tail.scale, &other.tail.scale),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

/// Which relation tensors a spec optimizes. Operators absent from a chain
/// keep their template (identity) values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainableMask {
    pub head: [bool; 3],
    pub tail: [bool; 3],
}

impl TrainableMask {
    pub fn for_spec(spec: &CompoundSpec, shared_rotation: bool) -> Self {
        let m = |c: &OperatorChain| OperatorKind::ALL.map(|k| c.contains(k));
        let head_rot = spec.head_chain.contains(OperatorKind::Rotation);
        let tail_rot = spec.tail_chain.contains(OperatorKind::Rotation);
        let mut head = m(&spec.head_chain);
        let mut tail = m(&spec.tail_chain);
        if shared_rotation {
            head[1] = head_rot || tail_rot;
            tail[1] = false;
        }
        Self { head, tail }
    }
}

fn norm_of<T: Scalar>(diff: &[T], norm: Norm) -> T {
    match norm {
        Norm::L1 => diff.iter().map(|d| d.abs()).sum(),
        Norm::L2 => diff.iter().map(|d| *d * *d).sum::<T>().sqrt(),
    }
}

fn check_inputs<T: Scalar>(
    h: &[T],
    r: &RelationParams<T>,
    t: &[T],
    spec: &CompoundSpec,
) -> Result<()> {
    spec.validate()?;
    if h.len() != spec.dim || t.len() != spec.dim {
        return Err(KgeError::invalid(format!(
            "entity vectors have lengths {} and {}, spec dimension is {}",
            h.len(),
            t.len(),
            spec.dim
        )));
    }
    r.check(spec.dim)
}

/// Distance score of `(h, r, t)` under `spec`; lower is more plausible.
pub fn score<T: Scalar>(h: &[T], r: &RelationParams<T>, t: &[T], spec: &CompoundSpec) -> Result<T> {
    check_inputs(h, r, t, spec)?;
    Ok(score_unchecked(h, r, t, spec))
}

pub(crate) fn score_unchecked<T: Scalar>(
    h: &[T],
    r: &RelationParams<T>,
    t: &[T],
    spec: &CompoundSpec,
) -> T {
    let mut a = h.to_vec();
    apply_chain_in_place(&mut a, &spec.head_chain, r.head_view());
    let mut b = t.to_vec();
    apply_chain_in_place(&mut b, &spec.tail_chain, r.tail_view());
    for (x, y) in a.iter_mut().zip(&b) {
        *x -= *y;
    }
    norm_of(&a, spec.norm)
}

/// Score of pre-transformed head and tail vectors.
#[inline]
pub(crate) fn distance<T: Scalar>(a: &[T], b: &[T], norm: Norm) -> T {
    match norm {
        Norm::L1 => a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum(),
        Norm::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum::<T>()
            .sqrt(),
    }
}

/// Analytic gradient of the score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradient<T> {
    pub score: T,
    pub head: Vec<T>,
    pub tail: Vec<T>,
    pub relation: RelationParams<T>,
}

/// Partial derivatives of `score` with respect to `h`, `t`, and every
/// relation parameter. Parameters of operators absent from the chains get
/// zero gradient. The L1 subgradient at zero is taken as zero.
pub fn grad_score<T: Scalar>(
    h: &[T],
    r: &RelationParams<T>,
    t: &[T],
    spec: &CompoundSpec,
) -> Result<ScoreGradient<T>> {
    check_inputs(h, r, t, spec)?;
    let mut gh = vec![T::zero(); spec.dim];
    let mut gt = vec![T::zero(); spec.dim];
    let mut grel = r.zeros_like();
    let score = accumulate_score_grad(h, r, t, spec, T::one(), &mut gh, &mut gt, &mut grel);
    Ok(ScoreGradient {
        score,
        head: gh,
        tail: gt,
        relation: grel,
    })
}

/// Adds `upstream * ∂score/∂(·)` into the provided buffers and returns the score.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_score_grad<T: Scalar>(
    h: &[T],
    r: &RelationParams<T>,
    t: &[T],
    spec: &CompoundSpec,
    upstream: T,
    grad_h: &mut [T],
    grad_t: &mut [T],
    grad_rel: &mut RelationParams<T>,
) -> T {
    let head_view = r.head_view();
    let tail_view = r.tail_view();
    let (a, head_stages) = forward_traced(h, &spec.head_chain, &head_view);
    let (b, tail_stages) = forward_traced(t, &spec.tail_chain, &tail_view);
    let diff: Vec<T> = a.iter().zip(&b).map(|(x, y)| *x - *y).collect();
    let score = norm_of(&diff, spec.norm);

    let mut g: Vec<T> = match spec.norm {
        Norm::L1 => diff
            .iter()
            .map(|d| {
                if *d > T::zero() {
                    T::one()
                } else if *d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
            .collect(),
        Norm::L2 => {
            if score > T::zero() {
                diff.iter().map(|d| *d / score).collect()
            } else {
                vec![T::zero(); diff.len()]
            }
        }
    };
    for gi in g.iter_mut() {
        *gi *= upstream;
    }

    {
        let RelationParams { head, .. } = grad_rel;
        let mut head_grads = ParamsGradMut {
            translation: &mut head.translation,
            angles: &mut head.angles,
            scale: &mut head.scale,
        };
        backward_chain(&spec.head_chain, &head_view, &head_stages, &g, grad_h, &mut head_grads);
    }

    let neg: Vec<T> = g.iter().map(|x| -*x).collect();
    let RelationParams { head, tail, shared_rotation } = grad_rel;
    let mut tail_grads = ParamsGradMut {
        translation: &mut tail.translation,
        angles: if *shared_rotation {
            &mut head.angles
        } else {
            &mut tail.angles
        },
        scale: &mut tail.scale,
    };
    backward_chain(&spec.tail_chain, &tail_view, &tail_stages, &neg, grad_t, &mut tail_grads);
    score
}

/// Named special cases that freeze some operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    TransE,
    RotatE,
    PairRE,
    LinearRE,
    CompoundE,
}

impl FromStr for ModelPreset {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelPreset::TransE),
            "rotate" => Ok(ModelPreset::RotatE),
            "pairre" => Ok(ModelPreset::PairRE),
            "linearre" => Ok(ModelPreset::LinearRE),
            "compounde" => Ok(ModelPreset::CompoundE),
            _ => Err(KgeError::invalid(format!(
                "unknown preset `{s}`; expected transe, rotate, pairre, linearre or compounde"
            ))),
        }
    }
}

impl ModelPreset {
    /// The spec this preset expands to. Frozen operators are simply left out
    /// of the chains, so their identity template values never change.
    pub fn spec(self, dim: usize, norm: Norm) -> Result<CompoundSpec> {
        let c = |s: &str| OperatorChain::parse(s).expect("preset chain");
        match self {
            ModelPreset::TransE => CompoundSpec::head(c("T"), dim, norm),
            ModelPreset::RotatE => CompoundSpec::head(c("R"), dim, norm),
            ModelPreset::PairRE => CompoundSpec::full(c("S"), c("S"), dim, norm),
            ModelPreset::LinearRE => CompoundSpec::full(c("TS"), c("S"), dim, norm),
            ModelPreset::CompoundE => CompoundSpec::full(c("TRS"), c("TRS"), dim, norm),
        }
    }

    /// Spec plus the identity parameter template for one relation.
    pub fn expand<T: Scalar>(self, dim: usize, norm: Norm) -> Result<(CompoundSpec, RelationParams<T>)> {
        let spec = self.spec(dim, norm)?;
        let shared = spec.can_share_rotation();
        Ok((spec, RelationParams::identity(dim, shared)))
    }
}

pub fn preset_transe<T: Scalar>(dim: usize) -> Result<(CompoundSpec, RelationParams<T>)> {
    ModelPreset::TransE.expand(dim, Norm::default())
}

pub fn preset_rotate<T: Scalar>(dim: usize) -> Result<(CompoundSpec, RelationParams<T>)> {
    ModelPreset::RotatE.expand(dim, Norm::default())
}

pub fn preset_pairre<T: Scalar>(dim: usize) -> Result<(CompoundSpec, RelationParams<T>)> {
    ModelPreset::PairRE.expand(dim, Norm::default())
}

pub fn preset_linearre<T: Scalar>(dim: usize) -> Result<(CompoundSpec, RelationParams<T>)> {
    ModelPreset::LinearRE.expand(dim, Norm::default())
}
