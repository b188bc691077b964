//! Affine operator algebra on 2D coordinate blocks.
//!
//! An embedding of even dimension `d` is viewed as `d / 2` planar blocks,
//! block `i` holding coordinates `(2i, 2i + 1)`. Translation and scaling act
//! elementwise; rotation turns each block by its own angle. Chains are
//! written in matrix-product order, so `[T, R, S]` scales first, then
//! rotates, then translates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::scalar::Scalar;

/// `|det A|` below this value marks a block operator as singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    Translation,
    Rotation,
    Scaling,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [
        OperatorKind::Translation,
        OperatorKind::Rotation,
        OperatorKind::Scaling,
    ];

    pub fn symbol(self) -> char {
        match self {
            OperatorKind::Translation => 'T',
            OperatorKind::Rotation => 'R',
            OperatorKind::Scaling => 'S',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'T' => Some(OperatorKind::Translation),
            'R' => Some(OperatorKind::Rotation),
            'S' => Some(OperatorKind::Scaling),
            _ => None,
        }
    }
}

/// Ordered cascade of distinct operators, stored in written-product order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OperatorChain {
    order: Vec<OperatorKind>,
}

impl OperatorChain {
    pub fn new(order: Vec<OperatorKind>) -> Result<Self> {
        if order.len() > 3 {
            return Err(KgeError::invalid(format!(
                "operator chain has {} operators, at most 3 allowed",
                order.len()
            )));
        }
        for (i, k) in order.iter().enumerate() {
            if order[..i].contains(k) {
                return Err(KgeError::invalid(format!(
                    "operator `{}` repeated in chain",
                    k.symbol()
                )));
            }
        }
        Ok(Self { order })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Parses a string over `{T, R, S}` such as `"SRT"`; the empty string is
    /// the identity chain.
    pub fn parse(s: &str) -> Result<Self> {
        let order = s
            .chars()
            .map(|c| {
                OperatorKind::from_symbol(c).ok_or_else(|| {
                    KgeError::invalid(format!(
                        "invalid operator `{c}` in `{s}`; valid tokens are T, R, S"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(order)
    }

    /// The six full orderings, in the row order of the variant ablation table.
    pub fn all_orderings() -> [OperatorChain; 6] {
        ["TRS", "TSR", "STR", "RTS", "SRT", "RST"].map(|s| Self::parse(s).unwrap())
    }

    pub fn kinds(&self) -> &[OperatorKind] {
        &self.order
    }

    pub fn contains(&self, kind: OperatorKind) -> bool {
        self.order.contains(&kind)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    /// Operators in the order they act on a vector (rightmost first).
    pub fn application_order(&self) -> impl DoubleEndedIterator<Item = OperatorKind> + '_ {
        self.order.iter().rev().copied()
    }
}

impl fmt::Display for OperatorChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in &self.order {
            write!(f, "{}", k.symbol())?;
        }
        Ok(())
    }
}

impl FromStr for OperatorChain {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl TryFrom<String> for OperatorChain {
    type Error = KgeError;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<OperatorChain> for String {
    fn from(c: OperatorChain) -> String {
        c.to_string()
    }
}

/// Owned parameters of one operator chain: translation (`d`), rotation
/// angles in radians (`d / 2`), scaling (`d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams<T> {
    pub translation: Vec<T>,
    pub angles: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> TransformParams<T> {
    /// Zero translation, zero angles, unit scale.
    pub fn identity(dim: usize) -> Self {
        Self {
            translation: vec![T::zero(); dim],
            angles: vec![T::zero(); dim / 2],
            scale: vec![T::one(); dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            translation: vec![T::zero(); dim],
            angles: vec![T::zero(); dim / 2],
            scale: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn view(&self) -> ParamsView<'_, T> {
        ParamsView {
            translation: &self.translation,
            angles: &self.angles,
            scale: &self.scale,
        }
    }

    pub fn cast<U: Scalar>(&self) -> TransformParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        TransformParams {
            translation: c(&self.translation),
            angles: c(&self.angles),
            scale: c(&self.scale),
        }
    }
}

/// Borrowed operator parameters. Lets the tail chain borrow the head's
/// angles when rotation is shared.
#[derive(Clone, Copy, Debug)]
pub struct ParamsView<'a, T> {
    pub translation: &'a [T],
    pub angles: &'a [T],
    pub scale: &'a [T],
}

impl<T: Scalar> ParamsView<'_, T> {
    fn check(&self, chain: &OperatorChain, dim: usize) -> Result<()> {
        for kind in chain.kinds() {
            let (have, want) = match kind {
                OperatorKind::Translation => (self.translation.len(), dim),
                OperatorKind::Scaling => (self.scale.len(), dim),
                OperatorKind::Rotation => {
                    if dim % 2 != 0 {
                        return Err(KgeError::invalid(format!(
                            "rotation needs an even dimension, got {dim}"
                        )));
                    }
                    (self.angles.len(), dim / 2)
                }
            };
            if have != want {
                return Err(KgeError::invalid(format!(
                    "{kind:?} parameters have length {have}, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

fn check_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(KgeError::invalid(format!(
            "{what}: dimension mismatch ({a} vs {b})"
        )));
    }
    Ok(())
}

pub fn apply_translation<T: Scalar>(x: &[T], t: &[T]) -> Result<Vec<T>> {
    check_same_len(x.len(), t.len(), "translation")?;
    let mut out = x.to_vec();
    translate_in_place(&mut out, t);
    Ok(out)
}

pub fn apply_rotation<T: Scalar>(x: &[T], angles: &[T]) -> Result<Vec<T>> {
    if x.len() % 2 != 0 {
        return Err(KgeError::invalid(format!(
            "rotation needs an even dimension, got {}",
            x.len()
        )));
    }
    check_same_len(x.len() / 2, angles.len(), "rotation angles")?;
    let mut out = x.to_vec();
    rotate_in_place(&mut out, angles);
    Ok(out)
}

pub fn apply_scaling<T: Scalar>(x: &[T], s: &[T]) -> Result<Vec<T>> {
    check_same_len(x.len(), s.len(), "scaling")?;
    let mut out = x.to_vec();
    scale_in_place(&mut out, s);
    Ok(out)
}

pub fn apply_chain<T: Scalar>(
    x: &[T],
    chain: &OperatorChain,
    params: ParamsView<'_, T>,
) -> Result<Vec<T>> {
    params.check(chain, x.len())?;
    let mut out = x.to_vec();
    apply_chain_in_place(&mut out, chain, params);
    Ok(out)
}

#[inline]
pub(crate) fn translate_in_place<T: Scalar>(x: &mut [T], t: &[T]) {
    for (xi, ti) in x.iter_mut().zip(t) {
        *xi += *ti;
    }
}

#[inline]
pub(crate) fn scale_in_place<T: Scalar>(x: &mut [T], s: &[T]) {
    for (xi, si) in x.iter_mut().zip(s) {
        *xi *= *si;
    }
}

#[inline]
pub(crate) fn rotate_in_place<T: Scalar>(x: &mut [T], angles: &[T]) {
    for (block, theta) in x.chunks_exact_mut(2).zip(angles) {
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (block[0], block[1]);
        block[0] = a * cos - b * sin;
        block[1] = a * sin + b * cos;
    }
}

#[inline]
pub(crate) fn apply_kind_in_place<T: Scalar>(
    x: &mut [T],
    kind: OperatorKind,
    params: &ParamsView<'_, T>,
) {
    match kind {
        OperatorKind::Translation => translate_in_place(x, params.translation),
        OperatorKind::Rotation => rotate_in_place(x, params.angles),
        OperatorKind::Scaling => scale_in_place(x, params.scale),
    }
}

/// Unchecked chain application; callers guarantee consistent lengths.
#[inline]
pub(crate) fn apply_chain_in_place<T: Scalar>(
    x: &mut [T],
    chain: &OperatorChain,
    params: ParamsView<'_, T>,
) {
    for kind in chain.application_order() {
        apply_kind_in_place(x, kind, &params);
    }
}

/// Mutable gradient buffers for one chain. `angles` may point into the
/// head buffer when rotation is shared.
pub(crate) struct ParamsGradMut<'a, T> {
    pub translation: &'a mut [T],
    pub angles: &'a mut [T],
    pub scale: &'a mut [T],
}

/// Forward pass that records the input of every operator, in application order.
pub(crate) fn forward_traced<T: Scalar>(
    x: &[T],
    chain: &OperatorChain,
    params: &ParamsView<'_, T>,
) -> (Vec<T>, Vec<Vec<T>>) {
    let mut stages = Vec::with_capacity(chain.len());
    let mut cur = x.to_vec();
    for kind in chain.application_order() {
        stages.push(cur.clone());
        apply_kind_in_place(&mut cur, kind, params);
    }
    (cur, stages)
}

/// Backpropagates `upstream` (gradient w.r.t. the chain output) through the
/// chain. Parameter gradients are accumulated; the input gradient is
/// accumulated into `grad_x`.
pub(crate) fn backward_chain<T: Scalar>(
    chain: &OperatorChain,
    params: &ParamsView<'_, T>,
    stages: &[Vec<T>],
    upstream: &[T],
    grad_x: &mut [T],
    grads: &mut ParamsGradMut<'_, T>,
) {
    let mut g = upstream.to_vec();
    for (kind, input) in chain.kinds().iter().zip(stages.iter().rev()) {
        match kind {
            OperatorKind::Translation => {
                for (gt, gi) in grads.translation.iter_mut().zip(&g) {
                    *gt += *gi;
                }
            }
            OperatorKind::Scaling => {
                for ((gs, gi), (xi, si)) in grads
                    .scale
                    .iter_mut()
                    .zip(g.iter_mut())
                    .zip(input.iter().zip(params.scale))
                {
                    *gs += *gi * *xi;
                    *gi *= *si;
                }
            }
            OperatorKind::Rotation => {
                for (((gth, gb), xb), theta) in grads
                    .angles
                    .iter_mut()
                    .zip(g.chunks_exact_mut(2))
                    .zip(input.chunks_exact(2))
                    .zip(params.angles)
                {
                    let (sin, cos) = theta.sin_cos();
                    let (x0, x1) = (xb[0], xb[1]);
                    let (g0, g1) = (gb[0], gb[1]);
                    // d/dθ of R(θ)x is (-x0 sin - x1 cos, x0 cos - x1 sin)
                    *gth += g0 * (-x0 * sin - x1 * cos) + g1 * (x0 * cos - x1 * sin);
                    gb[0] = g0 * cos + g1 * sin;
                    gb[1] = -g0 * sin + g1 * cos;
                }
            }
        }
    }
    for (gx, gi) in grad_x.iter_mut().zip(&g) {
        *gx += *gi;
    }
}

/// Homogeneous 3x3 matrix, row major.
pub type Mat3<T> = [[T; 3]; 3];

/// Parameters of one 2D block: translation `(vx, vy)`, angle, scale `(sx, sy)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub vx: T,
    pub vy: T,
    pub theta: T,
    pub sx: T,
    pub sy: T,
}

impl<T: Scalar> BlockParams<T> {
    pub fn identity() -> Self {
        Self {
            vx: T::zero(),
            vy: T::zero(),
            theta: T::zero(),
            sx: T::one(),
            sy: T::one(),
        }
    }

    /// Extracts block `i` from chain parameters.
    pub fn from_view(params: &ParamsView<'_, T>, i: usize) -> Self {
        Self {
            vx: params.translation[2 * i],
            vy: params.translation[2 * i + 1],
            theta: params.angles[i],
            sx: params.scale[2 * i],
            sy: params.scale[2 * i + 1],
        }
    }
}

pub fn mat3_identity<T: Scalar>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat3_mul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_apply<T: Scalar>(m: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

pub fn mat3_max_abs_diff<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut worst = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((a[i][j] - b[i][j]).abs());
        }
    }
    worst
}

pub fn translation_matrix<T: Scalar>(vx: T, vy: T) -> Mat3<T> {
    let mut m = mat3_identity();
    m[0][2] = vx;
    m[1][2] = vy;
    m
}

pub fn rotation_matrix<T: Scalar>(theta: T) -> Mat3<T> {
    let (sin, cos) = theta.sin_cos();
    let mut m = mat3_identity();
    m[0][0] = cos;
    m[0][1] = -sin;
    m[1][0] = sin;
    m[1][1] = cos;
    m
}

pub fn scaling_matrix<T: Scalar>(sx: T, sy: T) -> Mat3<T> {
    let mut m = mat3_identity();
    m[0][0] = sx;
    m[1][1] = sy;
    m
}

pub fn operator_matrix<T: Scalar>(kind: OperatorKind, p: &BlockParams<T>) -> Mat3<T> {
    match kind {
        OperatorKind::Translation => translation_matrix(p.vx, p.vy),
        OperatorKind::Rotation => rotation_matrix(p.theta),
        OperatorKind::Scaling => scaling_matrix(p.sx, p.sy),
    }
}

/// Homogeneous matrix of a chain on one 2D block: the product of the
/// operator matrices in written order. Operators absent from the chain
/// contribute nothing.
pub fn compound_matrix_2d<T: Scalar>(chain: &OperatorChain, p: &BlockParams<T>) -> Mat3<T> {
    chain
        .kinds()
        .iter()
        .fold(mat3_identity(), |acc, &k| mat3_mul(&acc, &operator_matrix(k, p)))
}

/// Determinant of the linear (upper-left 2x2) part.
pub fn linear_det<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Inverse of an affine block matrix `[A v; 0 1]` as `[A^-1, -A^-1 v; 0 1]`.
pub fn invert_compound_2d<T: Scalar>(m: &Mat3<T>) -> Result<Mat3<T>> {
    invert_compound_2d_with_tolerance(m, SINGULARITY_TOLERANCE)
}

pub fn invert_compound_2d_with_tolerance<T: Scalar>(m: &Mat3<T>, tolerance: f64) -> Result<Mat3<T>> {
    let det = linear_det(m);
    if !(det.abs().as_f64() >= tolerance) {
        return Err(KgeError::SingularOperator {
            det: det.as_f64(),
            tolerance,
        });
    }
    let inv_det = T::one() / det;
    let a = m[1][1] * inv_det;
    let b = -m[0][1] * inv_det;
    let c = -m[1][0] * inv_det;
    let d = m[0][0] * inv_det;
    let (vx, vy) = (m[0][2], m[1][2]);
    let (z, o) = (T::zero(), T::one());
    Ok([
        [a, b, -(a * vx + b * vy)],
        [c, d, -(c * vx + d * vy)],
        [z, z, o],
    ])
}
