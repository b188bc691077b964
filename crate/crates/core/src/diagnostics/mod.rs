//! Matrix-form checks of relation properties on learned or constructed
//! parameters, parameter exports and synthetic pattern graphs.

pub(crate) mod export;
mod synthetic;

pub use export::{
    export_entity_embeddings, export_relation_histograms, load_entity_embeddings, load_entity_labels,
    write_histograms_csv, EmbeddingExport, HistogramRow, HISTOGRAM_HEADER,
};
pub use synthetic::{generate_synthetic_kg, verify_pattern, SyntheticKg, SyntheticPattern, SyntheticSize};

use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::model::KgeModel;
use crate::scalar::Scalar;
use crate::scoring::{score_unchecked, CompoundSpec, RelationParams};
use crate::transform::{
    compound_matrix_2d, invert_compound_2d_with_tolerance, linear_det, mat3_max_abs_diff, mat3_mul, BlockParams,
    Mat3, OperatorKind, ParamsView, SINGULARITY_TOLERANCE,
};

/// Scale magnitude below which a trained scale entry counts as zero.
pub const TRAINED_SCALE_TOLERANCE: f64 = 1e-2;

/// Per-block homogeneous matrices of a relation: `head` acts on the head
/// entity, `tail` on the tail entity. An empty chain gives identity blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMatrices<T> {
    pub head: Vec<Mat3<T>>,
    pub tail: Vec<Mat3<T>>,
}

fn chain_blocks<T: Scalar>(chain: &crate::transform::OperatorChain, view: &ParamsView<'_, T>, blocks: usize) -> Vec<Mat3<T>> {
    let has = |k| chain.contains(k);
    (0..blocks)
        .map(|i| {
            let mut p = BlockParams::identity();
            if has(OperatorKind::Translation) {
                p.vx = view.translation[2 * i];
                p.vy = view.translation[2 * i + 1];
            }
            if has(OperatorKind::Rotation) {
                p.theta = view.angles[i];
            }
            if has(OperatorKind::Scaling) {
                p.sx = view.scale[2 * i];
                p.sy = view.scale[2 * i + 1];
            }
            compound_matrix_2d(chain, &p)
        })
        .collect()
}

pub fn relation_matrices<T: Scalar>(r: &RelationParams<T>, spec: &CompoundSpec) -> Result<RelationMatrices<T>> {
    spec.validate()?;
    if spec.dim % 2 != 0 {
        return Err(KgeError::invalid(format!(
            "block matrices need an even dimension, got {}",
            spec.dim
        )));
    }
    if r.dim() != spec.dim {
        return Err(KgeError::invalid(format!(
            "relation dimension {} does not match spec dimension {}",
            r.dim(),
            spec.dim
        )));
    }
    let blocks = spec.dim / 2;
    Ok(RelationMatrices {
        head: chain_blocks(&spec.head_chain, &r.head_view(), blocks),
        tail: chain_blocks(&spec.tail_chain, &r.tail_view(), blocks),
    })
}

/// Max-abs residual of a matrix identity over blocks. Blocks where a needed
/// inverse does not exist are skipped and counted; `value` is `None` when no
/// block could be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: Option<f64>,
    pub blocks: usize,
    pub singular_blocks: usize,
}

impl Residual {
    fn fold<T: Scalar>(blocks: usize, per_block: impl Fn(usize) -> Option<T>) -> Self {
        let mut value: Option<f64> = None;
        let mut singular = 0;
        for i in 0..blocks {
            match per_block(i) {
                Some(v) => value = Some(value.map_or(v.as_f64(), |w| w.max(v.as_f64()))),
                None => singular += 1,
            }
        }
        Residual {
            value,
            blocks,
            singular_blocks: singular,
        }
    }

    /// Residual value, or infinity when not applicable.
    pub fn or_inf(&self) -> f64 {
        self.value.unwrap_or(f64::INFINITY)
    }
}

fn inv<T: Scalar>(m: &Mat3<T>) -> Option<Mat3<T>> {
    invert_compound_2d_with_tolerance(m, SINGULARITY_TOLERANCE).ok()
}

fn check_blocks(lens: &[usize]) {
    assert!(
        lens.windows(2).all(|w| w[0] == w[1]),
        "block lists have different lengths: {lens:?}"
    );
}

/// `max_i ‖M_i M̂_i⁻¹ − M̂_i M_i⁻¹‖`; zero when the relation maps symmetrically.
pub fn symmetry_residual<T: Scalar>(m: &[Mat3<T>], m_hat: &[Mat3<T>]) -> Residual {
    check_blocks(&[m.len(), m_hat.len()]);
    Residual::fold(m.len(), |i| {
        let (mi, hi) = (inv(&m[i])?, inv(&m_hat[i])?);
        Some(mat3_max_abs_diff(&mat3_mul(&m[i], &hi), &mat3_mul(&m_hat[i], &mi)))
    })
}

/// `max_i ‖M̂₂⁻¹M₂ − M₁⁻¹M̂₁‖`; zero when relation 2 inverts relation 1.
pub fn inversion_residual<T: Scalar>(
    m1: &[Mat3<T>],
    m1_hat: &[Mat3<T>],
    m2: &[Mat3<T>],
    m2_hat: &[Mat3<T>],
) -> Residual {
    check_blocks(&[m1.len(), m1_hat.len(), m2.len(), m2_hat.len()]);
    Residual::fold(m1.len(), |i| {
        let lhs = mat3_mul(&inv(&m2_hat[i])?, &m2[i]);
        let rhs = mat3_mul(&inv(&m1[i])?, &m1_hat[i]);
        Some(mat3_max_abs_diff(&lhs, &rhs))
    })
}

/// `max_i ‖M̂₃⁻¹M₃ − (M̂₂⁻¹M₂)(M̂₁⁻¹M₁)‖`; zero when relation 3 is the
/// composition of relations 1 then 2.
pub fn composition_residual<T: Scalar>(r1: &RelationMatrices<T>, r2: &RelationMatrices<T>, r3: &RelationMatrices<T>) -> Residual {
    check_blocks(&[r1.head.len(), r2.head.len(), r3.head.len()]);
    Residual::fold(r1.head.len(), |i| {
        let e = |r: &RelationMatrices<T>| Some(mat3_mul(&inv(&r.tail[i])?, &r.head[i]));
        let lhs = e(r3)?;
        let rhs = mat3_mul(&e(r2)?, &e(r1)?);
        Some(mat3_max_abs_diff(&lhs, &rhs))
    })
}

/// `max_i ‖(M₁M̂₁⁻¹)(M₂M̂₂⁻¹) − (M₂M̂₂⁻¹)(M₁M̂₁⁻¹)‖`; zero when the two
/// relations commute.
pub fn commutation_residual<T: Scalar>(r1: &RelationMatrices<T>, r2: &RelationMatrices<T>) -> Residual {
    check_blocks(&[r1.head.len(), r2.head.len()]);
    Residual::fold(r1.head.len(), |i| {
        let p = |r: &RelationMatrices<T>| Some(mat3_mul(&r.head[i], &inv(&r.tail[i])?));
        let (a, b) = (p(r1)?, p(r2)?);
        Some(mat3_max_abs_diff(&mat3_mul(&a, &b), &mat3_mul(&b, &a)))
    })
}

/// Copy of `r` with head and tail scales multiplied by `gamma`.
pub fn scale_relation<T: Scalar>(r: &RelationParams<T>, gamma: T) -> RelationParams<T> {
    let mut out = r.clone();
    out.head.scale.iter_mut().for_each(|s| *s *= gamma);
    out.tail.scale.iter_mut().for_each(|s| *s *= gamma);
    out
}

/// `max_k f_{r1}(h_k, t_k) − f_{r2}(h_k, t_k)` over the sampled pairs. Non-positive
/// when `r1` is a sub-relation of `r2` in the scaled sense: same translation
/// and rotation, scales multiplied by `γ ≤ 1`, translation zero, chain `TRS`.
pub fn subrelation_score_gap<T: Scalar>(
    r1: &RelationParams<T>,
    r2: &RelationParams<T>,
    spec: &CompoundSpec,
    pairs: &[(Vec<T>, Vec<T>)],
) -> Result<f64> {
    spec.validate()?;
    if pairs.is_empty() {
        return Err(KgeError::invalid("no sample pairs"));
    }
    let mut worst = f64::NEG_INFINITY;
    for (h, t) in pairs {
        if h.len() != spec.dim || t.len() != spec.dim {
            return Err(KgeError::invalid("sample vector does not match spec dimension"));
        }
        let gap = score_unchecked(h, r1, t, spec).as_f64() - score_unchecked(h, r2, t, spec).as_f64();
        worst = worst.max(gap);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartnerResidual {
    pub partner: u32,
    pub residual: Residual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationDiagnostics {
    pub relation: u32,
    /// Fraction of trainable scale entries with magnitude below the tolerance.
    pub singularity_fraction: f64,
    /// Smallest `|det A|` over head and tail blocks.
    pub block_det_min: f64,
    pub symmetry_residual: Residual,
    /// Relation whose inversion residual against this one is smallest.
    pub best_inverse: Option<PartnerResidual>,
}

/// Fraction of scale entries in scaling chains with `|s| < tolerance`.
/// Zero when neither chain scales.
pub fn singularity_fraction<T: Scalar>(r: &RelationParams<T>, spec: &CompoundSpec, tolerance: f64) -> f64 {
    let mut total = 0usize;
    let mut small = 0usize;
    for (chain, scale) in [(&spec.head_chain, &r.head.scale), (&spec.tail_chain, &r.tail.scale)] {
        if chain.contains(OperatorKind::Scaling) {
            total += scale.len();
            small += scale.iter().filter(|s| s.abs().as_f64() < tolerance).count();
        }
    }
    if total == 0 {
        0.0
    } else {
        small as f64 / total as f64
    }
}

pub fn block_det_min<T: Scalar>(m: &RelationMatrices<T>) -> f64 {
    m.head
        .iter()
        .chain(&m.tail)
        .map(|b| linear_det(b).abs().as_f64())
        .fold(f64::INFINITY, f64::min)
}

/// Diagnostics for every relation. `scale_tolerance` sets what counts as a
/// zero scale entry.
pub fn diagnose_relations<T: Scalar>(model: &KgeModel<T>, scale_tolerance: f64) -> Result<Vec<RelationDiagnostics>> {
    diagnose_selected(model, &(0..model.relation_count() as u32).collect::<Vec<_>>(), scale_tolerance)
}

pub fn diagnose_selected<T: Scalar>(
    model: &KgeModel<T>,
    relations: &[u32],
    scale_tolerance: f64,
) -> Result<Vec<RelationDiagnostics>> {
    let mats = model
        .relations
        .iter()
        .map(|r| relation_matrices(r, &model.spec))
        .collect::<Result<Vec<_>>>()?;
    relations
        .iter()
        .map(|&id| {
            let r = *mats
                .get(id as usize)
                .as_ref()
                .ok_or_else(|| KgeError::invalid(format!("relation id {id} out of range")))?;
            let best_inverse = mats
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != id as usize)
                .map(|(j, other)| PartnerResidual {
                    partner: j as u32,
                    residual: inversion_residual(&r.head, &r.tail, &other.head, &other.tail),
                })
                .min_by(|a, b| a.residual.or_inf().total_cmp(&b.residual.or_inf()));
            Ok(RelationDiagnostics {
                relation: id,
                singularity_fraction: singularity_fraction(&model.relations[id as usize], &model.spec, scale_tolerance),
                block_det_min: block_det_min(r),
                symmetry_residual: symmetry_residual(&r.head, &r.tail),
                best_inverse,
            })
        })
        .collect()
}

/// Resolves a name against `names`, suggesting the closest matches when absent.
pub fn lookup_name(names: &[String], kind: &'static str, name: &str) -> Result<u32> {
    if let Some(i) = names.iter().position(|n| n == name) {
        return Ok(i as u32);
    }
    let mut ranked: Vec<(usize, &String)> = names.iter().map(|n| (strsim::levenshtein(n, name), n)).collect();
    ranked.sort();
    Err(KgeError::Lookup {
        kind,
        name: name.to_string(),
        suggestions: ranked.into_iter().take(3).map(|(_, n)| n.clone()).collect(),
    })
}
