use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::scalar::Scalar;
use crate::scoring::{score_unchecked, CompoundSpec, RelationParams};
use crate::transform::{apply_chain_in_place, OperatorKind};

/// Dense row-major entity matrix, one row of `dim` values per entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityTable<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EntityTable<T> {
    pub fn zeros(count: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); count * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(KgeError::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationInit {
    /// Small uniform translations, unit scales, angles uniform in [-π, π].
    #[default]
    Random,
    /// Zero translation and angles, unit scales.
    Identity,
}

/// Entity table plus per-relation operator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KgeModel<T> {
    pub spec: CompoundSpec,
    pub entities: EntityTable<T>,
    pub relations: Vec<RelationParams<T>>,
}

impl<T: Scalar> KgeModel<T> {
    /// Random initialization: entity rows uniform in `[-0.5, 0.5] / √d` and
    /// then projected to unit norm.
    pub fn init<R: Rng>(
        spec: CompoundSpec,
        entity_count: usize,
        relation_count: usize,
        shared_rotation: bool,
        relation_init: RelationInit,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let bound = 0.5 / (d as f64).sqrt();
        let mut entities = EntityTable::zeros(entity_count, d);
        for i in 0..entity_count {
            let row = entities.row_mut(i);
            loop {
                for x in row.iter_mut() {
                    *x = T::of(rng.random_range(-bound..=bound));
                }
                let n: T = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                if n.as_f64() > 1e-12 {
                    row.iter_mut().for_each(|x| *x /= n);
                    break;
                }
            }
        }
        let shared = shared_rotation && spec.can_share_rotation();
        let relations = (0..relation_count)
            .map(|_| {
                let mut r = RelationParams::identity(d, shared);
                if relation_init == RelationInit::Random {
                    // Draws happen for every side so the stream does not depend
                    // on the chains; operators absent from a chain keep identity values.
                    for (side, chain) in [(&mut r.head, &spec.head_chain), (&mut r.tail, &spec.tail_chain)] {
                        let translate = chain.contains(OperatorKind::Translation);
                        let rotate = chain.contains(OperatorKind::Rotation);
                        for x in side.translation.iter_mut() {
                            let v = T::of(rng.random_range(-bound..=bound));
                            if translate {
                                *x = v;
                            }
                        }
                        for a in side.angles.iter_mut() {
                            let v = T::of(rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI));
                            if rotate {
                                *a = v;
                            }
                        }
                    }
                }
                r
            })
            .collect();
        Ok(Self {
            spec,
            entities,
            relations,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn shared_rotation(&self) -> bool {
        self.relations.first().is_some_and(|r| r.shared_rotation)
    }

    pub fn score(&self, head: u32, relation: u32, tail: u32) -> T {
        score_unchecked(
            self.entities.row(head as usize),
            &self.relations[relation as usize],
            self.entities.row(tail as usize),
            &self.spec,
        )
    }

    /// Head entity after the relation's head chain.
    pub fn transform_head(&self, entity: u32, relation: u32) -> Vec<T> {
        let mut v = self.entities.row(entity as usize).to_vec();
        apply_chain_in_place(&mut v, &self.spec.head_chain, self.relations[relation as usize].head_view());
        v
    }

    /// Tail entity after the relation's tail chain.
    pub fn transform_tail(&self, entity: u32, relation: u32) -> Vec<T> {
        let mut v = self.entities.row(entity as usize).to_vec();
        apply_chain_in_place(&mut v, &self.spec.tail_chain, self.relations[relation as usize].tail_view());
        v
    }

    pub fn cast<U: Scalar>(&self) -> KgeModel<U> {
        KgeModel {
            spec: self.spec.clone(),
            entities: EntityTable {
                dim: self.entities.dim,
                data: self.entities.data.iter().map(|x| U::of(x.as_f64())).collect(),
            },
            relations: self.relations.iter().map(|r| r.cast()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ModelPreset, Norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_unit_norm_and_seeded() {
        let spec = ModelPreset::CompoundE.spec(8, Norm::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = KgeModel::<f64>::init(spec.clone(), 5, 2, true, RelationInit::Random, &mut rng).unwrap();
        for row in m.entities.rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(m.shared_rotation());
        assert!(m.relations[0].tail.angles.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let again = KgeModel::<f64>::init(spec, 5, 2, true, RelationInit::Random, &mut rng).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn identity_init_scores_plain_distance() {
        let spec = ModelPreset::CompoundE.spec(4, Norm::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = KgeModel::<f64>::init(spec, 3, 1, false, RelationInit::Identity, &mut rng).unwrap();
        let want: f64 = m
            .entities
            .row(0)
            .iter()
            .zip(m.entities.row(1))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!((m.score(0, 0, 1) - want).abs() < 1e-15);
    }
}
