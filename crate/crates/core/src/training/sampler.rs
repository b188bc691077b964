use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Triple;
use crate::error::{KgeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionSide {
    Head,
    Tail,
}

impl CorruptionSide {
    pub fn flip(self) -> Self {
        match self {
            CorruptionSide::Head => CorruptionSide::Tail,
            CorruptionSide::Tail => CorruptionSide::Head,
        }
    }
}

/// Negatives for one positive triple: `corrupted` replaces `side`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeBatch {
    pub corrupted: Vec<u32>,
    pub side: CorruptionSide,
    pub source: Triple,
}

impl NegativeBatch {
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.corrupted.iter().map(move |&e| match self.side {
            CorruptionSide::Head => Triple { head: e, ..self.source },
            CorruptionSide::Tail => Triple { tail: e, ..self.source },
        })
    }
}

/// Draws `n` entities uniformly with replacement. No filtering against
/// known triples happens here.
pub fn sample_negatives<R: Rng>(
    triple: Triple,
    n: usize,
    side: CorruptionSide,
    entity_count: usize,
    rng: &mut R,
) -> Result<NegativeBatch> {
    if entity_count < 2 {
        return Err(KgeError::InvalidState(format!(
            "negative sampling needs at least 2 entities, have {entity_count}"
        )));
    }
    if n == 0 {
        return Err(KgeError::invalid("negative sample size must be at least 1"));
    }
    let corrupted = (0..n)
        .map(|_| rng.random_range(0..entity_count as u32))
        .collect();
    Ok(NegativeBatch {
        corrupted,
        side,
        source: triple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn support_and_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Triple::new(0, 0, 1);
        for _ in 0..20 {
            let b = sample_negatives(t, 1, CorruptionSide::Tail, 2, &mut rng).unwrap();
            assert!(b.corrupted[0] < 2);
            let neg = b.triples().next().unwrap();
            assert_eq!((neg.head, neg.relation), (0, 0));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let t = Triple::new(0, 0, 1);
        let a = sample_negatives(t, 64, CorruptionSide::Head, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_negatives(t, 64, CorruptionSide::Head, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Triple::new(0, 0, 0);
        assert!(matches!(
            sample_negatives(t, 3, CorruptionSide::Head, 0, &mut rng),
            Err(KgeError::InvalidState(_))
        ));
        assert!(sample_negatives(t, 0, CorruptionSide::Head, 4, &mut rng).is_err());
    }

    #[test]
    fn chi_square_uniformity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let b = sample_negatives(Triple::new(0, 0, 1), 100_000, CorruptionSide::Tail, 10, &mut rng).unwrap();
        let mut counts = [0f64; 10];
        for e in &b.corrupted {
            counts[*e as usize] += 1.0;
        }
        let expected = 10_000.0;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi2 = {stat}, p = {p}");
    }
}
