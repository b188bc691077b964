use crate::scalar::Scalar;

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Temperature softmax `exp(α·s_j) / Σ_i exp(α·s_i)` over `scores`.
/// The result is treated as a constant by the loss gradient.
pub fn self_adversarial_weights<T: Scalar>(scores: &[T], temperature: T) -> Vec<T> {
    if scores.is_empty() {
        return Vec::new();
    }
    let logits: Vec<T> = scores.iter().map(|s| *s * temperature).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|l| (*l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `−ln σ(ζ − f⁺) − Σ_i p_i ln σ(f⁻_i − ζ)` for distance scores `f`.
pub fn loss<T: Scalar>(pos_score: T, neg_scores: &[T], weights: &[T], margin: T) -> T {
    let negative: T = neg_scores
        .iter()
        .zip(weights)
        .map(|(f, p)| *p * log_sigmoid(*f - margin))
        .sum();
    -log_sigmoid(margin - pos_score) - negative
}

/// Derivatives of [`loss`] with respect to the positive score and each
/// negative score, holding the weights fixed.
pub fn loss_gradient<T: Scalar>(pos_score: T, neg_scores: &[T], weights: &[T], margin: T) -> (T, Vec<T>) {
    let d_pos = sigmoid(pos_score - margin);
    let d_neg = neg_scores
        .iter()
        .zip(weights)
        .map(|(f, p)| -*p * sigmoid(margin - *f))
        .collect();
    (d_pos, d_neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_examples() {
        let w = self_adversarial_weights::<f64>(&[3.0, 3.0, 3.0, 3.0], 2.0);
        assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let w = self_adversarial_weights::<f64>(&[0.1, 5.0, -2.0], 0.0);
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = self_adversarial_weights::<f64>(&[1.0, 2.0], 1.0);
        assert!((w[0] - 0.26894).abs() < 1e-5 && (w[1] - 0.73106).abs() < 1e-5, "{w:?}");
        let w = self_adversarial_weights::<f64>(&[1000.0, 0.0], 1.0);
        assert!(w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn loss_at_margin_is_two_log_two() {
        let l = loss(6.0, &[6.0, 6.0], &[0.5, 0.5], 6.0);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_limit() {
        let margin = 4.0f64;
        let l = loss(0.0, &[1e6], &[1.0], margin);
        let want = -log_sigmoid(margin);
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(700.0f64)).abs() < 1e-300);
        assert!((log_sigmoid(-700.0f64) + 700.0).abs() < 1e-9);
        assert!(log_sigmoid(-800.0f64).is_finite());
        assert!(loss(800.0f64, &[-800.0], &[1.0], 0.0).is_finite());
    }
}
