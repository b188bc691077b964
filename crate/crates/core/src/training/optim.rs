use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::KgeError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self, KgeError> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(KgeError::invalid(format!("unknown optimizer `{s}`; expected adam or sgd"))),
        }
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
}

/// Adam with bias correction. Moments are kept per tensor, indexed by the
/// tensor's position in the slices passed to `step`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    Sgd(Sgd),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { learning_rate }),
        }
    }

    /// One update over aligned parameter and gradient tensors. The tensor
    /// list must keep the same layout across calls.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        debug_assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => {
                let lr = T::of(s.learning_rate);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, gx) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * *gx;
                    }
                }
            }
        }
    }
}
