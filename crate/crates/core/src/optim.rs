//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Completed steps.
    pub t: u64,
    /// First moments, one buffer per parameter tensor.
    pub m: Vec<Vec<T>>,
    /// Second moments, one buffer per parameter tensor.
    pub v: Vec<Vec<T>>,
}

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

impl<T: Real> AdamState<T> {
    /// Zeroed moments for parameter tensors of the given lengths.
    pub fn new(sizes: &[usize], lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::lit(DEFAULT_BETA1),
            beta2: T::lit(DEFAULT_BETA2),
            epsilon: T::lit(DEFAULT_EPSILON),
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update of every parameter tensor. Nothing is modified when a
    /// gradient is non-finite or a shape disagrees.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::config(format!(
                    "tensor {i}: parameter {} / gradient {} / moment {} lengths differ",
                    p.len(),
                    g.len(),
                    self.m[i].len()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient at tensor {i}, element {j}"
                )));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let one = T::one();
        let correct1 = one - self.beta1.powi(t);
        let correct2 = one - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (one - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (one - self.beta2) * gj * gj;
                let m_hat = m[j] / correct1;
                let v_hat = v[j] / correct2;
                p[j] = p[j] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
