use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel batch normalization over `(n, h, w)`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
    cache: Option<BnCache<T>>,
}

/// State retained by a train-mode forward for the backward pass.
#[derive(Clone, Debug)]
struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T = f32> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, T::lit(DEFAULT_MOMENTUM), T::lit(DEFAULT_EPSILON))
    }

    pub fn with_hyper(channels: usize, momentum: T, epsilon: T) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_channels(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().c != self.channels() {
            return Err(Error::config(format!(
                "batch-norm has {} channels, input has {}",
                self.channels(),
                input.shape().c
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(input),
            Mode::Infer => self.forward_infer(input),
        }
    }

    /// Normalizes with the running statistics; never mutates state.
    pub fn forward_infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_channels(input)?;
        let c = self.channels();
        let (scale, shift): (Vec<T>, Vec<T>) = (0..c)
            .map(|k| {
                let s = self.gamma[k] / (self.running_var[k] + self.epsilon).sqrt();
                (s, self.beta[k] - self.running_mean[k] * s)
            })
            .unzip();
        let mut out = input.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = px[k] * scale[k] + shift[k];
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_channels(input)?;
        let s = input.shape();
        let count = s.n * s.h * s.w;
        if count < 2 {
            return Err(Error::DegenerateBatch(count));
        }
        let c = self.channels();
        let inv_count = T::one() / T::lit(count as f64);

        let mut mean = vec![T::zero(); c];
        for px in input.data().chunks_exact(c) {
            for k in 0..c {
                mean[k] += px[k];
            }
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_count);

        let mut var = vec![T::zero(); c];
        for px in input.data().chunks_exact(c) {
            for k in 0..c {
                let d = px[k] - mean[k];
                var[k] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v * inv_count);

        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + self.epsilon).sqrt())
            .collect();

        let mut normalized = input.clone();
        for px in normalized.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = (px[k] - mean[k]) * inv_std[k];
            }
        }
        let mut out = normalized.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = px[k] * self.gamma[k] + self.beta[k];
            }
        }

        let keep = self.momentum;
        let blend = T::one() - keep;
        for k in 0..c {
            self.running_mean[k] = keep * self.running_mean[k] + blend * mean[k];
            self.running_var[k] = keep * self.running_var[k] + blend * var[k];
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std,
        });
        Ok(out)
    }

    /// Exact gradients of the most recent train-mode forward. Consumes the cache.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<BnGrads<T>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::Usage("batch-norm backward called without a train-mode forward".into())
        })?;
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::config(format!(
                "upstream gradient shape {} does not match batch-norm input {}",
                upstream.shape(),
                cache.normalized.shape()
            )));
        }
        let c = self.channels();
        let s = upstream.shape();
        let inv_count = T::one() / T::lit((s.n * s.h * s.w) as f64);

        let mut grad_beta = vec![T::zero(); c];
        let mut grad_gamma = vec![T::zero(); c];
        for (g, xh) in upstream
            .data()
            .chunks_exact(c)
            .zip(cache.normalized.data().chunks_exact(c))
        {
            for k in 0..c {
                grad_beta[k] += g[k];
                grad_gamma[k] += g[k] * xh[k];
            }
        }

        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        let coeff: Vec<T> = (0..c).map(|k| self.gamma[k] * cache.inv_std[k]).collect();
        let mean_g: Vec<T> = grad_beta.iter().map(|&v| v * inv_count).collect();
        let mean_gx: Vec<T> = grad_gamma.iter().map(|&v| v * inv_count).collect();
        let mut grad_in = upstream.clone();
        for (g, xh) in grad_in
            .data_mut()
            .chunks_exact_mut(c)
            .zip(cache.normalized.data().chunks_exact(c))
        {
            for k in 0..c {
                g[k] = coeff[k] * (g[k] - mean_g[k] - xh[k] * mean_gx[k]);
            }
        }

        Ok(BnGrads {
            input: grad_in,
            gamma: grad_gamma,
            beta: grad_beta,
        })
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::<f32>::new(2);
        bn.beta = vec![0.25, -1.5];
        bn.gamma = vec![3.0, 2.0];
        let x = Tensor::from_vec(Shape::new(2, 2, 1, 2), vec![0.5, -2.0, 0.5, -2.0, 0.5, -2.0, 0.5, -2.0]);
        let y = bn.forward_train(&x).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.25, -1.5]);
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNorm::<f32>::new(3);
        let data: Vec<f32> = (0..3 * 40).map(|i| ((i * 7919) % 113) as f32 * 0.37 - 9.0).collect();
        let x = Tensor::from_vec(Shape::new(4, 5, 2, 3), data);
        let y = bn.forward_train(&x).unwrap();
        for k in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(k).step_by(3).map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn infer_uses_running_statistics() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0];
        bn.gamma = vec![3.0];
        bn.beta = vec![1.0];
        let y = bn
            .forward(&Tensor::filled(Shape::new(1, 1, 1, 1), 4.0), Mode::Infer)
            .unwrap();
        let expected = 3.0 * (4.0 - 2.0) / (4.0f64 + 1e-5).sqrt() + 1.0;
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert!((y.data()[0] - 4.0).abs() < 1e-5);
        assert!(!bn.has_cache());
        assert_eq!(bn.running_mean, vec![2.0]);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 1), vec![1.0, 3.0]);
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_degenerate() {
        let mut bn = BatchNorm::<f32>::new(1);
        let x = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0);
        assert!(matches!(bn.forward_train(&x), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let mut bn = BatchNorm::<f32>::new(1);
        let g = Tensor::zeros(Shape::new(1, 2, 2, 1));
        assert!(matches!(bn.backward(&g), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_upstream_and_beta_gradient() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = Tensor::from_vec(
            Shape::new(1, 2, 2, 2),
            vec![0.1, 2.0, -0.4, 1.0, 0.9, 0.3, 0.2, -1.0],
        );
        bn.forward_train(&x).unwrap();
        let g = bn.backward(&Tensor::zeros(x.shape())).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.gamma, vec![0.0, 0.0]);
        assert_eq!(g.beta, vec![0.0, 0.0]);

        bn.forward_train(&x).unwrap();
        let up = Tensor::from_vec(x.shape(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let g = bn.backward(&up).unwrap();
        assert_eq!(g.beta, vec![16.0, 20.0]);
    }
}
