//! Finite-difference oracles shared by the gradient tests and the acceptance suite.
//!
//! Each check builds a scalar probe loss `L = sum(out * R)` for a fixed random
//! `R` (accumulated in f64), evaluates the analytic backward pass with
//! upstream `R`, and compares every input/parameter gradient against central
//! differences.

#![allow(dead_code)]

use rand::Rng;
use ssrfcn::layers::{
    conv2d_backward, conv2d_forward, global_average_pool, global_average_pool_backward, relu,
    relu_backward, sigmoid_bce_loss, BatchNorm, ConvParams,
};
use ssrfcn::rng::seeded;
use ssrfcn::{Real, Shape, Tensor};

/// `|a - n| / max(|a|, |n|, 1)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Entries uniform in `[-1, 1)`.
pub fn random_tensor<T: Real>(shape: Shape, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_vec(shape, random_vec(shape.len(), rng))
}

pub fn random_vec<T: Real>(len: usize, rng: &mut impl Rng) -> Vec<T> {
    (0..len).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect()
}

fn probe<T: Real>(out: &[T], r: &[T]) -> f64 {
    out.iter().zip(r).map(|(a, b)| a.as_f64() * b.as_f64()).sum()
}

/// Central difference of `f` at `values[i]`, dividing by the perturbation
/// actually representable in `T`.
fn central<T: Real>(values: &mut [T], i: usize, h: f64, mut f: impl FnMut(&[T]) -> f64) -> f64 {
    let orig = values[i];
    let up = orig + T::lit(h);
    let down = orig - T::lit(h);
    values[i] = up;
    let lp = f(values);
    values[i] = down;
    let lm = f(values);
    values[i] = orig;
    (lp - lm) / (up.as_f64() - down.as_f64())
}

fn worst(analytic: &[impl Real], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(a.as_f64(), *n))
        .fold(0.0, f64::max)
}

/// Worst relative error over input, weight and bias gradients of a random
/// `(1, 6, 6, 2) -> 2` convolution.
pub fn conv_check<T: Real>(seed: u64, stride: usize, h: f64) -> f64 {
    let mut rng = seeded(seed);
    let x: Tensor<T> = random_tensor(Shape::new(1, 6, 6, 2), &mut rng);
    let mut p = ConvParams::<T>::zeros(3, 2, 2, stride);
    p.weights = random_vec(p.weights.len(), &mut rng);
    p.bias = random_vec(2, &mut rng);
    let r: Vec<T> = random_vec(p.output_shape(x.shape()).len(), &mut rng);
    let up = Tensor::from_vec(p.output_shape(x.shape()), r.clone());
    let g = conv2d_backward(&x, &p, &up).unwrap();

    let mut xd = x.data().to_vec();
    let num_x: Vec<f64> = (0..xd.len())
        .map(|i| {
            central(&mut xd, i, h, |v| {
                let t = Tensor::from_vec(x.shape(), v.to_vec());
                probe(conv2d_forward(&t, &p).unwrap().data(), &r)
            })
        })
        .collect();
    let mut w = p.weights.clone();
    let num_w: Vec<f64> = (0..w.len())
        .map(|i| {
            central(&mut w, i, h, |v| {
                let q = ConvParams { weights: v.to_vec(), ..p.clone() };
                probe(conv2d_forward(&x, &q).unwrap().data(), &r)
            })
        })
        .collect();
    let mut b = p.bias.clone();
    let num_b: Vec<f64> = (0..b.len())
        .map(|i| {
            central(&mut b, i, h, |v| {
                let q = ConvParams { bias: v.to_vec(), ..p.clone() };
                probe(conv2d_forward(&x, &q).unwrap().data(), &r)
            })
        })
        .collect();

    worst(g.input.unwrap().data(), &num_x)
        .max(worst(&g.weights, &num_w))
        .max(worst(&g.bias, &num_b))
}

/// Train-mode batch-norm on a random `(2, 3, 3, 2)` tensor.
pub fn batchnorm_check<T: Real>(seed: u64, h: f64) -> f64 {
    let mut rng = seeded(seed);
    let shape = Shape::new(2, 3, 3, 2);
    let x: Tensor<T> = random_tensor(shape, &mut rng);
    let mut bn = BatchNorm::<T>::new(2);
    bn.gamma = random_vec(2, &mut rng);
    bn.beta = random_vec(2, &mut rng);
    let r: Vec<T> = random_vec(shape.len(), &mut rng);
    bn.forward_train(&x).unwrap();
    let g = bn.backward(&Tensor::from_vec(shape, r.clone())).unwrap();

    let eval = |bn: &BatchNorm<T>, input: &Tensor<T>| -> f64 {
        let mut fresh = bn.clone();
        probe(fresh.forward_train(input).unwrap().data(), &r)
    };
    let mut xd = x.data().to_vec();
    let num_x: Vec<f64> = (0..xd.len())
        .map(|i| central(&mut xd, i, h, |v| eval(&bn, &Tensor::from_vec(shape, v.to_vec()))))
        .collect();
    let mut gamma = bn.gamma.clone();
    let num_gamma: Vec<f64> = (0..2)
        .map(|i| {
            central(&mut gamma, i, h, |v| {
                let mut b = bn.clone();
                b.gamma = v.to_vec();
                eval(&b, &x)
            })
        })
        .collect();
    let mut beta = bn.beta.clone();
    let num_beta: Vec<f64> = (0..2)
        .map(|i| {
            central(&mut beta, i, h, |v| {
                let mut b = bn.clone();
                b.beta = v.to_vec();
                eval(&b, &x)
            })
        })
        .collect();

    worst(g.input.data(), &num_x)
        .max(worst(&g.gamma, &num_gamma))
        .max(worst(&g.beta, &num_beta))
}

/// ReLU on a random tensor with every entry at least 1e-2 away from the kink.
pub fn relu_check<T: Real>(seed: u64, h: f64) -> f64 {
    let mut rng = seeded(seed);
    let shape = Shape::new(2, 3, 3, 2);
    let mut x: Tensor<T> = random_tensor(shape, &mut rng);
    for v in x.data_mut() {
        if v.abs() < T::lit(1e-2) {
            *v = if *v < T::zero() { T::lit(-0.25) } else { T::lit(0.25) };
        }
    }
    let r: Vec<T> = random_vec(shape.len(), &mut rng);
    let g = relu_backward(&x, &Tensor::from_vec(shape, r.clone())).unwrap();
    let mut xd = x.data().to_vec();
    let num: Vec<f64> = (0..xd.len())
        .map(|i| central(&mut xd, i, h, |v| probe(relu(&Tensor::from_vec(shape, v.to_vec())).data(), &r)))
        .collect();
    worst(g.data(), &num)
}

/// Global average pooling of a random `(2, 4, 3, 1)` map.
pub fn gap_check<T: Real>(seed: u64, h: f64) -> f64 {
    let mut rng = seeded(seed);
    let shape = Shape::new(2, 4, 3, 1);
    let x: Tensor<T> = random_tensor(shape, &mut rng);
    let r: Vec<T> = random_vec(2, &mut rng);
    let g = global_average_pool_backward(&r, shape).unwrap();
    let mut xd = x.data().to_vec();
    let num: Vec<f64> = (0..xd.len())
        .map(|i| {
            central(&mut xd, i, h, |v| {
                probe(&global_average_pool(&Tensor::from_vec(shape, v.to_vec())).unwrap(), &r)
            })
        })
        .collect();
    worst(g.data(), &num)
}

/// Fused sigmoid-BCE at a random logit in [-6, 6] for both labels.
pub fn bce_check<T: Real>(seed: u64, h: f64) -> f64 {
    let mut rng = seeded(seed);
    let logit = T::lit(rng.random_range(-6.0..6.0));
    [false, true]
        .into_iter()
        .map(|label| {
            let (_, grad) = sigmoid_bce_loss(logit, label);
            let mut v = vec![logit];
            let num = central(&mut v, 0, h, |v| sigmoid_bce_loss(v[0], label).0.as_f64());
            rel_err(grad.as_f64(), num)
        })
        .fold(0.0, f64::max)
}
