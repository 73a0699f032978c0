//! The five-layer fully convolutional backbone.
//!
//! Four `conv(stride 2) -> batch-norm -> ReLU` blocks downsample the input by
//! 16, then a 3x3 stride-1 head produces a single-channel score map. The
//! spoof logit is the spatial mean of that map.

mod weights;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_opt, conv2d_forward, global_average_pool, global_average_pool_backward, relu,
    relu_backward, sigmoid, BatchNorm, ConvParams, Mode,
};
use crate::optim::{AdamState, DEFAULT_LR};
use crate::rng;
use crate::tensor::Tensor;

pub use weights::{load_model, read_model, save_model, write_model, WEIGHTS_EXTENSION};

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Decision threshold on the spoofness score: spoof iff `score >= 0.5`.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Layer widths and strides of the backbone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcnConfig {
    pub input_channels: usize,
    pub channels: [usize; 5],
    pub strides: [usize; 5],
    pub kernel: usize,
}

impl Default for FcnConfig {
    fn default() -> Self {
        FcnConfig {
            input_channels: 3,
            channels: [64, 128, 256, 512, 1],
            strides: [2, 2, 2, 2, 1],
            kernel: 3,
        }
    }
}

impl FcnConfig {
    pub fn downsample_factor(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels[4] != 1 {
            return Err(Error::config("the score-map head must have 1 output channel"));
        }
        if self.kernel == 0 || self.strides.contains(&0) || self.channels.contains(&0) {
            return Err(Error::config("kernel, strides and channels must be positive"));
        }
        Ok(())
    }

    /// `(cin, cout)` of each convolution.
    pub fn layer_io(&self) -> [(usize, usize); 5] {
        let mut out = [(0, 0); 5];
        let mut cin = self.input_channels;
        for (i, &cout) in self.channels.iter().enumerate() {
            out[i] = (cin, cout);
            cin = cout;
        }
        out
    }

    /// Score-map size for an input of `h x w`.
    pub fn score_map_dims(&self, h: usize, w: usize) -> (usize, usize) {
        self.strides
            .iter()
            .fold((h, w), |(h, w), &s| (h.div_ceil(s), w.div_ceil(s)))
    }
}

/// One image's grid of raw (pre-sigmoid) local decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub image_height: usize,
    pub image_width: usize,
}

impl ScoreMap {
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// `(row, col)` of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn mean(&self) -> f32 {
        let mut acc = 0.0f32;
        for &v in &self.values {
            acc += v;
        }
        acc / self.values.len() as f32
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `(n, h_s, w_s, 1)`.
    pub score_maps: Tensor,
    pub logits: Vec<f32>,
    image_height: usize,
    image_width: usize,
}

impl ForwardOutput {
    pub fn score_map(&self, n: usize) -> ScoreMap {
        let s = self.score_maps.shape();
        ScoreMap {
            height: s.h,
            width: s.w,
            values: self.score_maps.sample(n).to_vec(),
            image_height: self.image_height,
            image_width: self.image_width,
        }
    }

    pub fn spoofness(&self) -> Vec<f32> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }
}

/// Gradients of every trainable tensor, in [`FcnModel::parameter_names`] order.
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Vec<f32>>);

#[derive(Clone, Debug)]
pub struct FcnModel {
    config: FcnConfig,
    pub convs: Vec<ConvParams>,
    pub norms: Vec<BatchNorm>,
    pub optimizer: AdamState,
    /// Inputs of each convolution, kept by a train-mode forward.
    activations: Option<Vec<Tensor>>,
}

impl FcnModel {
    /// Freshly initialized model: conv weights ~ N(0, 0.02^2), zero biases,
    /// unit gamma, zero beta, running stats (0, 1).
    pub fn new(config: FcnConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid normal parameters");
        let mut rng = rng::stream(seed, "init", 0);
        for conv in &mut model.convs {
            for w in &mut conv.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// Canonical architecture with the given seed.
    pub fn init(seed: u64) -> Self {
        Self::new(FcnConfig::default(), seed).expect("default config is valid")
    }

    /// All-zero parameters; used as a target when loading weights.
    pub(crate) fn zeroed(config: FcnConfig) -> Result<Self> {
        config.validate()?;
        let convs: Vec<ConvParams> = config
            .layer_io()
            .iter()
            .zip(config.strides)
            .map(|(&(cin, cout), s)| ConvParams::zeros(config.kernel, cin, cout, s))
            .collect();
        let norms = config.channels[..4].iter().map(|&c| BatchNorm::new(c)).collect();
        let mut model = FcnModel {
            config,
            convs,
            norms,
            optimizer: AdamState::new(&[], DEFAULT_LR as f32),
            activations: None,
        };
        model.reset_optimizer(DEFAULT_LR as f32);
        Ok(model)
    }

    pub fn config(&self) -> &FcnConfig {
        &self.config
    }

    /// Fresh Adam state at the given learning rate.
    pub fn reset_optimizer(&mut self, lr: f32) {
        let sizes: Vec<usize> = self.parameters().iter().map(|p| p.len()).collect();
        self.optimizer = AdamState::new(&sizes, lr);
    }

    /// Weights plus biases of all convolutions.
    pub fn conv_parameter_count(&self) -> usize {
        self.convs.iter().map(ConvParams::parameter_count).sum()
    }

    /// Batch-norm gamma and beta.
    pub fn norm_parameter_count(&self) -> usize {
        self.norms.iter().map(|b| 2 * b.channels()).sum()
    }

    /// Names of trainable tensors, in optimizer and gradient order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
            if i < self.norms.len() {
                names.push(format!("bn{}.gamma", i + 1));
                names.push(format!("bn{}.beta", i + 1));
            }
        }
        names
    }

    pub fn parameters(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push(&conv.weights);
            out.push(&conv.bias);
            if let Some(bn) = self.norms.get(i) {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for conv in self.convs.iter_mut() {
            out.push(&mut conv.weights);
            out.push(&mut conv.bias);
            if let Some(bn) = norms.next() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.c != self.config.input_channels {
            return Err(Error::config(format!(
                "expected {} input channels, got {}",
                self.config.input_channels, s.c
            )));
        }
        let min = self.config.downsample_factor();
        if s.h < min || s.w < min {
            return Err(Error::InputSize(format!(
                "input {}x{} is smaller than {min} in at least one dimension",
                s.h, s.w
            )));
        }
        if s.n == 0 {
            return Err(Error::InputSize("empty batch".into()));
        }
        Ok(())
    }

    fn finish(&self, batch: &Tensor, score_maps: Tensor) -> Result<ForwardOutput> {
        let logits = global_average_pool(&score_maps)?;
        Ok(ForwardOutput {
            score_maps,
            logits,
            image_height: batch.shape().h,
            image_width: batch.shape().w,
        })
    }

    /// Inference with running batch-norm statistics. Pure.
    pub fn infer(&self, batch: &Tensor) -> Result<ForwardOutput> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            x = relu(&bn.forward_infer(&conv2d_forward(&x, conv)?)?);
        }
        let head = self.convs.last().expect("five layers");
        let maps = conv2d_forward(&x, head)?;
        self.finish(batch, maps)
    }

    /// Train-mode forward: batch statistics, running-stat updates, and
    /// activations cached for [`FcnModel::backward`].
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<ForwardOutput> {
        self.check_input(batch)?;
        self.activations = None;
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut x = batch.clone();
        for (conv, bn) in self.convs.iter().zip(self.norms.iter_mut()) {
            let z = conv2d_forward(&x, conv)?;
            let y = relu(&bn.forward_train(&z)?);
            acts.push(std::mem::replace(&mut x, y));
        }
        let head = self.convs.last().expect("five layers");
        let maps = conv2d_forward(&x, head)?;
        acts.push(x);
        self.activations = Some(acts);
        self.finish(batch, maps)
    }

    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        match mode {
            Mode::Train => self.forward_train(batch),
            Mode::Infer => self.infer(batch),
        }
    }

    /// Backpropagates `d loss / d logit` (one value per sample) through the
    /// most recent train-mode forward.
    pub fn backward(&mut self, grad_logits: &[f32]) -> Result<Gradients> {
        let acts = self.activations.take().ok_or_else(|| {
            Error::Usage("backward called without a preceding train-mode forward".into())
        })?;
        let last = acts.len() - 1;
        let head = &self.convs[last];
        let map_shape = head.output_shape(acts[last].shape());
        if grad_logits.len() != map_shape.n {
            return Err(Error::config(format!(
                "{} logit gradients for a batch of {}",
                grad_logits.len(),
                map_shape.n
            )));
        }

        let mut grad = global_average_pool_backward(grad_logits, map_shape)?;
        let mut conv_grads = vec![None; self.convs.len()];
        let mut norm_grads = vec![None; self.norms.len()];
        for layer in (0..self.convs.len()).rev() {
            let g = conv2d_backward_opt(&acts[layer], &self.convs[layer], &grad, layer > 0)?;
            conv_grads[layer] = Some((g.weights, g.bias));
            let Some(g_in) = g.input else { break };
            // g_in is the gradient w.r.t. the block output relu(bn(.)) of layer-1.
            let bn = &mut self.norms[layer - 1];
            let g_relu = relu_backward(&acts[layer], &g_in)?;
            let g_bn = bn.backward(&g_relu)?;
            norm_grads[layer - 1] = Some((g_bn.gamma, g_bn.beta));
            grad = g_bn.input;
        }

        let mut out = Vec::new();
        for (i, cg) in conv_grads.into_iter().enumerate() {
            let (w, b) = cg.expect("every convolution visited");
            out.push(w);
            out.push(b);
            if i < norm_grads.len() {
                let (g, b) = norm_grads[i].take().expect("every norm visited");
                out.push(g);
                out.push(b);
            }
        }
        Ok(Gradients(out))
    }

    /// One Adam step with `grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients) -> Result<()> {
        let mut optimizer = std::mem::replace(&mut self.optimizer, AdamState::new(&[], 0.0));
        let result = {
            let grads: Vec<&[f32]> = grads.0.iter().map(Vec::as_slice).collect();
            let mut params = self.parameters_mut();
            optimizer.step(&mut params, &grads)
        };
        self.optimizer = optimizer;
        result
    }

    /// Drops any cached train-mode state.
    pub fn clear_cache(&mut self) {
        self.activations = None;
        self.norms.iter_mut().for_each(BatchNorm::clear_cache);
    }

    /// `sigmoid(mean(score map))` for a single image `(1, h, w, 3)`.
    pub fn spoofness(&self, image: &Tensor) -> Result<f32> {
        if image.shape().n != 1 {
            return Err(Error::InputSize(format!(
                "spoofness takes one image, got a batch of {}",
                image.shape().n
            )));
        }
        Ok(self.infer(image)?.spoofness()[0])
    }

    pub fn score_map(&self, image: &Tensor) -> Result<ScoreMap> {
        Ok(self.infer(image)?.score_map(0))
    }
}

/// `spoof` iff `score >= 0.5`.
pub fn is_spoof(score: f64) -> bool {
    score >= DECISION_THRESHOLD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn canonical_parameter_counts() {
        let m = FcnModel::init(1);
        assert_eq!(m.conv_parameter_count(), 1_555_585);
        assert_eq!(m.norm_parameter_count(), 1_920);
        let per_layer: Vec<usize> = m.convs.iter().map(|c| c.parameter_count()).collect();
        assert_eq!(per_layer, vec![1_792, 73_856, 295_168, 1_180_160, 4_609]);
        assert_eq!(m.config().downsample_factor(), 16);
    }

    #[test]
    fn same_seed_same_model() {
        let a = FcnModel::init(11);
        let b = FcnModel::init(11);
        let c = FcnModel::init(12);
        for (x, y) in a.convs.iter().zip(&b.convs) {
            assert_eq!(x, y);
        }
        assert_ne!(a.convs[0].weights, c.convs[0].weights);
    }

    #[test]
    fn conv4_weights_have_init_std() {
        let m = FcnModel::init(3);
        let w = &m.convs[3].weights;
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.0195..=0.0205).contains(&std), "std {std}");
        assert!(m.convs.iter().all(|c| c.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn score_map_dims_follow_ceil() {
        let cfg = FcnConfig::default();
        assert_eq!(cfg.score_map_dims(256, 256), (16, 16));
        assert_eq!(cfg.score_map_dims(64, 64), (4, 4));
        assert_eq!(cfg.score_map_dims(17, 300), (2, 19));
    }

    #[test]
    fn small_inputs_are_rejected() {
        let m = FcnModel::init(0);
        let x = Tensor::zeros(Shape::new(1, 15, 64, 3));
        assert!(matches!(m.infer(&x), Err(Error::InputSize(_))));
    }

    #[test]
    fn backward_requires_train_forward() {
        let mut m = FcnModel::init(0);
        assert!(matches!(m.backward(&[0.1]), Err(Error::Usage(_))));
    }

    #[test]
    fn infer_on_64_gives_4x4_and_finite_logit() {
        let m = FcnModel::init(5);
        let data: Vec<f32> = (0..64 * 64 * 3).map(|i| ((i % 251) as f32 - 125.0) / 128.0).collect();
        let x = Tensor::from_vec(Shape::new(1, 64, 64, 3), data);
        let out = m.infer(&x).unwrap();
        assert_eq!(out.score_maps.shape(), Shape::new(1, 4, 4, 1));
        assert!(out.logits[0].is_finite());
        let p = out.spoofness()[0];
        assert!(p > 0.0 && p < 1.0);
        let direct = out.score_map(0).mean();
        assert!((direct - out.logits[0]).abs() <= f32::EPSILON * direct.abs().max(1.0));
    }

    #[test]
    fn decision_rule_is_inclusive() {
        assert!(is_spoof(0.5));
        assert!(is_spoof(0.73));
        assert!(!is_spoof(0.4999));
    }
}
