//! Stage I whole-image training and Stage II regional fine-tuning.
//!
//! Both stages share one step: flip-augment, train-mode forward, mean fused
//! BCE over the batch, backward, Adam. Stage II replaces whole images with
//! crops; spoof crops are centered on cells the current model marks as most
//! spoof-like, live crops are placed uniformly.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::layers::sigmoid_bce_loss;
use crate::model::FcnModel;
use crate::region::{
    crop, fixed_region, place_random_region, place_spoof_region, sample_region_size, spoof_mask,
    BinaryMask, Region, RegionStrategy, DEFAULT_TAU, MAX_REGION, MIN_REGION,
};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: RegionStrategy,
    pub min_region: usize,
    pub max_region: usize,
    pub flip_probability: f64,
    pub regions_per_spoof_image: usize,
    pub tau: f32,
    /// Probability that a Stage II batch uses whole images instead of crops.
    pub mix_in: f64,
    /// Mine spoof masks once before Stage II instead of every epoch.
    pub freeze_masks: bool,
    /// Record wall-clock time in epoch reports (off for byte-identical reports).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            strategy: RegionStrategy::SelfSupervised,
            min_region: MIN_REGION,
            max_region: MAX_REGION,
            flip_probability: 0.5,
            regions_per_spoof_image: 1,
            tau: DEFAULT_TAU,
            mix_in: 0.0,
            freeze_masks: false,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mix_in) {
            return bad("mix_in must lie in [0, 1]");
        }
        if self.min_region == 0 || self.min_region > self.max_region {
            return bad("region bounds must satisfy 0 < min_region <= max_region");
        }
        if self.regions_per_spoof_image == 0 {
            return bad("regions_per_spoof_image must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub stage: u8,
    pub epoch: usize,
    pub batches: usize,
    pub samples: usize,
    pub mean_loss: f64,
    /// Fraction of training inputs classified correctly at threshold 0.5.
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// Reverses columns with probability `p_flip`.
pub fn augment(image: &Tensor, rng: &mut impl Rng, p_flip: f64) -> Tensor {
    if rng.random_bool(p_flip) {
        image.flip_horizontal()
    } else {
        image.clone()
    }
}

/// A seeded permutation of `0..n` cut into consecutive batches; the last
/// batch may be short.
pub fn make_batches(n: usize, rng: &mut impl Rng, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One input of a planned batch: which sample, which crop, and whether to flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedInput {
    pub sample: usize,
    pub region: Region,
    pub flip: bool,
}

/// Inputs of one batch; every region has the same size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedBatch {
    pub size: (usize, usize),
    pub inputs: Vec<PlannedInput>,
}

fn image_dims(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Input("empty dataset".into()))?;
    let s = first.image.shape();
    for (i, x) in samples.iter().enumerate() {
        let t = x.image.shape();
        if t.n != 1 || (t.h, t.w, t.c) != (s.h, s.w, s.c) {
            return Err(Error::Input(format!(
                "sample {i} has shape {t}, expected (1, {}, {}, {})",
                s.h, s.w, s.c
            )));
        }
    }
    Ok((s.h, s.w))
}

/// Stage I plan: shuffled whole images with flip draws.
pub fn plan_stage1_epoch(samples: &[Sample], cfg: &TrainConfig, epoch: usize) -> Result<Vec<PlannedBatch>> {
    let dims = image_dims(samples)?;
    let mut rng = stream(cfg.seed, "stage1", epoch as u64);
    let batches = make_batches(samples.len(), &mut rng, cfg.batch_size);
    Ok(batches
        .into_iter()
        .map(|idx| PlannedBatch {
            size: dims,
            inputs: idx
                .into_iter()
                .map(|sample| PlannedInput {
                    sample,
                    region: Region::full(dims.0, dims.1),
                    flip: rng.random_bool(cfg.flip_probability),
                })
                .collect(),
        })
        .collect())
}

/// Spoof masks of every spoof sample under the model's current weights
/// (`None` for lives).
pub fn mine_masks(model: &FcnModel, samples: &[Sample], tau: f32) -> Result<Vec<Option<BinaryMask>>> {
    let factor = model.config().downsample_factor();
    samples
        .iter()
        .map(|s| {
            if !s.spoof {
                return Ok(None);
            }
            Ok(Some(spoof_mask(&model.score_map(&s.image)?, tau, factor)))
        })
        .collect()
}

/// Stage II plan. `masks` is required for the self-supervised strategy.
pub fn plan_stage2_epoch(
    samples: &[Sample],
    masks: Option<&[Option<BinaryMask>]>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<PlannedBatch>> {
    let dims = image_dims(samples)?;
    let mut rng = stream(cfg.seed, "stage2", epoch as u64);
    let jobs: Vec<usize> = (0..samples.len())
        .flat_map(|i| std::iter::repeat_n(i, cfg.regions_per_spoof_image))
        .collect();
    let fixed = match cfg.strategy.fixed() {
        Some(kind) => Some(fixed_region(kind, dims)?),
        None => None,
    };
    let mut plan = Vec::new();
    for batch in make_batches(jobs.len(), &mut rng, cfg.batch_size) {
        let whole = cfg.strategy == RegionStrategy::Global || rng.random_bool(cfg.mix_in);
        let size = match (whole, fixed) {
            (true, _) => dims,
            (false, Some(r)) => (r.height, r.width),
            (false, None) => sample_region_size(dims, &mut rng, cfg.min_region, cfg.max_region)?,
        };
        let mut inputs = Vec::with_capacity(batch.len());
        for j in batch {
            let sample = jobs[j];
            let region = if whole {
                Region::full(dims.0, dims.1)
            } else if let Some(r) = fixed {
                r
            } else if cfg.strategy == RegionStrategy::SelfSupervised && samples[sample].spoof {
                let mask = masks
                    .and_then(|m| m.get(sample))
                    .and_then(Option::as_ref)
                    .ok_or_else(|| Error::Usage(format!("no spoof mask for sample {sample}")))?;
                place_spoof_region(mask, dims, size, &mut rng)?.region
            } else {
                place_random_region(dims, size, &mut rng)
            };
            inputs.push(PlannedInput {
                sample,
                region,
                flip: rng.random_bool(cfg.flip_probability),
            });
        }
        plan.push(PlannedBatch { size, inputs });
    }
    Ok(plan)
}

/// Materializes a planned batch as `(images, labels)`.
pub fn assemble(samples: &[Sample], batch: &PlannedBatch) -> Result<(Tensor, Vec<bool>)> {
    let mut parts = Vec::with_capacity(batch.inputs.len());
    let mut labels = Vec::with_capacity(batch.inputs.len());
    for input in &batch.inputs {
        let s = &samples[input.sample];
        let c = crop(&s.image, &input.region)?;
        parts.push(if input.flip { c.flip_horizontal() } else { c });
        labels.push(s.spoof);
    }
    let images = Tensor::stack(&parts).ok_or_else(|| Error::Input("batch inputs differ in shape".into()))?;
    Ok((images, labels))
}

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub mean_loss: f64,
    pub correct: usize,
}

/// Forward, mean BCE, backward and one Adam step on a single batch.
pub fn train_step(model: &mut FcnModel, images: &Tensor, labels: &[bool]) -> Result<StepOutcome> {
    let out = model.forward_train(images)?;
    let n = labels.len() as f32;
    let mut loss = 0.0f64;
    let mut correct = 0;
    let mut grads = Vec::with_capacity(labels.len());
    for (&logit, &y) in out.logits.iter().zip(labels) {
        let (l, g) = sigmoid_bce_loss(logit, y);
        loss += l as f64;
        grads.push(g / n);
        correct += ((logit >= 0.0) == y) as usize;
    }
    let mean_loss = loss / labels.len() as f64;
    if !mean_loss.is_finite() {
        model.clear_cache();
        return Err(Error::Divergence(format!("non-finite loss {mean_loss}")));
    }
    let grads = model.backward(&grads)?;
    model.apply_gradients(&grads)?;
    Ok(StepOutcome { mean_loss, correct })
}

fn run_epoch(
    model: &mut FcnModel,
    samples: &[Sample],
    plan: &[PlannedBatch],
    stage: u8,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<EpochReport> {
    let start = Instant::now();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut seen = 0;
    for (b, batch) in plan.iter().enumerate() {
        let (images, labels) = assemble(samples, batch)?;
        let step = train_step(model, &images, &labels).map_err(|e| match e {
            Error::Divergence(m) => {
                Error::Divergence(format!("stage {stage} epoch {epoch} batch {b}: {m}"))
            }
            other => other,
        })?;
        loss_sum += step.mean_loss * labels.len() as f64;
        correct += step.correct;
        seen += labels.len();
    }
    let report = EpochReport {
        stage,
        epoch,
        batches: plan.len(),
        samples: seen,
        mean_loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
        wall_time_secs: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
    };
    log::info!(
        "stage {stage} epoch {epoch}: loss {:.5} accuracy {:.4}",
        report.mean_loss,
        report.accuracy
    );
    Ok(report)
}

/// Stage I: whole images. `on_epoch` sees each report as it is produced and
/// may stop training early by returning `false`.
pub fn stage1_train_with(
    model: &mut FcnModel,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&FcnModel, &EpochReport) -> bool,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    model.optimizer.lr = cfg.learning_rate;
    let mut reports = Vec::new();
    for epoch in 0..cfg.epochs {
        let plan = plan_stage1_epoch(samples, cfg, epoch)?;
        let report = run_epoch(model, samples, &plan, 1, epoch, cfg)?;
        let go_on = on_epoch(model, &report);
        reports.push(report);
        if !go_on {
            break;
        }
    }
    Ok(reports)
}

pub fn stage1_train(model: &mut FcnModel, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<EpochReport>> {
    stage1_train_with(model, samples, cfg, |_, _| true)
}

/// Stage II: fine-tuning on crops chosen by `cfg.strategy`.
pub fn stage2_finetune(model: &mut FcnModel, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    model.optimizer.lr = cfg.learning_rate;
    let mining = cfg.strategy == RegionStrategy::SelfSupervised;
    let mut masks = if mining {
        Some(mine_masks(model, samples, cfg.tau)?)
    } else {
        None
    };
    let mut reports = Vec::new();
    for epoch in 0..cfg.epochs {
        if mining && epoch > 0 && !cfg.freeze_masks {
            masks = Some(mine_masks(model, samples, cfg.tau)?);
        }
        let plan = plan_stage2_epoch(samples, masks.as_deref(), cfg, epoch)?;
        reports.push(run_epoch(model, samples, &plan, 2, epoch, cfg)?);
    }
    Ok(reports)
}

/// Spoofness of every sample in inference mode.
pub fn score_samples(model: &FcnModel, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| model.spoofness(&s.image).map(f64::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FcnConfig;
    use crate::rng::seeded;
    use crate::tensor::Shape;

    fn tiny_model(seed: u64) -> FcnModel {
        FcnModel::new(
            FcnConfig {
                channels: [4, 4, 8, 8, 1],
                ..FcnConfig::default()
            },
            seed,
        )
        .unwrap()
    }

    fn samples(n: usize, side: usize) -> Vec<Sample> {
        let mut rng = seeded(3);
        (0..n)
            .map(|i| Sample {
                image: Tensor::from_vec(
                    Shape::new(1, side, side, 3),
                    (0..side * side * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                ),
                spoof: i % 2 == 1,
            })
            .collect()
    }

    #[test]
    fn flip_probability_extremes() {
        let t = samples(1, 16).remove(0).image;
        let mut rng = seeded(0);
        assert_eq!(augment(&t, &mut rng, 0.0), t);
        assert_eq!(augment(&augment(&t, &mut rng, 1.0), &mut rng, 1.0), t);
    }

    #[test]
    fn batches_are_a_permutation() {
        let b = make_batches(10, &mut seeded(1), 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, make_batches(10, &mut seeded(1), 3));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { flip_probability: 1.5, ..ok.clone() },
            TrainConfig { min_region: 300, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut m = tiny_model(0);
        assert!(matches!(stage1_train(&mut m, &[], &TrainConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn divergence_names_the_batch() {
        let mut m = tiny_model(0);
        let mut data = samples(4, 32);
        data[0].image.data_mut()[0] = f32::NAN;
        let cfg = TrainConfig { batch_size: 4, epochs: 1, ..TrainConfig::default() };
        match stage1_train(&mut m, &data, &cfg) {
            Err(Error::Divergence(msg)) => assert!(msg.contains("epoch 0 batch 0"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage2_batches_share_a_size_within_bounds() {
        let data = samples(10, 64);
        let model = tiny_model(1);
        let masks = mine_masks(&model, &data, 0.5).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            min_region: 16,
            max_region: 48,
            regions_per_spoof_image: 2,
            ..TrainConfig::default()
        };
        for epoch in 0..5 {
            let plan = plan_stage2_epoch(&data, Some(&masks), &cfg, epoch).unwrap();
            assert_eq!(plan.iter().map(|b| b.inputs.len()).sum::<usize>(), 20);
            for b in &plan {
                assert!((16..=48).contains(&b.size.0) && (16..=48).contains(&b.size.1));
                for i in &b.inputs {
                    assert_eq!((i.region.height, i.region.width), b.size);
                    assert!(i.region.fits(64, 64));
                }
            }
        }
    }

    #[test]
    fn global_strategy_uses_whole_images() {
        let data = samples(6, 32);
        let cfg = TrainConfig { strategy: RegionStrategy::Global, batch_size: 4, ..TrainConfig::default() };
        for b in plan_stage2_epoch(&data, None, &cfg, 0).unwrap() {
            assert_eq!(b.size, (32, 32));
            assert!(b.inputs.iter().all(|i| i.region == Region::full(32, 32)));
        }
    }

    #[test]
    fn self_supervised_without_masks_is_a_usage_error() {
        let data = samples(4, 32);
        let cfg = TrainConfig { min_region: 16, max_region: 32, ..TrainConfig::default() };
        assert!(matches!(plan_stage2_epoch(&data, None, &cfg, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn fixed_strategy_needs_aligned_faces() {
        let data = samples(2, 32);
        let cfg = TrainConfig { strategy: RegionStrategy::FixedEye, ..TrainConfig::default() };
        assert!(matches!(plan_stage2_epoch(&data, None, &cfg, 0), Err(Error::InputSize(_))));
    }

    #[test]
    fn wall_time_is_optional_in_reports() {
        let r = EpochReport {
            stage: 1,
            epoch: 0,
            batches: 1,
            samples: 2,
            mean_loss: 0.5,
            accuracy: 1.0,
            wall_time_secs: None,
        };
        assert!(!serde_json::to_string(&r).unwrap().contains("wall_time"));
    }
}
