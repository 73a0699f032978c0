mod common;

use common::*;
use ssrfcn::layers::{sigmoid_bce_loss, Mode};
use ssrfcn::rng::seeded;
use ssrfcn::{FcnConfig, FcnModel, Shape};

const TRIALS: u64 = 20;

fn all_trials(f: impl Fn(u64) -> f64) -> f64 {
    (0..TRIALS).map(f).fold(0.0, f64::max)
}

#[test]
fn conv_f64_matches_finite_differences() {
    for stride in [1, 2] {
        let err = all_trials(|s| conv_check::<f64>(s, stride, 1e-5));
        assert!(err <= 1e-6, "stride {stride}: {err}");
    }
}

#[test]
fn conv_f32_matches_finite_differences() {
    for stride in [1, 2] {
        let err = all_trials(|s| conv_check::<f32>(100 + s, stride, 1e-3));
        assert!(err <= 1e-3, "stride {stride}: {err}");
    }
}

#[test]
fn batchnorm_matches_finite_differences() {
    let e64 = all_trials(|s| batchnorm_check::<f64>(s, 1e-5));
    assert!(e64 <= 1e-6, "f64 {e64}");
    let e32 = all_trials(|s| batchnorm_check::<f32>(200 + s, 1e-3));
    assert!(e32 <= 1e-3, "f32 {e32}");
}

#[test]
fn relu_gap_bce_match_finite_differences() {
    assert!(all_trials(|s| relu_check::<f64>(s, 1e-5)) <= 1e-6);
    assert!(all_trials(|s| relu_check::<f32>(s, 1e-3)) <= 1e-3);
    assert!(all_trials(|s| gap_check::<f64>(s, 1e-5)) <= 1e-6);
    assert!(all_trials(|s| gap_check::<f32>(s, 1e-3)) <= 1e-3);
    assert!(all_trials(|s| bce_check::<f64>(s, 1e-5)) <= 1e-6);
    assert!(all_trials(|s| bce_check::<f32>(s, 1e-3)) <= 1e-3);
}

/// End-to-end: batch-mean BCE of a narrow model against central differences
/// on a sample of parameters from every trainable tensor.
#[test]
fn whole_model_gradients() {
    let cfg = FcnConfig {
        channels: [4, 6, 6, 8, 1],
        ..FcnConfig::default()
    };
    let mut model = FcnModel::new(cfg, 4).unwrap();
    // Larger weights than the 0.02 init so every layer carries signal.
    for conv in &mut model.convs {
        for w in conv.weights.iter_mut() {
            *w *= 20.0;
        }
    }
    let mut rng = seeded(17);
    let x = random_tensor::<f32>(Shape::new(3, 32, 32, 3), &mut rng).scale(2.0);
    let labels = [true, false, true];

    let loss_of = |m: &FcnModel| -> f64 {
        let mut m = m.clone();
        let out = m.forward(&x, Mode::Train).unwrap();
        out.logits
            .iter()
            .zip(labels)
            .map(|(&l, y)| sigmoid_bce_loss(l as f64, y).0)
            .sum::<f64>()
            / labels.len() as f64
    };

    let mut m = model.clone();
    let out = m.forward(&x, Mode::Train).unwrap();
    let grad_logits: Vec<f32> = out
        .logits
        .iter()
        .zip(labels)
        .map(|(&l, y)| sigmoid_bce_loss(l, y).1 / labels.len() as f32)
        .collect();
    let grads = m.backward(&grad_logits).unwrap();

    let names = model.parameter_names();
    let mut worst = 0.0f64;
    for (t, g) in grads.0.iter().enumerate() {
        for i in (0..g.len()).step_by((g.len() / 6).max(1)) {
            let h = 1e-3f32;
            let mut plus = model.clone();
            plus.parameters_mut()[t][i] += h;
            let mut minus = model.clone();
            minus.parameters_mut()[t][i] -= h;
            let dp = plus.parameters()[t][i] as f64 - minus.parameters()[t][i] as f64;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / dp;
            let e = rel_err(g[i] as f64, numeric);
            assert!(e <= 1e-2, "{}[{i}]: analytic {} numeric {numeric}", names[t], g[i]);
            worst = worst.max(e);
        }
    }
    assert!(worst.is_finite());
}
