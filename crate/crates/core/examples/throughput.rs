//! Rough timing of forward and train steps at a few input sizes.

use std::time::Instant;

use ssrfcn::layers::Mode;
use ssrfcn::{FcnModel, Shape, Tensor};

fn main() {
    let mut model = FcnModel::init(0);
    for &(n, side) in &[(1usize, 256usize), (16, 64), (16, 128)] {
        let x = Tensor::from_vec(
            Shape::new(n, side, side, 3),
            (0..n * side * side * 3).map(|i| ((i % 255) as f32 - 127.5) / 128.0).collect(),
        );
        let t = Instant::now();
        model.infer(&x).unwrap();
        let infer = t.elapsed();
        let t = Instant::now();
        model.forward(&x, Mode::Train).unwrap();
        let g = model.backward(&vec![0.01; n]).unwrap();
        model.apply_gradients(&g).unwrap();
        println!(
            "batch {n} x {side}^2: infer {:.3}s, train step {:.3}s",
            infer.as_secs_f64(),
            t.elapsed().as_secs_f64()
        );
    }
}
