use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Spatial mean of a single-channel map, one value per sample.
pub fn global_average_pool<T: Real>(score_map: &Tensor<T>) -> Result<Vec<T>> {
    let s = score_map.shape();
    check_shape(s)?;
    let inv = T::one() / T::lit((s.h * s.w) as f64);
    Ok((0..s.n)
        .map(|n| {
            let mut acc = T::zero();
            for &v in score_map.sample(n) {
                acc += v;
            }
            acc * inv
        })
        .collect())
}

/// Spreads each sample's upstream gradient uniformly over its `h*w` cells.
pub fn global_average_pool_backward<T: Real>(upstream: &[T], shape: Shape) -> Result<Tensor<T>> {
    check_shape(shape)?;
    if upstream.len() != shape.n {
        return Err(Error::config(format!(
            "{} upstream values for a batch of {}",
            upstream.len(),
            shape.n
        )));
    }
    let inv = T::one() / T::lit((shape.h * shape.w) as f64);
    let mut out = Tensor::zeros(shape);
    for (n, &g) in upstream.iter().enumerate() {
        out.sample_mut(n).fill(g * inv);
    }
    Ok(out)
}

fn check_shape(s: Shape) -> Result<()> {
    if s.c != 1 {
        return Err(Error::config(format!("score map must have 1 channel, got {}", s.c)));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::config("score map has empty spatial dimensions"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_two_by_two() {
        let s = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(global_average_pool(&s).unwrap(), vec![4.0]);
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let s = Tensor::<f32>::filled(Shape::new(2, 16, 16, 1), 0.75);
        assert_eq!(global_average_pool(&s).unwrap(), vec![0.75, 0.75]);
    }

    #[test]
    fn backward_conserves_upstream() {
        let shape = Shape::new(2, 3, 5, 1);
        let g = global_average_pool_backward(&[1.5f64, -2.0], shape).unwrap();
        let sum0: f64 = g.sample(0).iter().sum();
        let sum1: f64 = g.sample(1).iter().sum();
        assert!((sum0 - 1.5).abs() < 1e-12);
        assert!((sum1 + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_multichannel_and_empty() {
        let s = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2));
        assert!(matches!(global_average_pool(&s), Err(Error::Config(_))));
        let e = Tensor::<f32>::zeros(Shape::new(1, 0, 2, 1));
        assert!(matches!(global_average_pool(&e), Err(Error::Config(_))));
    }
}
