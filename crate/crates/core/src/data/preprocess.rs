use std::path::Path;

use image::RgbImage;

use super::manifest::SampleRecord;
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `(v - 127.5) / 128`.
pub fn preprocess_pixel(v: u8) -> f32 {
    (v as f32 - 127.5) / 128.0
}

/// Inverse of [`preprocess_pixel`], rounded and clamped to a byte.
pub fn deprocess_pixel(x: f32) -> u8 {
    (x * 128.0 + 127.5).round().clamp(0.0, 255.0) as u8
}

/// `(1, h, w, 3)` tensor of preprocessed pixels.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| preprocess_pixel(v)).collect();
    Tensor::from_vec(Shape::new(1, h as usize, w as usize, 3), data)
}

/// Sample `n` of a 3-channel tensor back to 8-bit RGB.
pub fn tensor_to_image(t: &Tensor, n: usize) -> RgbImage {
    let s = t.shape();
    assert_eq!(s.c, 3, "expected an RGB tensor");
    let raw = t.sample(n).iter().map(|&x| deprocess_pixel(x)).collect();
    RgbImage::from_raw(s.w as u32, s.h as u32, raw).expect("buffer matches dimensions")
}

/// Decodes an image file and preprocesses it. With `expected_side`, both
/// dimensions must equal it; nothing is ever resized.
pub fn load_image(path: &Path, expected_side: Option<usize>) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    if let Some(side) = expected_side {
        let (w, h) = img.dimensions();
        if (h as usize, w as usize) != (side, side) {
            return Err(Error::Input(format!(
                "{} is {h}x{w}, expected {side}x{side} aligned crops",
                path.display()
            )));
        }
    }
    Ok(image_to_tensor(&img))
}

/// Loads every `frame_stride`-th record (in manifest order, per video).
pub fn load_samples(
    records: &[SampleRecord],
    expected_side: Option<usize>,
    frame_stride: usize,
) -> Result<Vec<Sample>> {
    let stride = frame_stride.max(1);
    let mut per_video = std::collections::HashMap::<&str, usize>::new();
    let mut out = Vec::new();
    for r in records {
        let k = per_video.entry(r.video_id.as_str()).or_insert(0);
        let keep = *k % stride == 0;
        *k += 1;
        if keep {
            out.push(Sample {
                image: load_image(&r.image_path, expected_side)?,
                spoof: r.label.is_spoof(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_formula() {
        assert_eq!(preprocess_pixel(255), 0.99609375);
        assert_eq!(preprocess_pixel(0), -0.99609375);
        assert_eq!(preprocess_pixel(128), 0.00390625);
    }

    #[test]
    fn byte_lattice_is_invertible() {
        for v in 0..=255u8 {
            assert_eq!(deprocess_pixel(preprocess_pixel(v)), v);
        }
    }

    #[test]
    fn size_mismatch_and_bad_file_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        RgbImage::new(8, 6).save(&p).unwrap();
        assert_eq!(load_image(&p, None).unwrap().shape(), Shape::new(1, 6, 8, 3));
        assert!(matches!(load_image(&p, Some(256)), Err(Error::Input(_))));
        let bad = dir.path().join("b.png");
        std::fs::write(&bad, b"not a png").unwrap();
        assert!(matches!(load_image(&bad, None), Err(Error::Image { .. })));
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 7]));
        let t = image_to_tensor(&img);
        assert_eq!(t[(0, 2, 4, 0)], preprocess_pixel(160));
        assert_eq!(tensor_to_image(&t, 0), img);
    }
}
