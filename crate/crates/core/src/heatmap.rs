//! Score-map overlays for display.
//!
//! The map is min-max normalized, bilinearly upscaled to the image size and
//! drawn as red intensity blended half and half with the image. Training
//! uses nearest-neighbour blocks instead; this path is for viewing only.

use image::{Rgb, RgbImage};

use crate::model::ScoreMap;
use crate::region::normalize_score_map;

/// Normalized map value at image pixel `(y, x)`, sampling cell centers.
fn bilinear(map: &ScoreMap, y: usize, x: usize) -> f32 {
    let coord = |p: usize, cells: usize, pixels: usize| {
        let c = (p as f32 + 0.5) * cells as f32 / pixels as f32 - 0.5;
        let c = c.clamp(0.0, (cells - 1) as f32);
        let lo = c.floor() as usize;
        (lo, (lo + 1).min(cells - 1), c - lo as f32)
    };
    let (r0, r1, fy) = coord(y, map.height, map.image_height);
    let (c0, c1, fx) = coord(x, map.width, map.image_width);
    let top = map.at(r0, c0) * (1.0 - fx) + map.at(r0, c1) * fx;
    let bottom = map.at(r1, c0) * (1.0 - fx) + map.at(r1, c1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Per-pixel spoof intensity in `[0, 1]` at the map's source image size.
pub fn upscale(map: &ScoreMap) -> Vec<f32> {
    let normalized = normalize_score_map(map);
    let mut out = Vec::with_capacity(map.image_height * map.image_width);
    for y in 0..map.image_height {
        for x in 0..map.image_width {
            out.push(bilinear(&normalized, y, x));
        }
    }
    out
}

/// Red overlay of `map` blended 50/50 onto `image`.
///
/// # Panics
/// If the image size differs from the map's source image size.
pub fn overlay(image: &RgbImage, map: &ScoreMap) -> RgbImage {
    let (w, h) = image.dimensions();
    assert_eq!(
        (h as usize, w as usize),
        (map.image_height, map.image_width),
        "score map was computed for a different image size"
    );
    let heat = upscale(map);
    RgbImage::from_fn(w, h, |x, y| {
        let v = heat[y as usize * w as usize + x as usize];
        let p = image.get_pixel(x, y).0;
        let blend = |a: u8, b: f32| ((a as f32 + b) / 2.0).round() as u8;
        Rgb([blend(p[0], 255.0 * v), blend(p[1], 0.0), blend(p[2], 0.0)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: Vec<f32>, h: usize, w: usize) -> ScoreMap {
        ScoreMap {
            height: h,
            width: w,
            values,
            image_height: h * 16,
            image_width: w * 16,
        }
    }

    #[test]
    fn constant_map_gives_uniform_overlay() {
        let img = RgbImage::from_pixel(32, 32, Rgb([100, 50, 20]));
        let out = overlay(&img, &map(vec![3.0; 4], 2, 2));
        assert!(out.pixels().all(|p| *p == Rgb([50, 25, 10])));
    }

    #[test]
    fn argmax_block_is_reddest() {
        let m = map(vec![0.0, 1.0, 5.0, 2.0, 0.5, 0.1, 3.0, 0.0, 1.0], 3, 3);
        let img = RgbImage::from_pixel(48, 48, Rgb([0, 0, 0]));
        let out = overlay(&img, &m);
        assert_eq!(out.dimensions(), (48, 48));
        let max = out.pixels().map(|p| p.0[0]).max().unwrap();
        assert_eq!(max, 128);
        for (x, y, p) in out.enumerate_pixels() {
            if p.0[0] == max {
                assert_eq!((y / 16, x / 16), (0, 2));
            }
        }
    }
}
