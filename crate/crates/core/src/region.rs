//! Spoof-region proposals from score maps, plus fixed and random crops.
//!
//! A score map is min-max normalized into `[0, 1]`, thresholded at `tau`
//! into a binary mask, and rectangles are drawn so their centers fall on
//! pixels owned by mask cells. Each score cell owns the `factor x factor`
//! pixel block it sits over (nearest-neighbour upscaling).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreMap;
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_TAU: f32 = 0.5;
pub const MIN_REGION: usize = 64;
pub const MAX_REGION: usize = 256;
/// Side of the aligned face crops the fixed regions are defined on.
pub const ALIGNED_SIDE: usize = 256;

/// Axis-aligned rectangle in pixel coordinates: rows `[top, top+height)`,
/// columns `[left, left+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Region {
            top,
            left,
            height,
            width,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Region::new(0, 0, height, width)
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.bottom() <= height && self.right() <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.bottom()).contains(&row) && (self.left..self.right()).contains(&col)
    }

    /// `inner` expressed in this region's coordinates mapped back to the parent.
    pub fn compose(&self, inner: &Region) -> Region {
        Region::new(self.top + inner.top, self.left + inner.left, inner.height, inner.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedRegion {
    Eye,
    Nose,
    Mouth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionStrategy {
    /// Spoof regions centered on the hard-gated score map; random crops for lives.
    SelfSupervised,
    /// The whole image.
    Global,
    FixedEye,
    FixedNose,
    FixedMouth,
    /// Uniform random crops for every sample.
    Random,
}

impl RegionStrategy {
    pub fn fixed(self) -> Option<FixedRegion> {
        match self {
            RegionStrategy::FixedEye => Some(FixedRegion::Eye),
            RegionStrategy::FixedNose => Some(FixedRegion::Nose),
            RegionStrategy::FixedMouth => Some(FixedRegion::Mouth),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionStrategy::SelfSupervised => "self_supervised",
            RegionStrategy::Global => "global",
            RegionStrategy::FixedEye => "fixed_eye",
            RegionStrategy::FixedNose => "fixed_nose",
            RegionStrategy::FixedMouth => "fixed_mouth",
            RegionStrategy::Random => "random",
        }
    }
}

impl std::str::FromStr for RegionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            RegionStrategy::SelfSupervised,
            RegionStrategy::Global,
            RegionStrategy::FixedEye,
            RegionStrategy::FixedNose,
            RegionStrategy::FixedMouth,
            RegionStrategy::Random,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::Input(format!("unknown region strategy `{s}`")))
    }
}

/// Spoof/live decision per score cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
    /// Pixels per cell side.
    pub factor: usize,
}

impl BinaryMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Whether image pixel `(y, x)` lies in the block of a set cell.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let (r, c) = (y / self.factor, x / self.factor);
        r < self.rows && c < self.cols && self.get(r, c)
    }
}

/// Min-max scales a score map into `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_score_map(map: &ScoreMap) -> ScoreMap {
    let (lo, hi) = map
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let values = if range > 0.0 && range.is_finite() {
        map.values.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; map.values.len()]
    };
    ScoreMap {
        values,
        ..map.clone()
    }
}

/// `1` where the normalized score is `>= tau`.
pub fn hard_gate(normalized: &ScoreMap, tau: f32, factor: usize) -> BinaryMask {
    BinaryMask {
        rows: normalized.height,
        cols: normalized.width,
        cells: normalized.values.iter().map(|&v| v >= tau).collect(),
        factor,
    }
}

/// Normalize then gate, treating a constant map as carrying no spoof cells.
pub fn spoof_mask(map: &ScoreMap, tau: f32, factor: usize) -> BinaryMask {
    let normalized = normalize_score_map(map);
    let constant = normalized.values.iter().all(|&v| v == 0.0);
    let mut mask = hard_gate(&normalized, tau, factor);
    if constant {
        mask.cells.fill(false);
    }
    mask
}

fn check_dims(image: (usize, usize), min_side: usize, max_side: usize) -> Result<()> {
    let (h, w) = image;
    if min_side == 0 || min_side > max_side {
        return Err(Error::Input(format!(
            "region side bounds [{min_side}, {max_side}] are invalid"
        )));
    }
    if h < min_side || w < min_side {
        return Err(Error::InputSize(format!(
            "image {h}x{w} is smaller than the minimum region side {min_side}"
        )));
    }
    Ok(())
}

/// Uniform `(height, width)` with each side in `[min_side, min(max_side, image side)]`.
pub fn sample_region_size(
    image: (usize, usize),
    rng: &mut impl Rng,
    min_side: usize,
    max_side: usize,
) -> Result<(usize, usize)> {
    check_dims(image, min_side, max_side)?;
    let h = rng.random_range(min_side..=max_side.min(image.0));
    let w = rng.random_range(min_side..=max_side.min(image.1));
    Ok((h, w))
}

/// Moves a rectangle of `size` centered at `center` the least distance
/// needed to fit inside the image.
fn place(center: (usize, usize), size: (usize, usize), image: (usize, usize)) -> Region {
    let top = center.0.saturating_sub(size.0 / 2).min(image.0 - size.0);
    let left = center.1.saturating_sub(size.1 / 2).min(image.1 - size.1);
    Region::new(top, left, size.0, size.1)
}

/// A spoof region together with the center pixel it was drawn around.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpoofDraw {
    pub region: Region,
    /// `None` when the mask was empty and the uniform fallback was used.
    pub center: Option<(usize, usize)>,
}

/// Region of a given size whose pre-shift center is uniform over the image
/// pixels covered by set mask cells. Falls back to a uniform random crop of
/// that size when the mask is empty.
pub fn place_spoof_region(
    mask: &BinaryMask,
    image: (usize, usize),
    size: (usize, usize),
    rng: &mut impl Rng,
) -> Result<SpoofDraw> {
    let (h, w) = image;
    if size.0 == 0 || size.1 == 0 || size.0 > h || size.1 > w {
        return Err(Error::InputSize(format!(
            "region {}x{} does not fit a {h}x{w} image",
            size.0, size.1
        )));
    }
    // Pixel count owned by each set cell, clipped at the image border.
    let f = mask.factor;
    let mut cells = Vec::new();
    let mut total = 0usize;
    for r in 0..mask.rows {
        for c in 0..mask.cols {
            if !mask.get(r, c) {
                continue;
            }
            let rows = (r * f..((r + 1) * f).min(h)).len();
            let cols = (c * f..((c + 1) * f).min(w)).len();
            if rows * cols > 0 {
                total += rows * cols;
                cells.push((r, c, rows, cols));
            }
        }
    }
    if total == 0 {
        let region = place_random_region(image, size, rng);
        return Ok(SpoofDraw {
            region,
            center: None,
        });
    }
    let mut pick = rng.random_range(0..total);
    for &(r, c, rows, cols) in &cells {
        let n = rows * cols;
        if pick < n {
            let center = (r * f + pick / cols, c * f + pick % cols);
            return Ok(SpoofDraw {
                region: place(center, size, image),
                center: Some(center),
            });
        }
        pick -= n;
    }
    unreachable!("pick < total")
}

pub fn sample_spoof_region(
    mask: &BinaryMask,
    image: (usize, usize),
    rng: &mut impl Rng,
    min_side: usize,
    max_side: usize,
) -> Result<SpoofDraw> {
    let size = sample_region_size(image, rng, min_side, max_side)?;
    place_spoof_region(mask, image, size, rng)
}

/// Uniform placement of a rectangle of `size`; `size` must fit.
pub fn place_random_region(image: (usize, usize), size: (usize, usize), rng: &mut impl Rng) -> Region {
    let top = rng.random_range(0..=image.0 - size.0);
    let left = rng.random_range(0..=image.1 - size.1);
    Region::new(top, left, size.0, size.1)
}

pub fn sample_random_region(
    image: (usize, usize),
    rng: &mut impl Rng,
    min_side: usize,
    max_side: usize,
) -> Result<Region> {
    let size = sample_region_size(image, rng, min_side, max_side)?;
    Ok(place_random_region(image, size, rng))
}

/// Hand-placed face parts on a 256x256 aligned crop.
pub fn fixed_region(kind: FixedRegion, image: (usize, usize)) -> Result<Region> {
    if image != (ALIGNED_SIDE, ALIGNED_SIDE) {
        return Err(Error::InputSize(format!(
            "fixed regions are defined on {ALIGNED_SIDE}x{ALIGNED_SIDE} aligned faces, got {}x{}",
            image.0, image.1
        )));
    }
    Ok(match kind {
        FixedRegion::Eye => Region::new(48, 32, 72, 192),
        FixedRegion::Nose => Region::new(96, 80, 80, 96),
        FixedRegion::Mouth => Region::new(160, 64, 72, 128),
    })
}

/// Copies `region` out of every sample of `image`.
pub fn crop<T: Real>(image: &Tensor<T>, region: &Region) -> Result<Tensor<T>> {
    let s = image.shape();
    if !region.fits(s.h, s.w) {
        return Err(Error::Bounds {
            region: format!("{region:?}"),
            height: s.h,
            width: s.w,
        });
    }
    let out_shape = Shape::new(s.n, region.height, region.width, s.c);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for y in region.top..region.bottom() {
            let start = s.offset(n, y, region.left, 0);
            data.extend_from_slice(&image.data()[start..start + region.width * s.c]);
        }
    }
    Ok(Tensor::from_vec(out_shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn map(h: usize, w: usize, values: Vec<f32>) -> ScoreMap {
        ScoreMap {
            height: h,
            width: w,
            values,
            image_height: h * 16,
            image_width: w * 16,
        }
    }

    #[test]
    fn normalize_closed_form() {
        let n = normalize_score_map(&map(2, 2, vec![0.0, 2.0, 4.0, 8.0]));
        assert_eq!(n.values, vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let n = normalize_score_map(&map(2, 2, vec![3.0; 4]));
        assert_eq!(n.values, vec![0.0; 4]);
        assert!(spoof_mask(&map(2, 2, vec![3.0; 4]), 0.0, 16).is_empty());
    }

    #[test]
    fn gate_includes_boundary() {
        let m = hard_gate(&map(2, 2, vec![0.2, 0.6, 0.5, 0.49]), 0.5, 16);
        assert_eq!(m.cells, vec![false, true, true, false]);
        let all = hard_gate(&map(2, 2, vec![0.2, 0.6, 0.5, 0.0]), 0.0, 16);
        assert_eq!(all.count(), 4);
    }

    #[test]
    fn fixed_regions() {
        let eye = fixed_region(FixedRegion::Eye, (256, 256)).unwrap();
        assert_eq!((eye.height, eye.width), (72, 192));
        for k in [FixedRegion::Eye, FixedRegion::Nose, FixedRegion::Mouth] {
            assert!(fixed_region(k, (256, 256)).unwrap().fits(256, 256));
        }
        let nose = fixed_region(FixedRegion::Nose, (256, 256)).unwrap();
        let overlap = (eye.top.max(nose.top), eye.bottom().min(nose.bottom()));
        assert_eq!(overlap, (96, 120));
        assert!(matches!(
            fixed_region(FixedRegion::Mouth, (64, 64)),
            Err(Error::InputSize(_))
        ));
    }

    #[test]
    fn full_size_random_region_is_whole_image() {
        let mut rng = seeded(1);
        let r = sample_random_region((64, 64), &mut rng, 64, 64).unwrap();
        assert_eq!(r, Region::full(64, 64));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let mut rng = seeded(1);
        assert!(matches!(
            sample_random_region((32, 80), &mut rng, 64, 256),
            Err(Error::InputSize(_))
        ));
    }

    #[test]
    fn corner_cell_region_shifts_to_origin() {
        let mut cells = vec![false; 256];
        cells[0] = true;
        let mask = BinaryMask {
            rows: 16,
            cols: 16,
            cells,
            factor: 16,
        };
        let mut rng = seeded(42);
        for _ in 0..1000 {
            let d = sample_spoof_region(&mask, (256, 256), &mut rng, 64, 256).unwrap();
            let (cy, cx) = d.center.unwrap();
            assert!(cy < 16 && cx < 16);
            assert_eq!((d.region.top, d.region.left), (0, 0));
        }
    }

    #[test]
    fn empty_mask_falls_back_to_uniform() {
        let mask = BinaryMask {
            rows: 4,
            cols: 4,
            cells: vec![false; 16],
            factor: 16,
        };
        let mut a = seeded(3);
        let mut b = seeded(3);
        let d = sample_spoof_region(&mask, (64, 64), &mut a, 16, 64).unwrap();
        assert!(d.center.is_none());
        let r = sample_random_region((64, 64), &mut b, 16, 64).unwrap();
        assert_eq!(d.region, r);
    }

    #[test]
    fn crop_semantics() {
        let t = Tensor::<f32>::from_vec(
            Shape::new(1, 4, 5, 2),
            (0..40).map(|v| v as f32).collect(),
        );
        assert_eq!(crop(&t, &Region::full(4, 5)).unwrap(), t);
        let a = Region::new(1, 1, 3, 4);
        let b = Region::new(1, 2, 2, 2);
        let ab = crop(&crop(&t, &a).unwrap(), &b).unwrap();
        assert_eq!(ab, crop(&t, &a.compose(&b)).unwrap());
        let c = crop(&t, &a).unwrap();
        assert_eq!(c[(0, 0, 0, 1)], t[(0, 1, 1, 1)]);
        assert!(matches!(
            crop(&t, &Region::new(2, 0, 3, 5)),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in ["self_supervised", "global", "fixed_eye", "fixed_nose", "fixed_mouth", "random"] {
            assert_eq!(s.parse::<RegionStrategy>().unwrap().name(), s);
        }
        assert!("landmarks".parse::<RegionStrategy>().is_err());
    }
}
