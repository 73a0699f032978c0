//! Synthetic live/spoof faces for desk-scale experiments.
//!
//! Lives are smooth textures: a few low-frequency sinusoids over a base
//! colour, a linear illumination ramp and mild pixel noise. Spoofs are lives
//! with a high-frequency grid added, either over the whole image or inside a
//! random box whose coordinates are recorded as ground truth. Each spoof type
//! uses its own grid period and orientation.

use std::f32::consts::TAU;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Label, SampleRecord, LIVE_TYPE};
use super::preprocess::image_to_tensor;
use super::Sample;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_atomic_bytes};
use crate::region::Region;
use crate::rng::stream;

/// Thirteen spoof-type names in the style of a large multi-attack benchmark.
pub const THIRTEEN_TYPES: [&str; 13] = [
    "replay",
    "print",
    "half_mask",
    "silicone_mask",
    "transparent_mask",
    "papercraft_mask",
    "mannequin",
    "obfuscation_makeup",
    "impersonation_makeup",
    "cosmetic_makeup",
    "funny_eye",
    "paper_glasses",
    "partial_paper",
];

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    GlobalTexture,
    PartialPatch,
}

impl std::str::FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_texture" => Ok(ArtifactKind::GlobalTexture),
            "partial_patch" => Ok(ArtifactKind::PartialPatch),
            other => Err(Error::Input(format!(
                "unknown artifact kind `{other}` (expected global_texture or partial_patch)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub live_videos: usize,
    pub spoof_videos: usize,
    pub frames_per_video: usize,
    pub videos_per_subject: usize,
    pub side: usize,
    pub artifact: ArtifactKind,
    /// Side range of partial-patch boxes.
    pub box_min: usize,
    pub box_max: usize,
    /// Peak grid offset in 8-bit intensity units.
    pub amplitude: f32,
    /// Peak uniform pixel noise on every image.
    pub noise: f32,
    /// Spoof videos cycle through these types.
    pub spoof_types: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            live_videos: 32,
            spoof_videos: 32,
            frames_per_video: 1,
            videos_per_subject: 2,
            side: 256,
            artifact: ArtifactKind::GlobalTexture,
            box_min: 64,
            box_max: 128,
            amplitude: 24.0,
            noise: 4.0,
            spoof_types: vec!["print".into()],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.side == 0 || self.frames_per_video == 0 || self.videos_per_subject == 0 {
            return bad("side, frames_per_video and videos_per_subject must be positive".into());
        }
        if self.spoof_videos > 0 && self.spoof_types.is_empty() {
            return bad("spoof videos need at least one spoof type".into());
        }
        if self.spoof_types.iter().any(|t| t == LIVE_TYPE || t.is_empty()) {
            return bad(format!("spoof types may not be empty or `{LIVE_TYPE}`"));
        }
        if self.artifact == ArtifactKind::PartialPatch
            && (self.box_min == 0 || self.box_min > self.box_max || self.box_max > self.side)
        {
            return bad(format!(
                "box sides [{}, {}] must satisfy 0 < min <= max <= {}",
                self.box_min, self.box_max, self.side
            ));
        }
        Ok(())
    }
}

/// One generated frame.
#[derive(Clone, Debug)]
pub struct SynthItem {
    /// Image path relative to the dataset directory.
    pub record: SampleRecord,
    pub image: RgbImage,
    pub artifact_box: Option<Region>,
    video: usize,
    frame: usize,
}

/// Ground-truth sidecar entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_path: PathBuf,
    /// `[top, left, height, width]`, absent for lives and global spoofs.
    pub artifact_box: Option<[usize; 4]>,
}

struct Wave {
    fy: f32,
    fx: f32,
    phase: f32,
    gain: [f32; 3],
}

struct LiveParams {
    base: [f32; 3],
    ramp: [f32; 2],
    waves: Vec<Wave>,
}

fn live_params(cfg: &SynthConfig, video: usize) -> LiveParams {
    let mut rng = stream(cfg.seed, "synth-video", video as u64);
    let base = [0; 3].map(|_: i32| rng.random_range(80.0..176.0f32));
    let ramp = [0; 2].map(|_: i32| rng.random_range(-40.0..40.0f32));
    let waves = (0..4)
        .map(|_| Wave {
            fy: rng.random_range(0.0..3.0f32),
            fx: rng.random_range(0.0..3.0f32),
            phase: rng.random_range(0.0..TAU),
            gain: [0; 3].map(|_: i32| rng.random_range(0.0..14.0f32)),
        })
        .collect();
    LiveParams { base, ramp, waves }
}

/// Renders frame `frame` of live texture `video` as floating intensities.
fn render_live(cfg: &SynthConfig, video: usize, frame: usize) -> Vec<f32> {
    let p = live_params(cfg, video);
    let mut rng = stream(cfg.seed, "synth-frame", ((video as u64) << 20) | frame as u64);
    let drift = frame as f32 * 0.05;
    let side = cfg.side as f32;
    let mut out = Vec::with_capacity(cfg.side * cfg.side * 3);
    for y in 0..cfg.side {
        let v = y as f32 / side;
        for x in 0..cfg.side {
            let u = x as f32 / side;
            let light = p.ramp[0] * (v - 0.5) + p.ramp[1] * (u - 0.5);
            for c in 0..3 {
                let mut val = p.base[c] + light;
                for w in &p.waves {
                    val += w.gain[c] * (TAU * (w.fy * v + w.fx * u) + w.phase + drift).sin();
                }
                if cfg.noise > 0.0 {
                    val += rng.random_range(-cfg.noise..=cfg.noise);
                }
                out.push(val);
            }
        }
    }
    out
}

/// `+1 / -1` grid pattern of spoof type `kind` at pixel `(y, x)`.
fn grid(kind: usize, y: usize, x: usize) -> f32 {
    let period = 2 + kind % 3;
    let on = match (kind / 3) % 4 {
        0 => (x % period) * 2 < period,
        1 => (y % period) * 2 < period,
        2 => ((x + y) % period) * 2 < period,
        _ => ((x / 2 + y / 2) % 2) == 0,
    };
    if on {
        1.0
    } else {
        -1.0
    }
}

fn to_image(side: usize, values: &[f32]) -> RgbImage {
    let raw = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::from_raw(side as u32, side as u32, raw).expect("buffer matches dimensions")
}

/// The live image a frame was built on (identical to the frame for lives).
pub fn underlying_live(cfg: &SynthConfig, item: &SynthItem) -> RgbImage {
    to_image(cfg.side, &render_live(cfg, item.video, item.frame))
}

/// Generates the whole dataset in memory: live videos first, then spoof
/// videos cycling through `spoof_types`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    let mut items = Vec::new();
    let total = cfg.live_videos + cfg.spoof_videos;
    for video in 0..total {
        let spoof_index = video.checked_sub(cfg.live_videos);
        let (kind, type_name, subject) = match spoof_index {
            None => (
                None,
                LIVE_TYPE.to_string(),
                format!("live-s{:03}", video / cfg.videos_per_subject),
            ),
            Some(j) => {
                let t = j % cfg.spoof_types.len();
                let name = cfg.spoof_types[t].clone();
                let within = j / cfg.spoof_types.len();
                let subject = format!("{name}-s{:03}", within / cfg.videos_per_subject);
                (Some(t), name, subject)
            }
        };
        let video_id = format!("v{video:04}");
        let mut art_rng = stream(cfg.seed, "synth-artifact", video as u64);
        // One box per video: the attack instrument does not move between frames.
        let artifact_box = match (kind, cfg.artifact) {
            (Some(_), ArtifactKind::PartialPatch) => {
                let h = art_rng.random_range(cfg.box_min..=cfg.box_max);
                let w = art_rng.random_range(cfg.box_min..=cfg.box_max);
                let top = art_rng.random_range(0..=cfg.side - h);
                let left = art_rng.random_range(0..=cfg.side - w);
                Some(Region::new(top, left, h, w))
            }
            _ => None,
        };
        let tint = [0; 3].map(|_: i32| art_rng.random_range(0.6..1.0f32));
        for frame in 0..cfg.frames_per_video {
            let mut values = render_live(cfg, video, frame);
            if let Some(k) = kind {
                let area = artifact_box.unwrap_or(Region::full(cfg.side, cfg.side));
                for y in area.top..area.bottom() {
                    for x in area.left..area.right() {
                        let g = cfg.amplitude * grid(k, y, x);
                        let o = (y * cfg.side + x) * 3;
                        for c in 0..3 {
                            values[o + c] += g * tint[c];
                        }
                    }
                }
            }
            let label = if kind.is_some() { Label::Spoof } else { Label::Live };
            items.push(SynthItem {
                record: SampleRecord {
                    image_path: PathBuf::from(format!("images/{video_id}_{frame:03}.png")),
                    label,
                    spoof_type: type_name.clone(),
                    video_id: video_id.clone(),
                    subject_id: subject.clone(),
                    frame_index: Some(frame as u64),
                },
                image: to_image(cfg.side, &values),
                artifact_box,
                video,
                frame,
            });
        }
    }
    Ok(items)
}

impl SynthItem {
    pub fn to_sample(&self) -> Sample {
        Sample {
            image: image_to_tensor(&self.image),
            spoof: self.record.label.is_spoof(),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            image_path: self.record.image_path.clone(),
            artifact_box: self.artifact_box.map(|r| [r.top, r.left, r.height, r.width]),
        }
    }
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    Ok(bytes)
}

/// Writes PNG frames, the manifest and the ground-truth sidecar under `dir`.
/// Returns the records as written (paths relative to `dir`).
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Vec<SampleRecord>> {
    let items = generate(cfg)?;
    std::fs::create_dir_all(dir.join("images"))?;
    for item in &items {
        write_atomic_bytes(&dir.join(&item.record.image_path), &encode_png(&item.image)?)?;
    }
    let records: Vec<SampleRecord> = items.iter().map(|i| i.record.clone()).collect();
    write_manifest(&dir.join(MANIFEST_FILE), &records)?;
    let truth: Vec<GroundTruth> = items.iter().map(SynthItem::ground_truth).collect();
    write_atomic(&dir.join(GROUND_TRUTH_FILE), |out| {
        serde_json::to_writer_pretty(&mut *out, &truth)?;
        out.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(records)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
