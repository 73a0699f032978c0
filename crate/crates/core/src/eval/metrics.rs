//! Error rates with spoof as the positive class and the rule
//! `spoof <=> score >= threshold`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub video_id: String,
    pub score: f64,
    pub spoof: bool,
    pub spoof_type: String,
}

/// Per-video scores, the input to every threshold metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn new(records: Vec<ScoreRecord>) -> Self {
        ScoreSet { records }
    }

    /// Averages frame scores per video. Videos appear in order of first
    /// occurrence; label and type come from the first frame.
    pub fn from_frames(frames: &[ScoreRecord]) -> Result<Self> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, (Vec<f64>, &ScoreRecord)> = BTreeMap::new();
        for f in frames {
            let entry = groups.entry(f.video_id.as_str()).or_insert_with(|| {
                order.push(f.video_id.as_str());
                (Vec::new(), f)
            });
            if entry.1.spoof != f.spoof || entry.1.spoof_type != f.spoof_type {
                return Err(Error::Input(format!(
                    "video `{}` mixes labels or spoof types across frames",
                    f.video_id
                )));
            }
            entry.0.push(f.score);
        }
        let records = order
            .into_iter()
            .map(|id| {
                let (scores, first) = &groups[id];
                Ok(ScoreRecord {
                    score: aggregate_video(scores)?,
                    ..(*first).clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(ScoreSet { records })
    }

    pub fn lives(&self) -> Vec<f64> {
        self.records.iter().filter(|r| !r.spoof).map(|r| r.score).collect()
    }

    pub fn spoofs(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.spoof).map(|r| r.score).collect()
    }

    fn check(&self) -> Result<()> {
        if let Some(r) = self.records.iter().find(|r| !r.score.is_finite()) {
            return Err(Error::Input(format!("video `{}` has a non-finite score", r.video_id)));
        }
        Ok(())
    }

    pub fn counts(&self, threshold: f64) -> ConfusionCounts {
        ConfusionCounts::at(self.records.iter().map(|r| (r.score, r.spoof)), threshold)
    }

    /// APCER of each spoof type at `threshold`.
    pub fn per_type_apcer(&self, threshold: f64) -> Result<BTreeMap<String, f64>> {
        let mut by_type: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.spoof) {
            let c = by_type.entry(r.spoof_type.clone()).or_default();
            if r.score >= threshold {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        by_type
            .into_iter()
            .map(|(t, c)| {
                let apcer = c.fn_ as f64 / (c.fn_ + c.tp) as f64;
                Ok((t, apcer))
            })
            .collect()
    }

    pub fn eer(&self) -> Result<(f64, f64)> {
        self.check()?;
        eer(&self.lives(), &self.spoofs())
    }

    pub fn tdr_at_fdr(&self, fdr_target: f64) -> Result<f64> {
        self.check()?;
        tdr_at_fdr(&self.lives(), &self.spoofs(), fdr_target)
    }

    /// `(max_k APCER_k + BPCER) / 2` at `threshold`.
    pub fn acer(&self, threshold: f64) -> Result<f64> {
        self.check()?;
        let (_, bpcer) = apcer_bpcer(&self.counts(threshold))?;
        acer(&self.per_type_apcer(threshold)?, bpcer)
    }

    /// `(APCER + BPCER) / 2` at `threshold`.
    pub fn hter(&self, threshold: f64) -> Result<f64> {
        self.check()?;
        let (apcer, bpcer) = apcer_bpcer(&self.counts(threshold))?;
        Ok(hter(bpcer, apcer))
    }
}

/// Arithmetic mean of a video's frame scores.
pub fn aggregate_video(frame_scores: &[f64]) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::Input("cannot aggregate a video with no frames".into()));
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts `(score, is_spoof)` pairs under `spoof <=> score >= threshold`.
    pub fn at(scores: impl IntoIterator<Item = (f64, bool)>, threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for (s, spoof) in scores {
            match (spoof, s >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

/// `(FN / (FN + TP), FP / (FP + TN))`.
pub fn apcer_bpcer(c: &ConfusionCounts) -> Result<(f64, f64)> {
    if c.fn_ + c.tp == 0 {
        return Err(Error::UndefinedMetric("APCER needs at least one spoof".into()));
    }
    if c.fp + c.tn == 0 {
        return Err(Error::UndefinedMetric("BPCER needs at least one live".into()));
    }
    Ok((
        c.fn_ as f64 / (c.fn_ + c.tp) as f64,
        c.fp as f64 / (c.fp + c.tn) as f64,
    ))
}

/// Worst per-type APCER averaged with BPCER.
pub fn acer(per_type_apcer: &BTreeMap<String, f64>, bpcer: f64) -> Result<f64> {
    let worst = per_type_apcer
        .values()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Input("ACER needs at least one spoof type".into()))?;
    Ok((worst + bpcer) / 2.0)
}

pub fn hter(fdr: f64, frr: f64) -> f64 {
    (fdr + frr) / 2.0
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn need_both(lives: &[f64], spoofs: &[f64]) -> Result<()> {
    if lives.is_empty() || spoofs.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "threshold metrics need both classes ({} lives, {} spoofs)",
            lives.len(),
            spoofs.len()
        )));
    }
    Ok(())
}

/// Equal error rate and its threshold.
///
/// Candidate thresholds are the smallest score, the midpoints between
/// consecutive distinct scores, and one above the largest score. The
/// candidate minimizing `|APCER - BPCER|` wins, the smaller one on ties, and
/// the EER is the mean of the two rates there.
pub fn eer(lives: &[f64], spoofs: &[f64]) -> Result<(f64, f64)> {
    need_both(lives, spoofs)?;
    let l = sorted(lives);
    let s = sorted(spoofs);
    let mut all: Vec<f64> = l.iter().chain(&s).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(all[0]);
    candidates.extend(all.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(all[all.len() - 1] + 1.0);

    let mut best: Option<(f64, f64, f64)> = None;
    for t in candidates {
        let apcer = s.partition_point(|&v| v < t) as f64 / s.len() as f64;
        let bpcer = (l.len() - l.partition_point(|&v| v < t)) as f64 / l.len() as f64;
        let gap = (apcer - bpcer).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, t, (apcer + bpcer) / 2.0));
        }
    }
    let (_, t, rate) = best.expect("at least two candidates");
    Ok((rate, t))
}

/// Fraction of spoofs at or above the smallest candidate threshold whose
/// live false-detection fraction is within `fdr_target`. Candidates are
/// the live scores and the next float above the largest live score.
pub fn tdr_at_fdr(lives: &[f64], spoofs: &[f64], fdr_target: f64) -> Result<f64> {
    need_both(lives, spoofs)?;
    if !(0.0..=1.0).contains(&fdr_target) {
        return Err(Error::Input(format!("FDR target {fdr_target} is outside [0, 1]")));
    }
    let l = sorted(lives);
    let n = l.len() as f64;
    let above = next_up(l[l.len() - 1]);
    let t = l
        .iter()
        .copied()
        .find(|&t| (l.len() - l.partition_point(|&v| v < t)) as f64 / n <= fdr_target)
        .unwrap_or(above);
    Ok(spoofs.iter().filter(|&&v| v >= t).count() as f64 / spoofs.len() as f64)
}

/// Smallest `f64` strictly greater than `x` (finite `x`).
pub fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
