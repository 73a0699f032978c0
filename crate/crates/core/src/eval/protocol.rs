//! Train/test splits and per-cell reports for the three protocols.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, ScoreRecord, ScoreSet};
use crate::data::{Label, SampleRecord};
use crate::error::{Error, Result};
use crate::model::DECISION_THRESHOLD;
use crate::rng::stream;

/// Fraction of live subjects trained on when holding out one spoof type.
pub const LEAVE_OUT_LIVE_TRAIN_FRACTION: f64 = 0.8;
pub const KNOWN_TRAIN_FRACTION: f64 = 0.6;
pub const DEFAULT_FDR: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    LeaveOneSpoofOut,
    KnownSplit,
    CrossDataset,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::LeaveOneSpoofOut => "leave_one_spoof_out",
            ProtocolKind::KnownSplit => "known_split",
            ProtocolKind::CrossDataset => "cross_dataset",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leave_one_spoof_out" => Ok(ProtocolKind::LeaveOneSpoofOut),
            "known_split" => Ok(ProtocolKind::KnownSplit),
            "cross_dataset" => Ok(ProtocolKind::CrossDataset),
            other => Err(Error::Protocol(format!(
                "unknown protocol `{other}` (expected leave_one_spoof_out, known_split or cross_dataset)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Live fraction kept for training (leave-one-out) or subject fraction
    /// kept for training (known split). Unused cross-dataset.
    pub train_fraction: f64,
    /// Restrict leave-one-out to a single held-out type.
    pub held_out: Option<String>,
    pub seed: u64,
    pub fdr_target: f64,
}

impl ProtocolSpec {
    pub fn new(kind: ProtocolKind, seed: u64) -> Self {
        let train_fraction = match kind {
            ProtocolKind::KnownSplit => KNOWN_TRAIN_FRACTION,
            _ => LEAVE_OUT_LIVE_TRAIN_FRACTION,
        };
        ProtocolSpec {
            kind,
            train_fraction,
            held_out: None,
            seed,
            fdr_target: DEFAULT_FDR,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Protocol(format!(
                "train fraction {} must lie in (0, 1)",
                self.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.fdr_target) {
            return Err(Error::Protocol(format!("FDR target {} is outside [0, 1]", self.fdr_target)));
        }
        Ok(())
    }
}

/// Indices into the manifest for one protocol cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub held_out: Option<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Set when leave-one-out had a single spoof type and fell back to a known split.
    pub degenerate: bool,
}

fn check_tags(records: &[SampleRecord]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.subject_id.is_empty() || r.video_id.is_empty() || r.spoof_type.is_empty() {
            return Err(Error::Protocol(format!("record {i} is missing a subject, video or type tag")));
        }
    }
    Ok(())
}

/// Spoof types in order of first appearance.
pub fn spoof_types(records: &[SampleRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| r.label == Label::Spoof && seen.insert(r.spoof_type.as_str()))
        .map(|r| r.spoof_type.clone())
        .collect()
}

/// Errors if any subject appears on both sides of the split.
pub fn check_subject_disjoint(records: &[SampleRecord], split: &Split) -> Result<()> {
    let train: HashSet<&str> = split.train.iter().map(|&i| records[i].subject_id.as_str()).collect();
    if let Some(&i) = split.test.iter().find(|&&i| train.contains(records[i].subject_id.as_str())) {
        return Err(Error::Protocol(format!(
            "subject `{}` appears in both train and test of cell `{}`",
            records[i].subject_id, split.name
        )));
    }
    Ok(())
}

fn check_both_classes(records: &[SampleRecord], idx: &[usize], what: &str, cell: &str) -> Result<()> {
    let spoofs = idx.iter().filter(|&&i| records[i].label == Label::Spoof).count();
    if spoofs == 0 || spoofs == idx.len() {
        return Err(Error::Protocol(format!(
            "{what} partition of cell `{cell}` lacks lives or spoofs"
        )));
    }
    Ok(())
}

fn shuffled_subjects<'a>(subjects: impl IntoIterator<Item = &'a str>, seed: u64, tag: &str, index: u64) -> Vec<&'a str> {
    let sorted: BTreeSet<&str> = subjects.into_iter().collect();
    let mut v: Vec<&str> = sorted.into_iter().collect();
    v.shuffle(&mut stream(seed, tag, index));
    v
}

/// One cell per spoof type: train on the other types plus most live
/// subjects, test on the held-out type plus the remaining lives.
///
/// Every subject that owns a held-out spoof is moved to the test side, its
/// lives included, and its other spoofs are dropped from the cell. Further
/// live subjects are added in seeded order until at least
/// `1 - live_train_fraction` of live records are in test.
pub fn leave_one_spoof_out(
    records: &[SampleRecord],
    live_train_fraction: f64,
    seed: u64,
    only: Option<&str>,
) -> Result<Vec<Split>> {
    check_tags(records)?;
    let types = spoof_types(records);
    if types.is_empty() {
        return Err(Error::Protocol("manifest has no spoof records".into()));
    }
    if let Some(t) = only {
        if !types.iter().any(|x| x == t) {
            return Err(Error::Protocol(format!("spoof type `{t}` is not in the manifest")));
        }
    }
    if types.len() == 1 {
        log::warn!(
            "only one spoof type (`{}`); leave-one-spoof-out falls back to a known split",
            types[0]
        );
        let mut split = known_split(records, KNOWN_TRAIN_FRACTION, seed)?;
        split.degenerate = true;
        split.held_out = Some(types[0].clone());
        return Ok(vec![split]);
    }

    let live_total = records.iter().filter(|r| r.label == Label::Live).count();
    let live_test_target = (1.0 - live_train_fraction) * live_total as f64;
    let mut splits = Vec::new();
    for (k, held) in types.iter().enumerate() {
        if only.is_some_and(|t| t != held) {
            continue;
        }
        let mut test_subjects: HashSet<&str> = records
            .iter()
            .filter(|r| r.label == Label::Spoof && &r.spoof_type == held)
            .map(|r| r.subject_id.as_str())
            .collect();
        let live_count = |subjects: &HashSet<&str>| {
            records
                .iter()
                .filter(|r| r.label == Label::Live && subjects.contains(r.subject_id.as_str()))
                .count()
        };
        let live_subjects = records
            .iter()
            .filter(|r| r.label == Label::Live)
            .map(|r| r.subject_id.as_str());
        for s in shuffled_subjects(live_subjects, seed, "leave-one-out", k as u64) {
            if live_count(&test_subjects) as f64 >= live_test_target {
                break;
            }
            test_subjects.insert(s);
        }
        let mut split = Split {
            name: held.clone(),
            held_out: Some(held.clone()),
            train: Vec::new(),
            test: Vec::new(),
            degenerate: false,
        };
        for (i, r) in records.iter().enumerate() {
            let in_test = test_subjects.contains(r.subject_id.as_str());
            let is_held = r.label == Label::Spoof && &r.spoof_type == held;
            match (in_test, is_held || r.label == Label::Live) {
                (true, true) => split.test.push(i),
                (false, _) if !is_held => split.train.push(i),
                _ => {}
            }
        }
        check_both_classes(records, &split.train, "train", held)?;
        check_both_classes(records, &split.test, "test", held)?;
        check_subject_disjoint(records, &split)?;
        splits.push(split);
    }
    Ok(splits)
}

/// Seeded subject-disjoint split. Subjects owning any spoof and live-only
/// subjects are split separately so both sides see both classes.
pub fn known_split(records: &[SampleRecord], train_fraction: f64, seed: u64) -> Result<Split> {
    check_tags(records)?;
    let spoof_subjects: HashSet<&str> = records
        .iter()
        .filter(|r| r.label == Label::Spoof)
        .map(|r| r.subject_id.as_str())
        .collect();
    let live_only = records
        .iter()
        .map(|r| r.subject_id.as_str())
        .filter(|s| !spoof_subjects.contains(s));
    let mut train_subjects: HashSet<&str> = HashSet::new();
    for (tag, group) in [
        ("known-spoof", shuffled_subjects(spoof_subjects.iter().copied(), seed, "known", 0)),
        ("known-live", shuffled_subjects(live_only, seed, "known", 1)),
    ] {
        let n_train = (train_fraction * group.len() as f64).round() as usize;
        if !group.is_empty() && (n_train == 0 || n_train == group.len()) {
            return Err(Error::Protocol(format!(
                "{tag}: {} subjects cannot be split at fraction {train_fraction}",
                group.len()
            )));
        }
        train_subjects.extend(&group[..n_train]);
    }
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..records.len()).partition(|&i| train_subjects.contains(records[i].subject_id.as_str()));
    let split = Split {
        name: "known".into(),
        held_out: None,
        train,
        test,
        degenerate: false,
    };
    check_both_classes(records, &split.train, "train", "known")?;
    check_both_classes(records, &split.test, "test", "known")?;
    check_subject_disjoint(records, &split)?;
    Ok(split)
}

/// Trains a detector on one cell and scores its test records.
pub trait CellRunner {
    /// Returns one spoofness score per `test` record, in order.
    fn run_cell(&mut self, cell: usize, train: &[SampleRecord], test: &[SampleRecord]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Apcer,
    Bpcer,
    Acer,
    Eer,
    Tdr,
    Hter,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Apcer,
        Metric::Bpcer,
        Metric::Acer,
        Metric::Eer,
        Metric::Tdr,
        Metric::Hter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Apcer => "APCER",
            Metric::Bpcer => "BPCER",
            Metric::Acer => "ACER",
            Metric::Eer => "EER",
            Metric::Tdr => "TDR",
            Metric::Hter => "HTER",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown metric `{s}`")))
    }
}

/// Video-level metrics of one cell. Threshold-based rates use 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub tdr: f64,
    pub hter: f64,
}

impl CellMetrics {
    pub fn compute(set: &ScoreSet, fdr_target: f64) -> Result<Self> {
        let counts = set.counts(DECISION_THRESHOLD);
        let (apcer, bpcer) = super::metrics::apcer_bpcer(&counts)?;
        let (eer, eer_threshold) = set.eer()?;
        Ok(CellMetrics {
            apcer,
            bpcer,
            acer: set.acer(DECISION_THRESHOLD)?,
            eer,
            eer_threshold,
            tdr: set.tdr_at_fdr(fdr_target)?,
            hter: set.hter(DECISION_THRESHOLD)?,
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Apcer => self.apcer,
            Metric::Bpcer => self.bpcer,
            Metric::Acer => self.acer,
            Metric::Eer => self.eer,
            Metric::Tdr => self.tdr,
            Metric::Hter => self.hter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub name: String,
    pub held_out: Option<String>,
    pub degenerate: bool,
    pub train_records: usize,
    pub test_records: usize,
    pub test_videos: usize,
    pub metrics: CellMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    /// Protocol name, or `fixed_weights` for a single pre-trained model.
    pub protocol: String,
    pub threshold: f64,
    pub fdr_target: f64,
    pub cells: Vec<CellReport>,
    /// Mean and sample standard deviation across cells, per metric.
    pub summary: BTreeMap<String, MeanStd>,
}

impl ProtocolReport {
    pub fn from_cells(protocol: &str, fdr_target: f64, cells: Vec<CellReport>) -> Self {
        let summary = Metric::ALL
            .into_iter()
            .filter_map(|m| {
                let v: Vec<f64> = cells.iter().map(|c| c.metrics.get(m)).collect();
                mean_std(&v).map(|(mean, std)| (m.name().to_string(), MeanStd { mean, std }))
            })
            .collect();
        ProtocolReport {
            protocol: protocol.to_string(),
            threshold: DECISION_THRESHOLD,
            fdr_target,
            cells,
            summary,
        }
    }

    /// Fixed-width table of `metrics` in percent, one row per cell and a
    /// final `Mean ± Std.` row.
    pub fn to_table(&self, metrics: &[Metric]) -> String {
        let label = |m: Metric| match m {
            Metric::Tdr => format!("TDR@{}%FDR", self.fdr_target * 100.0),
            _ => m.name().to_string(),
        };
        let width = self.cells.iter().map(|c| c.name.len()).max().unwrap_or(0).max(14);
        let mut out = format!("{:<width$}", "Cell");
        for &m in metrics {
            let _ = write!(out, "  {:>16}", label(m));
        }
        out.push('\n');
        for c in &self.cells {
            let _ = write!(out, "{:<width$}", c.name);
            for &m in metrics {
                let _ = write!(out, "  {:>16.2}", c.metrics.get(m) * 100.0);
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<width$}", "Mean ± Std.");
        for &m in metrics {
            let s = self.summary[m.name()];
            let cell = format!("{:.2} ± {:.2}", s.mean * 100.0, s.std * 100.0);
            let _ = write!(out, "  {cell:>16}");
        }
        out.push('\n');
        out
    }
}

/// Frame scores of `records` turned into video-level metrics.
pub fn evaluate_records(
    records: &[SampleRecord],
    scores: &[f64],
    fdr_target: f64,
) -> Result<(ScoreSet, CellMetrics)> {
    if records.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} scores for {} records",
            scores.len(),
            records.len()
        )));
    }
    let frames: Vec<ScoreRecord> = records
        .iter()
        .zip(scores)
        .map(|(r, &score)| ScoreRecord {
            video_id: r.video_id.clone(),
            score,
            spoof: r.label == Label::Spoof,
            spoof_type: r.spoof_type.clone(),
        })
        .collect();
    let set = ScoreSet::from_frames(&frames)?;
    let metrics = CellMetrics::compute(&set, fdr_target)?;
    Ok((set, metrics))
}

fn pick(records: &[SampleRecord], idx: &[usize]) -> Vec<SampleRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Splits, trains and scores every cell of `spec`. `secondary` is the test
/// manifest for cross-dataset runs and ignored otherwise.
pub fn run_protocol(
    spec: &ProtocolSpec,
    runner: &mut dyn CellRunner,
    primary: &[SampleRecord],
    secondary: Option<&[SampleRecord]>,
) -> Result<ProtocolReport> {
    spec.validate()?;
    let mut cells = Vec::new();
    let mut run = |cell: usize, name: String, held_out, degenerate, train: Vec<SampleRecord>, test: Vec<SampleRecord>| -> Result<()> {
        log::info!("cell {cell} `{name}`: {} train / {} test records", train.len(), test.len());
        let scores = runner.run_cell(cell, &train, &test)?;
        let (set, metrics) = evaluate_records(&test, &scores, spec.fdr_target)?;
        cells.push(CellReport {
            name,
            held_out,
            degenerate,
            train_records: train.len(),
            test_records: test.len(),
            test_videos: set.records.len(),
            metrics,
        });
        Ok(())
    };
    match spec.kind {
        ProtocolKind::LeaveOneSpoofOut => {
            let splits = leave_one_spoof_out(primary, spec.train_fraction, spec.seed, spec.held_out.as_deref())?;
            for (k, s) in splits.into_iter().enumerate() {
                run(k, s.name, s.held_out, s.degenerate, pick(primary, &s.train), pick(primary, &s.test))?;
            }
        }
        ProtocolKind::KnownSplit => {
            let s = known_split(primary, spec.train_fraction, spec.seed)?;
            run(0, s.name, None, false, pick(primary, &s.train), pick(primary, &s.test))?;
        }
        ProtocolKind::CrossDataset => {
            let test = secondary
                .ok_or_else(|| Error::Protocol("cross-dataset evaluation needs a second manifest".into()))?;
            check_tags(primary)?;
            check_tags(test)?;
            run(0, "cross".into(), None, false, primary.to_vec(), test.to_vec())?;
        }
    }
    Ok(ProtocolReport::from_cells(spec.kind.name(), spec.fdr_target, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, video: &str, label: Label, t: &str) -> SampleRecord {
        SampleRecord {
            image_path: format!("{video}.png").into(),
            label,
            spoof_type: t.into(),
            video_id: video.into(),
            subject_id: subject.into(),
            frame_index: Some(0),
        }
    }

    fn manifest(types: &[&str], lives: usize) -> Vec<SampleRecord> {
        let mut r = Vec::new();
        for i in 0..lives {
            r.push(rec(&format!("L{}", i / 2), &format!("l{i}"), Label::Live, "live"));
        }
        for t in types {
            for j in 0..4 {
                r.push(rec(&format!("{t}{}", j / 2), &format!("{t}-{j}"), Label::Spoof, t));
            }
        }
        r
    }

    #[test]
    fn leave_one_out_cells_are_disjoint() {
        let m = manifest(&["a", "b", "c"], 20);
        let splits = leave_one_spoof_out(&m, 0.8, 1, None).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            check_subject_disjoint(&m, s).unwrap();
            let held = s.held_out.as_deref().unwrap();
            assert!(s.test.iter().all(|&i| m[i].label == Label::Live || m[i].spoof_type == held));
            assert!(s.train.iter().all(|&i| m[i].spoof_type != held));
            let test_lives = s.test.iter().filter(|&&i| m[i].label == Label::Live).count();
            assert_eq!(test_lives, 4);
        }
    }

    #[test]
    fn shared_subjects_move_to_test() {
        let mut m = manifest(&["a", "b"], 10);
        m.push(rec("a0", "a0-live", Label::Live, "live"));
        m.push(rec("a0", "a0-b", Label::Spoof, "b"));
        let s = &leave_one_spoof_out(&m, 0.8, 0, Some("a")).unwrap()[0];
        check_subject_disjoint(&m, s).unwrap();
        let live_idx = m.len() - 2;
        assert!(s.test.contains(&live_idx));
        assert!(!s.train.contains(&(m.len() - 1)) && !s.test.contains(&(m.len() - 1)));
    }

    #[test]
    fn single_type_degenerates() {
        let m = manifest(&["a"], 10);
        let s = leave_one_spoof_out(&m, 0.8, 0, None).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].degenerate);
    }

    #[test]
    fn known_split_is_seeded_and_disjoint() {
        let m = manifest(&["a", "b", "c"], 20);
        let a = known_split(&m, 0.6, 5).unwrap();
        assert_eq!(a, known_split(&m, 0.6, 5).unwrap());
        check_subject_disjoint(&m, &a).unwrap();
        assert_eq!(a.train.len() + a.test.len(), m.len());
    }

    #[test]
    fn overlap_is_detected() {
        let m = manifest(&["a", "b"], 4);
        let bad = Split {
            name: "x".into(),
            held_out: None,
            train: vec![0],
            test: vec![1],
            degenerate: false,
        };
        assert!(matches!(check_subject_disjoint(&m, &bad), Err(Error::Protocol(_))));
    }

    struct Oracle;
    impl CellRunner for Oracle {
        fn run_cell(&mut self, _: usize, _: &[SampleRecord], test: &[SampleRecord]) -> Result<Vec<f64>> {
            Ok(test.iter().map(|r| if r.label == Label::Spoof { 0.9 } else { 0.1 }).collect())
        }
    }

    #[test]
    fn perfect_runner_reports_zero_error() {
        let m = manifest(&["a", "b", "c"], 20);
        let spec = ProtocolSpec::new(ProtocolKind::LeaveOneSpoofOut, 3);
        let r = run_protocol(&spec, &mut Oracle, &m, None).unwrap();
        assert_eq!(r.cells.len(), 3);
        assert_eq!(r.summary["ACER"], MeanStd { mean: 0.0, std: 0.0 });
        assert_eq!(r.summary["TDR"].mean, 1.0);
        let table = r.to_table(&[Metric::Eer, Metric::Tdr]);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("Mean ± Std."));
        let cross = run_protocol(&ProtocolSpec::new(ProtocolKind::CrossDataset, 0), &mut Oracle, &m, Some(&m)).unwrap();
        assert_eq!(cross.cells[0].metrics.hter, 0.0);
        assert!(run_protocol(&ProtocolSpec::new(ProtocolKind::CrossDataset, 0), &mut Oracle, &m, None).is_err());
    }
}
