//! Error-rate metrics, video aggregation and evaluation protocols.

pub mod metrics;
pub mod protocol;
mod runner;

pub use metrics::{
    acer, aggregate_video, apcer_bpcer, eer, hter, mean_std, tdr_at_fdr, ConfusionCounts,
    ScoreRecord, ScoreSet,
};
pub use protocol::{
    check_subject_disjoint, evaluate_records, known_split, leave_one_spoof_out, run_protocol,
    CellMetrics, CellReport, CellRunner, MeanStd, Metric, ProtocolKind, ProtocolReport,
    ProtocolSpec, Split,
};
pub use runner::{score_records, FcnRunner};
