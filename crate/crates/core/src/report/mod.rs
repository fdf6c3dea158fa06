//! Evaluation orchestration and report output.

pub mod emit;
pub mod evaluate;
pub mod rank;

pub use emit::{emit_reports, read_metrics_csv, render_reports, MetricsRow};
pub use evaluate::{evaluate, evaluate_manifest, reliability_diagram, EvalOptions, Evaluation, MethodResult, SubjectMetrics, SubjectResult};
pub use rank::{Direction, Metric, RankTable};
