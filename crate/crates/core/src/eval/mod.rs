//! Evaluation harness: question-suite metrics, trace analyses, parameter
//! sweeps, boost calibration, and report encodings.

mod analysis;
mod calibrate;
mod metrics;
mod pope;
mod report;
mod strategy;
mod sweep;

pub use analysis::{
    entropy_report, kl_by_position, mean_entropy, mutual_information_estimate, subset_divergence_report, timing_report,
    timing_row, EntropyRow, PositionRow, SubsetDivergence, SubsetDivergenceReport, TimingRow,
};
pub use calibrate::{
    calibrate_boost, default_boost_grid, CalibratedSuite, Calibration, CalibrationPoint, SuiteConfig, TARGET_ACCURACY,
    TARGET_CENTRE,
};
pub use metrics::{Answer, Confusion, MeanStd, PopeMetrics, Scores};
pub use pope::{evaluate_pope, BoxedSource, EvalOptions, ItemOutcome, PopeEvaluation, SourceFactory, SyntheticFactory};
pub use report::{
    config_hash, divergence_table, entropy_table, pope_report, position_table, sweep_report, timing_table, Cell,
    ColumnKind, Report, ReportFormat, ReportHeader, ReportKind, ENGINE_VERSION,
};
pub use strategy::Strategy;
pub use sweep::{sweep, sweep_strategy, SweepParam, SweepRow, SweepTable};
