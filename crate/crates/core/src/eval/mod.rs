//! Joint-error metrics and their reports.

pub mod metrics;
pub mod pcj;
pub mod report;

pub use metrics::{joint_error, mpjpe, MetricReport, ReportColumn};
pub use pcj::{default_factors, pcj_curve, pcj_threshold, sample_thresholds, PcjConfig, PcjCurve};
