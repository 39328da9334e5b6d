//! Batch evaluation: manifests in, per-episode records and aggregated
//! reports out.

pub mod config;
pub mod eval;
pub mod manifest;
pub mod rank;
pub mod report;

pub use config::{ConfigError, EvalConfig, SampleSelection};
pub use eval::{evaluate_benchmark, evaluate_episode, EvalError};
pub use manifest::{load_manifests, EpisodeManifest, ManifestError, SampleEntry};
pub use rank::{human_consistency, rank_correlation, HumanAnnotations, Method, RankError};
pub use report::{emit_report, EpisodeRecord, MetricReport, MetricRow, Precision, ReportFormat};
