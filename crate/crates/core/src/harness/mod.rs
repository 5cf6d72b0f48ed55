//! Episode orchestration and metrics.

pub mod bench;
pub mod config;
pub mod episode;
pub mod metrics;
pub mod robot;

pub use config::{ArtifactConfig, EpisodeConfig, HierarchySettings, MotionConfig};
pub use episode::{run_episode, write_bundle, EpisodeResult, FieldSnapshot, HullSnapshot, Summary};
pub use metrics::{compute_ale, compute_field_rmse, AlignmentRecord, ApMetricsRecord, MetricsRecord, TimingRecord};
pub use robot::{NeighborFix, Robot};

#[cfg(test)]
mod tests;
