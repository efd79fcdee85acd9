//! Deterministic simulated data-parallel training.
//!
//! Each step every worker draws `local_batch` examples from its own random
//! stream and computes a local gradient; a tree all-reduce forms the global
//! mean. The local and global squared norms form a [`NormPair`] that feeds
//! the noise-scale tracker with no extra gradient evaluations.
//!
//! [`NormPair`]: crate::gradstats::NormPair

mod metrics;
mod reduce;
mod train;

pub use metrics::{replay_metrics, MetricsRow, MetricsTable, HEADER as METRICS_HEADER};
pub use reduce::all_reduce_mean;
pub use train::{
    train, train_observed, FixedSchedule, ScheduleHook, StepControl, StepRecord, StepView, Termination, TrainConfig,
    TrainRun, WorkerLayout,
};
