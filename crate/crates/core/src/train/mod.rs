//! Optimization loop, schedules and training logs.

pub mod config;
pub mod log;
pub mod trainer;

pub use config::{kl_weight, KlSchedule, TrainConfig, PROFILES};
pub use log::{EpochRecord, TrainLog};
pub use trainer::{audit_optimizer_groups, train, TrainOutcome, Trainer};
