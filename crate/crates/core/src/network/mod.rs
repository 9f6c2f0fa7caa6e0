//! Full networks: declarative specs, the runnable model, cost accounting,
//! checkpoints and training.

pub mod checkpoint;
pub mod cost;
pub mod model;
pub mod spec;
pub mod train;

pub use cost::{count_cost, CostReport, CostRow};
pub use model::Model;
pub use spec::{BlockSpec, CanOptions, NetSpec, StemSpec, SPEC_NAMES};
pub use train::{evaluate, train, Accuracy, EpochMetrics, TrainConfig, TrainOutcome};
