//! Online class-incremental learning laboratory.
//!
//! The crate implements Adaptive Focus Shifting (AFS): experience replay
//! trained with a revised focal loss that concentrates on ambiguous samples,
//! regularized by distillation from a fixed "virtual teacher" built from
//! smoothed labels. Everything needed to run and measure it at desk scale is
//! here as well: analytic loss gradients, a small MLP with manual
//! backpropagation, a reservoir replay buffer, task streams, the training
//! loop with its review pass, continual-learning metrics and the
//! task-recency-bias diagnostics.

pub mod dynmu;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod report;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{DifficultyInterval, LossConfig, LossOutput};
pub use memory::MemoryBuffer;
pub use metrics::{AccuracyMatrix, DiagnosticsRecord};
pub use model::{Network, NetworkSpec};
pub use stream::{Dataset, Sample, StreamBatch, TaskSplit};
pub use trainer::{RunRecord, TrainConfig};
