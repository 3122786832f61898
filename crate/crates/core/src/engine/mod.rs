//! Training: data, objectives, optimization, the step, and the run loop.

pub mod checkpoint;
pub mod data;
pub mod objectives;
pub mod optim;
pub mod run;
pub mod trainer;

pub use checkpoint::{Checkpoint, InferenceModel};
pub use data::{EvalSet, TrainData};
pub use objectives::GateMask;
pub use run::{run_training, EvalRecord, RunOptions, RunOutcome};
pub use trainer::{AugmentedBatch, StepReport, Trainer};
