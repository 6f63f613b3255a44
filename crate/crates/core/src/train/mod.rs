//! Optimization: Adam, learning-rate schedules and training loops.

pub mod adam;
pub mod evaluate;
pub mod fit1d;
pub mod gradcheck;
pub mod scene;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use evaluate::{evaluate, evaluate_image, fit_illumination, in_fit_half, mean_embedding, EvalConfig, EvalReport, ImageScore};
pub use fit1d::{detect_function_changes, fit_1d, recover_transitions, Fit1dConfig, Fit1dModel, Fit1dReport};
pub use scene::{batch_loss, reconstruction_loss, train, BatchLoss, RayPool, StepLog, TrainConfig, TrainReport, Trainer, LOG_HEADER};
pub use gradcheck::pipeline_gradient_check;
pub use schedule::LrSchedule;
