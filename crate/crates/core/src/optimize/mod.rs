//! Pixel-space optimizers and the stylization loop.

pub mod adam;
pub mod lbfgs;
mod transfer;

pub use adam::{adam_step, AdamState};
pub use lbfgs::{Evaluation, LbfgsState, LineSearchParams, StepKind, StepOutcome};
pub use transfer::{
    frame_iterations, prepare_images, run_transfer, run_transfer_prepared, Frame, NullSink,
    ProgressSink, RunOutcome, TransferResult, ADAM_STEP_UNIT,
};
