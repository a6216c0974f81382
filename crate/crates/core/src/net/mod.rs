//! Minimal training engine: dilated convolutions with hand-written
//! backward passes, ReLU, regression losses, SGD and the one-cycle schedule.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod loss;
pub mod model;
pub mod optim;

pub use activation::{relu_backward, relu_forward};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{ConvGrads, ConvLayer};
pub use loss::{combined_loss, mse_loss, single_view_loss, SingleViewLoss};
pub use model::{
    backward_full, forward_full, losses, FrameTargets, FullOutput, GroundHead, LossBreakdown,
    ModelConfig, Mvdet, RigInputs, SingleViewHead,
};
pub use optim::{one_cycle_lr, sgd_step, OneCycle, SgdState};
