//! Networks, losses, optimizer and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod nets;
mod pipeline;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::{joint_loss, lr_schedule, JointLossConfig, LossTerms, Phase, TrainingMode};
pub use nets::{deform_forward, he_init, DeformationNet, Param, ToySegNet};
pub use pipeline::{
    argmax_labels, deformed_grid, forward_deformed, forward_fixed, low_res_input, predict, Forward,
    SamplerGeometry,
};
