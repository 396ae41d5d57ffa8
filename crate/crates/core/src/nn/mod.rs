//! Dense feed-forward networks with exact reverse-mode gradients, per-layer
//! Adam, and the two task losses.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod network;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_gradient, max_relative_deviation};
pub use loss::{task_loss, LossKind, Target};
pub use network::{
    network_backward, network_forward, Activation, DenseLayer, DenseNetwork, Gradients, LayerGradient, Trace,
};
