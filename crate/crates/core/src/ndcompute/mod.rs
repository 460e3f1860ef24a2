//! Minimal differentiable-computation core: dense networks with named heads,
//! batched reverse passes, a scalar tape, Adam, and finite-difference checks.

mod adam;
mod finite_diff;
pub(crate) mod linalg;
mod network;
pub mod tape;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use finite_diff::{finite_difference_check, finite_difference_check_coords};
pub use network::{
    add_l2_gradient, backward_batch, forward, forward_batch, init_params, l2_penalty, sigmoid,
    softplus, Activation, BatchCache, HeadSpec, HeadTransform, LayerShape, Network, NetworkSpec,
    ParameterSet, SOFTPLUS_FLOOR,
};
pub use tape::{gradients, Gradients, Tape, Var};
