//! Minimal deterministic training engine: layers, forward/backward passes and
//! SGD with momentum.

mod layer;
mod network;
mod optim;

pub use layer::LayerSpec;
pub use network::{backward, forward, init_network, ActivationTrace, Layer, Network, ParamGrads};
pub use optim::{sgd_step, step_lr, OptState};
