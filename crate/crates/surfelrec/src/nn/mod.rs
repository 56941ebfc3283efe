//! Minimal differentiable-network toolkit: tensors, an eager reverse-mode
//! tape, the learnable parameter bundle with checkpointing, Adam, and a
//! finite-difference gradient checker.

pub mod adam;
pub mod bundle;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{AdamParams, AdamState};
pub use bundle::{dense, NetConfig, NetworkBundle, ParamNodes};
pub use gradcheck::grad_check;
pub use tape::{Grads, NodeId, Tape};
pub use tensor::Tensor;
