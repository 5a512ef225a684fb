//! Minimal differentiable compute for the fault classification network.
//!
//! There is no general autodiff graph: each layer exposes a forward kernel
//! and a hand-written backward, and models chain them explicitly. All
//! arithmetic is f64.

pub mod checkpoint;
pub mod layers;
pub mod ops;
pub mod optim;
mod tensor;

pub use layers::{BatchNorm1d, Conv1d, Linear};
pub use optim::{AdamW, AdamWConfig, PlateauSchedule};
pub use tensor::{Param, Parameterized, Tensor};
