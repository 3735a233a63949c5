//! Differentiable function approximation: parameter store, autodiff tape,
//! MLPs, categorical/Bernoulli heads, optimizers, gradient checking and
//! checkpoints. f64 throughout.

pub mod checkpoint;
pub mod gradcheck;
pub mod heads;
pub mod mlp;
pub mod optim;
pub mod store;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Mlp, MlpSpec};
pub use optim::{OptimKind, Optimizer};
pub use store::{Init, ParamStore, Tensor, TensorId};
pub use tape::{NodeId, Tape};
