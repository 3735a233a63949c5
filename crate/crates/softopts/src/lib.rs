//! Hierarchical multitask reinforcement learning with soft options.
//!
//! A soft option pairs a shared *prior* (intra-option policy and termination
//! policy, distilled across tasks) with a per-task *posterior* that is
//! initialized from the prior and regularized towards it. Training maximizes a
//! KL-regularized reward with an actor-critic loop over all tasks at once;
//! at transfer time the prior is frozen and fresh posteriors adapt to new
//! tasks.
//!
//! Crate layout:
//! - [`nn`]: parameter store, reverse-mode autodiff tape, MLPs, categorical /
//!   Bernoulli heads, Adam/SGD optimizer, checkpoints.
//! - [`envs`]: Moving Bandits, Taxi, Directional Taxi and the grid layouts
//!   they run on, plus a BFS oracle for optimal returns.
//! - [`policy`]: the hierarchical posterior/prior policy (termination, master,
//!   intra-option and value heads over a shared encoder).
//! - [`objective`]: regularized reward, advantage estimation, all loss terms,
//!   distillation targets and annealing schedules.
//! - [`trainer`]: multitask rollout collection and the training loop.
//! - [`transfer`]: transfer/adaptation protocols and policy evaluation.

pub mod config;
pub mod envs;
pub mod nn;
pub mod objective;
pub mod policy;
pub mod trainer;
pub mod transfer;

/// Errors surfaced by this crate.
///
/// `Config` covers invalid specifications (shape mismatches, bad layouts),
/// `Usage` covers API misuse (out-of-range indices, calls out of order),
/// `Numeric` covers non-finite values detected during training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
