//! Residual variational state-space model.
//!
//! Generative side: a flow prior over `z_1`, a residual transition
//! `z_t = z_{t-1} + FNN(z_{t-1}, u_{t-1}) + gain(z_{t-1}) ⊙ ε_t` with
//! `ε_t ~ N(0, I)`, and a configurable emission. Inference infers `z_1` and
//! the residuals `ε_{2:T}` from RNN features whose reach over the sequence
//! is set by the [`ConditioningMode`].

mod config;
mod elbo;
pub mod exact;
mod inference;
mod model;
mod train;

pub use config::{
    CellType, ConditioningMode, EmissionConfig, FeatureRnnConfig, InitialConfig, LayerSpec, NetConfig, VssmConfig,
};
pub use elbo::{evaluate_elbo, ElboReport, ElboVars, EvalSummary};
pub use inference::{Amortized, InferenceModel};
pub use model::{BatchInputs, EmissionDist, EmissionVars, Generated, SequenceBatch, VssmModel, GAIN_FLOOR};
pub use train::{train, LogRow, TrainOutcome, ValRow};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::distributions::DistributionError;

#[derive(Debug, Error)]
pub enum VssmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sneak peek k = {k} exceeds sequence length {t_len}")]
    SneakPeek { k: usize, t_len: usize },
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("non-finite ELBO contribution at step {t}")]
    NonFiniteElbo { t: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}
