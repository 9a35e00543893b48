//! Probability primitives.
//!
//! Diagonal Gaussians (value types plus graph-level log-density and KL
//! helpers), Bernoulli vectors, weighted Gaussian products and mixtures, and
//! a small affine inverse-autoregressive flow.

mod bernoulli;
mod gaussian;
mod iaf;
mod product;

pub use bernoulli::{bernoulli_log_prob_graph, BernoulliVec};
pub use gaussian::{
    clamp_logvar, kl_graph, kl_std_normal_graph, log_prob_graph, noise_like, normal_log_pdf, normal_pdf,
    reparam_sample, reparam_sample_logvar, DiagGaussian, LOGVAR_MAX, LOGVAR_MIN,
};
pub use iaf::AffineIafFlow;
pub use product::{gaussian_mixture_moments, gaussian_product, GaussianMixture};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("need at least one component")]
    NoComponents,
    #[error("component weights must be non-negative and finite, got {0}")]
    BadWeight(f64),
    #[error("component weights sum to zero")]
    ZeroTotalWeight,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
