//! Conditioning-gap laboratory.
//!
//! Exact engines for the optimal shared (partially conditioned) posterior,
//! a linear-Gaussian state-space model with closed-form gap computation, a
//! residual variational state-space model trained with partial, semi or
//! full inference conditioning, and bootstrap particle filtering for
//! predictive evaluation.

pub mod analytic_gap;
pub mod autodiff;
pub mod datasets;
pub mod distributions;
pub mod lgssm;
pub mod quadrature;
pub mod rng;
pub mod smc;
pub mod vssm;
