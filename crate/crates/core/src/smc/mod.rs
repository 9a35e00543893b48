//! Bootstrap particle filtering and prefix sampling.
//!
//! The filter proposes from the model's own transition and weights by the
//! emission likelihood, so it never touches an inference network. Particle
//! `i` at step `t` draws its noise from `rng.fork(t).fork(i)`, which keeps
//! results identical under any degree of parallelism.

mod models;
mod predict;

pub use models::{LgssmStateSpace, VssmStateSpace};
pub use predict::{ppc_final_density, prefix_sample, silverman_bandwidth, Futures, GridPoint, PpcDensity, MIN_FUTURES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::vssm::VssmError;

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("need at least 2 particles, got {0}")]
    TooFewParticles(usize),
    #[error("every particle has zero likelihood at step {t}")]
    Degenerate { t: usize },
    #[error("empty observation prefix")]
    EmptyPrefix,
    #[error("need {needed} conditions, got {got}")]
    Conditions { needed: usize, got: usize },
    #[error("need at least {min} futures for a density estimate, got {got}")]
    TooFewFutures { min: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid particle set: {0}")]
    InvalidSet(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error(transparent)]
    Vssm(#[from] VssmError),
}

/// A generative state-space model seen as a particle-filter proposal.
pub trait StateSpace: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn cond_dim(&self) -> usize {
        0
    }
    /// Draws of `z_1`; draw `i` uses `rng.fork(i)`.
    fn sample_initial(&self, n: usize, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError>;
    /// One transition per state; state `i` uses `rng.fork(i)`.
    fn propagate(&self, z: &[Vec<f64>], u_prev: Option<&[f64]>, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError>;
    /// `log p(x | z_i)` per state.
    fn log_likelihood(&self, z: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, SmcError>;
    /// One observation per state; state `i` uses `rng.fork(i)`.
    fn emit(&self, z: &[Vec<f64>], rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError>;
}

/// Weighted particles approximating `p(z_t | x_{1:t})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Vec<f64>>,
    /// Normalised: `logsumexp == 0`.
    pub log_weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleSet {
    /// Normalise `log_weights` and compute the effective sample size.
    pub fn new(particles: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self, SmcError> {
        if particles.is_empty() || particles.len() != log_weights.len() {
            return Err(SmcError::InvalidSet("need one weight per particle".into()));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(SmcError::InvalidSet("weights must not be NaN or +inf".into()));
        }
        let lse = logsumexp(&log_weights);
        if !lse.is_finite() {
            return Err(SmcError::InvalidSet("all weights are zero".into()));
        }
        let log_weights: Vec<f64> = log_weights.iter().map(|w| w - lse).collect();
        let ess = 1.0 / log_weights.iter().map(|w| (2.0 * w).exp()).sum::<f64>();
        let n = log_weights.len() as f64;
        Ok(Self {
            particles,
            log_weights,
            ess: ess.clamp(1.0, n),
        })
    }

    pub fn uniform(particles: Vec<Vec<f64>>) -> Result<Self, SmcError> {
        let n = particles.len();
        Self::new(particles, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let w = self.weights();
        (0..self.dim())
            .map(|d| self.particles.iter().zip(&w).map(|(p, w)| w * p[d]).sum())
            .collect()
    }

    /// Weighted per-dimension variance.
    pub fn var(&self) -> Vec<f64> {
        let w = self.weights();
        let m = self.mean();
        (0..self.dim())
            .map(|d| {
                self.particles
                    .iter()
                    .zip(&w)
                    .map(|(p, w)| w * (p[d] - m[d]).powi(2))
                    .sum()
            })
            .collect()
    }

    /// Systematic resampling to equal weights.
    pub fn resample(&self, rng: &mut Rng) -> ParticleSet {
        let idx = systematic_resample(&self.log_weights, rng);
        let n = idx.len();
        ParticleSet {
            particles: idx.into_iter().map(|i| self.particles[i].clone()).collect(),
            log_weights: vec![-(n as f64).ln(); n],
            ess: n as f64,
        }
    }
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `n = log_weights.len()` ancestor indices; see [`systematic_resample_n`].
pub fn systematic_resample(log_weights: &[f64], rng: &mut Rng) -> Vec<usize> {
    systematic_resample_n(log_weights, log_weights.len(), rng)
}

/// `n` ancestor indices from one stratified uniform offset. Index `i`
/// appears `⌊n w_i⌋` or `⌈n w_i⌉` times.
pub fn systematic_resample_n(log_weights: &[f64], n: usize, rng: &mut Rng) -> Vec<usize> {
    let k = log_weights.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let lse = logsumexp(log_weights);
    let u0 = rng.uniform() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = (log_weights[0] - lse).exp();
    let mut i = 0;
    for j in 0..n {
        let target = u0 + j as f64 / n as f64;
        while i < k - 1 && cum <= target {
            i += 1;
            cum += (log_weights[i] - lse).exp();
        }
        out.push(i);
    }
    out
}

/// Filter output: the weighted set at every step, before any resampling,
/// and the running log marginal-likelihood estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutput {
    pub sets: Vec<ParticleSet>,
    pub log_likelihood: f64,
    pub resampled_at: Vec<usize>,
}

/// Bootstrap particle filter over `x_{1:t}`. `conds`, when present, must
/// cover the prefix (`u_{t-1}` drives the transition into step `t`).
pub fn bootstrap_filter<M: StateSpace + ?Sized>(
    model: &M,
    obs: &[Vec<f64>],
    conds: Option<&[Vec<f64>]>,
    n_particles: usize,
    rng: &Rng,
) -> Result<FilterOutput, SmcError> {
    if n_particles < 2 {
        return Err(SmcError::TooFewParticles(n_particles));
    }
    if obs.is_empty() {
        return Err(SmcError::EmptyPrefix);
    }
    if let Some(u) = conds {
        if u.len() + 1 < obs.len() {
            return Err(SmcError::Conditions {
                needed: obs.len() - 1,
                got: u.len(),
            });
        }
    }
    if let Some(x) = obs.iter().find(|x| x.len() != model.obs_dim()) {
        return Err(SmcError::Dim(format!(
            "observation of length {}, model emits {}",
            x.len(),
            model.obs_dim()
        )));
    }
    let mut sets = Vec::with_capacity(obs.len());
    let mut resampled_at = Vec::new();
    let mut log_likelihood = 0.0;
    let mut current: Option<ParticleSet> = None;
    let mut resample_rng = rng.fork(u64::MAX);
    for (t, x) in obs.iter().enumerate() {
        let step_rng = rng.fork(t as u64);
        let (particles, prior_lw) = match current.take() {
            None => (
                model.sample_initial(n_particles, &step_rng)?,
                vec![-(n_particles as f64).ln(); n_particles],
            ),
            Some(prev) => {
                let prev = if prev.ess < n_particles as f64 / 2.0 {
                    resampled_at.push(t);
                    prev.resample(&mut resample_rng)
                } else {
                    prev
                };
                let u = conds.map(|c| c[t - 1].as_slice());
                (model.propagate(&prev.particles, u, &step_rng)?, prev.log_weights)
            }
        };
        let ll = model.log_likelihood(&particles, x)?;
        if ll.iter().any(|v| v.is_nan()) {
            return Err(SmcError::Model(format!("NaN likelihood at step {}", t + 1)));
        }
        let lw: Vec<f64> = prior_lw.iter().zip(&ll).map(|(a, b)| a + b).collect();
        let inc = logsumexp(&lw);
        if !inc.is_finite() {
            return Err(SmcError::Degenerate { t: t + 1 });
        }
        log_likelihood += inc;
        let set = ParticleSet::new(particles, lw)?;
        sets.push(set.clone());
        current = Some(set);
    }
    Ok(FilterOutput {
        sets,
        log_likelihood,
        resampled_at,
    })
}

#[cfg(test)]
mod tests;
