//! Conditioning gap of a filter-style (future-blind) posterior in an LGSSM.
//!
//! The full conditional is `p(z_t | z_{t-1}, x_{t:T})`; the partially
//! conditioned one sees `(z_{t-1}, x_t)` only. Both are Gaussian with
//! data-independent covariances `S_t` (smoother-like) and `F_t` (filter-like)
//! of the sub-chain that starts at `z_{t-1}`. The optimal shared posterior
//! has the filter mean and covariance `S_t`, and its expected KL to the full
//! conditional is `½ (tr(S_t⁻¹ F_t) − d)` because `E[ΔΔᵀ] = F_t − S_t` for the
//! mean difference `Δ`. The first step conditions on the initial belief
//! instead of `z_0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::filter::{filter_unchecked, psd_solve, rts_smoother};
use super::{kalman_filter, lgssm_sample, GaussianBelief, LgssmError, LgssmParams};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTable {
    /// Expected KL at `t = 1..T`, nats.
    pub per_step: Vec<f64>,
    pub total: f64,
}

/// Filter and smoother beliefs at the first step of the chain `p` with
/// observations `obs` (length ≤ horizon).
fn first_step(p: &LgssmParams, obs: &[Vec<f64>]) -> Result<(GaussianBelief, GaussianBelief), LgssmError> {
    let f = filter_unchecked(p, obs)?;
    let s = rts_smoother(p, &f);
    Ok((f.filtered[0].clone(), s[0].clone()))
}

/// Sub-chain for step `k` (0-based), started from `z_{k-1}` or from the initial belief.
fn sub_chain(p: &LgssmParams, k: usize, prev: Option<&[f64]>) -> Result<LgssmParams, LgssmError> {
    let sub = p.with_horizon(p.horizon() - k)?;
    match prev {
        None => Ok(sub),
        Some(z) => sub.with_initial(DVector::from_column_slice(z), DVector::zeros(p.state_dim())),
    }
}

/// `½ (tr(S⁻¹ F) − d)` on the support of `S`; infinite if `F` has mass where `S` has none.
fn expected_kl_from_covs(f: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let tol = 1e-12 * f.amax().max(s.amax()).max(f64::MIN_POSITIVE);
    let eig = s.clone().symmetric_eigen();
    let m = eig.eigenvectors.transpose() * f * &eig.eigenvectors;
    let mut acc = 0.0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tol {
            acc += m[(i, i)] / lam - 1.0;
        } else if m[(i, i)] > tol {
            return f64::INFINITY;
        }
    }
    (0.5 * acc).max(0.0)
}

/// Closed-form expected conditioning gap under the model's own `p(x)`.
pub fn lgssm_conditioning_gap(p: &LgssmParams) -> Result<GapTable, LgssmError> {
    let zeros = vec![vec![0.0; p.obs_dim()]; p.horizon()];
    let anchor = vec![0.0; p.state_dim()];
    let mut per_step = Vec::with_capacity(p.horizon());
    for k in 0..p.horizon() {
        let sub = sub_chain(p, k, (k > 0).then_some(anchor.as_slice()))?;
        let (fb, sb) = first_step(&sub, &zeros[k..])?;
        per_step.push(expected_kl_from_covs(&fb.cov, &sb.cov));
    }
    Ok(GapTable {
        total: per_step.iter().sum(),
        per_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloGap {
    pub per_step: Vec<f64>,
    pub total: f64,
    /// Standard error of `total`.
    pub total_std_error: f64,
    pub n_sequences: usize,
}

/// The same expectation by simulation: sample sequences, compute both
/// conditionals exactly per sequence, and average their KL.
pub fn conditional_gap_monte_carlo(
    p: &LgssmParams,
    n_sequences: usize,
    rng: &Rng,
) -> Result<MonteCarloGap, LgssmError> {
    let t_len = p.horizon();
    let draws: Vec<Vec<f64>> = (0..n_sequences)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let tr = lgssm_sample(p, &mut r);
            (0..t_len)
                .map(|k| {
                    let prev = (k > 0).then(|| tr.latents[k - 1].as_slice());
                    let sub = sub_chain(p, k, prev)?;
                    let (fb, sb) = first_step(&sub, &tr.observations[k..])?;
                    let delta = &sb.mean - &fb.mean;
                    let sol = psd_solve(&sb.cov, &DMatrix::from_column_slice(delta.len(), 1, delta.as_slice()));
                    Ok(0.5 * delta.dot(&sol.column(0)))
                })
                .collect::<Result<Vec<f64>, LgssmError>>()
        })
        .collect::<Result<_, _>>()?;
    let n = n_sequences.max(1) as f64;
    let per_step = (0..t_len)
        .map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / n)
        .collect();
    let totals: Vec<f64> = draws.iter().map(|d| d.iter().sum()).collect();
    let total = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|v| (v - total).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(MonteCarloGap {
        per_step,
        total,
        total_std_error: (var / n).sqrt(),
        n_sequences,
    })
}

/// Best Gaussian for `z_t` that sees only `x_{1:t}` under the expected KL to
/// `p(z_t | x_{1:T})`: the filter mean with the smoother covariance.
pub fn optimal_filter_conditioned_posterior(
    p: &LgssmParams,
    obs_prefix: &[Vec<f64>],
) -> Result<GaussianBelief, LgssmError> {
    let t = obs_prefix.len();
    if t == 0 || t > p.horizon() {
        return Err(LgssmError::Prefix {
            prefix: t,
            horizon: p.horizon(),
        });
    }
    let f = filter_unchecked(p, obs_prefix)?;
    let zeros = vec![vec![0.0; p.obs_dim()]; p.horizon()];
    let full = kalman_filter(p, &zeros)?;
    let smooth = rts_smoother(p, &full);
    Ok(GaussianBelief::new(
        f.filtered[t - 1].mean.clone(),
        smooth[t - 1].cov.clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Scales `Q` together with `P0`.
    Process,
    /// Scales `R`.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scale: f64,
    pub total_gap: f64,
}

pub fn gap_noise_sweep(p: &LgssmParams, kind: NoiseKind, scales: &[f64]) -> Result<Vec<SweepRow>, LgssmError> {
    scales
        .iter()
        .map(|&s| {
            let q = match kind {
                NoiseKind::Process => p.scale_process_noise(s)?,
                NoiseKind::Observation => p.scale_observation_noise(s)?,
            };
            Ok(SweepRow {
                scale: s,
                total_gap: lgssm_conditioning_gap(&q)?.total,
            })
        })
        .collect()
}
