use rayon::prelude::*;
use serde::Serialize;

use super::{logsumexp, ParticleSet, SmcError, StateSpace};
use crate::rng::Rng;

pub const MIN_FUTURES: usize = 30;

/// Sampled continuations of an observed prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Futures {
    pub prefix_len: usize,
    /// `observations[i][k]` is future `i` at step `prefix_len + k + 1`.
    pub observations: Vec<Vec<Vec<f64>>>,
    pub ancestors: Vec<usize>,
}

impl Futures {
    /// Final observation of every future.
    pub fn finals(&self) -> Vec<Vec<f64>> {
        self.observations.iter().filter_map(|f| f.last().cloned()).collect()
    }
}

/// Draw ancestors from the filter set at step `prefix_len` in proportion to
/// their weights and roll the generative model forward to `t_len`.
/// `conds`, when present, holds `u_{1:T}` (at least `T - 1` entries).
pub fn prefix_sample<M: StateSpace + ?Sized>(
    model: &M,
    set: &ParticleSet,
    prefix_len: usize,
    t_len: usize,
    conds: Option<&[Vec<f64>]>,
    n_futures: usize,
    rng: &Rng,
) -> Result<Futures, SmcError> {
    if prefix_len == 0 {
        return Err(SmcError::EmptyPrefix);
    }
    if t_len <= prefix_len {
        return Err(SmcError::InvalidSet(format!(
            "horizon {t_len} must exceed the prefix length {prefix_len}"
        )));
    }
    if set.is_empty() || set.dim() != model.state_dim() {
        return Err(SmcError::Dim(format!(
            "particle dimension {}, model has {}",
            set.dim(),
            model.state_dim()
        )));
    }
    if let Some(u) = conds {
        if u.len() + 1 < t_len {
            return Err(SmcError::Conditions {
                needed: t_len - 1,
                got: u.len(),
            });
        }
    }
    let cum: Vec<f64> = set
        .weights()
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let mut pick = rng.fork(0);
    let total = *cum.last().expect("nonempty");
    let ancestors: Vec<usize> = (0..n_futures)
        .map(|_| {
            let u = pick.uniform() * total;
            cum.partition_point(|c| *c <= u).min(cum.len() - 1)
        })
        .collect();
    let mut z: Vec<Vec<f64>> = ancestors.iter().map(|&i| set.particles[i].clone()).collect();
    let mut observations = vec![Vec::with_capacity(t_len - prefix_len); n_futures];
    for (k, s) in (prefix_len..t_len).enumerate() {
        // 0-based step s is driven by u at index s - 1
        let u = conds.map(|c| c[s - 1].as_slice());
        z = model.propagate(&z, u, &rng.fork(1 + 2 * k as u64))?;
        let x = model.emit(&z, &rng.fork(2 + 2 * k as u64))?;
        for (o, x) in observations.iter_mut().zip(x) {
            o.push(x);
        }
    }
    Ok(Futures {
        prefix_len,
        observations,
        ancestors,
    })
}

/// `0.9 min(sd, IQR / 1.34) n^{-1/5}`, floored so identical samples still
/// give a proper density.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1.0);
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let floor = 1e-6 * (1.0 + mean.abs());
    (0.9 * spread * n.powf(-0.2)).max(floor)
}

fn kde_log_density(xs: &[f64], h: f64, at: f64) -> f64 {
    let norm = -(h * (2.0 * std::f64::consts::PI).sqrt()).ln() - (xs.len() as f64).ln();
    let terms: Vec<f64> = xs.iter().map(|x| -0.5 * ((at - x) / h).powi(2)).collect();
    logsumexp(&terms) + norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub x: f64,
    pub density: f64,
}

/// Per-dimension Gaussian KDE of the final observations, evaluated at the truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpcDensity {
    /// Sum of the per-dimension log densities.
    pub log_density: f64,
    pub per_dim_log_density: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub grid: Vec<Vec<GridPoint>>,
}

pub fn ppc_final_density(finals: &[Vec<f64>], truth: &[f64], grid_points: usize) -> Result<PpcDensity, SmcError> {
    if finals.len() < MIN_FUTURES {
        return Err(SmcError::TooFewFutures {
            min: MIN_FUTURES,
            got: finals.len(),
        });
    }
    if finals.iter().any(|f| f.len() != truth.len()) {
        return Err(SmcError::Dim("futures and truth differ in dimension".into()));
    }
    let dims: Vec<(f64, f64, Vec<GridPoint>)> = (0..truth.len())
        .into_par_iter()
        .map(|d| {
            let xs: Vec<f64> = finals.iter().map(|f| f[d]).collect();
            let h = silverman_bandwidth(&xs);
            let lo = xs.iter().copied().fold(truth[d], f64::min) - 3.0 * h;
            let hi = xs.iter().copied().fold(truth[d], f64::max) + 3.0 * h;
            let m = grid_points.max(2);
            let grid = (0..m)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / (m - 1) as f64;
                    GridPoint {
                        x,
                        density: kde_log_density(&xs, h, x).exp(),
                    }
                })
                .collect();
            (kde_log_density(&xs, h, truth[d]), h, grid)
        })
        .collect();
    let per_dim_log_density: Vec<f64> = dims.iter().map(|d| d.0).collect();
    Ok(PpcDensity {
        log_density: per_dim_log_density.iter().sum(),
        per_dim_log_density,
        bandwidths: dims.iter().map(|d| d.1).collect(),
        grid: dims.into_iter().map(|d| d.2).collect(),
    })
}
