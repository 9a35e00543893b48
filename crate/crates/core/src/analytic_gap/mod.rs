//! Closed-form conditioning gap for discrete missing conditions.
//!
//! When an amortised posterior cannot see some condition `Ū`, one shared
//! distribution has to serve every completion of it. Under the expected
//! (reverse) KL the best such distribution is the normalised weighted
//! product of the full posteriors, not their mixture, and the expected KL it
//! still incurs is the conditioning gap.

pub mod demo;
mod fit;
pub mod univariate;

pub use fit::{fit_gaussian_reverse_kl, FitConfig, LogDensity};
pub use univariate::{MlVsElboReport, UnivariateModel};

use serde::Serialize;
use thiserror::Error;

use crate::distributions::{gaussian_product, DiagGaussian, DistributionError, GaussianMixture};

/// Tolerance under which two full posteriors count as identical.
pub const INDEPENDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GapError {
    #[error("scenario needs at least one full posterior")]
    Empty,
    #[error("{posteriors} posteriors but {weights} weights")]
    WeightCount { posteriors: usize, weights: usize },
    #[error("condition weights must be non-negative and sum to 1 (sum = {0})")]
    Weights(f64),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("reverse-KL fit diverged at step {step}")]
    Diverged { step: usize },
}

/// Full posteriors `p(z | C, Ū = u)` over a finite set of missing conditions,
/// with their probabilities `p(Ū = u | C)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditioningScenario {
    full_posteriors: Vec<DiagGaussian>,
    cond_weights: Vec<f64>,
}

impl ConditioningScenario {
    pub fn new(full_posteriors: Vec<DiagGaussian>, cond_weights: Vec<f64>) -> Result<Self, GapError> {
        if full_posteriors.is_empty() {
            return Err(GapError::Empty);
        }
        if full_posteriors.len() != cond_weights.len() {
            return Err(GapError::WeightCount {
                posteriors: full_posteriors.len(),
                weights: cond_weights.len(),
            });
        }
        let dim = full_posteriors[0].dim();
        if let Some(p) = full_posteriors.iter().find(|p| p.dim() != dim) {
            return Err(DistributionError::Dim {
                expected: dim,
                got: p.dim(),
            }
            .into());
        }
        let sum: f64 = cond_weights.iter().sum();
        if cond_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(GapError::Weights(sum));
        }
        Ok(Self {
            full_posteriors,
            cond_weights,
        })
    }

    /// Equally likely missing conditions.
    pub fn uniform(full_posteriors: Vec<DiagGaussian>) -> Result<Self, GapError> {
        let n = full_posteriors.len().max(1);
        Self::new(full_posteriors, vec![1.0 / n as f64; n])
    }

    pub fn full_posteriors(&self) -> &[DiagGaussian] {
        &self.full_posteriors
    }

    pub fn cond_weights(&self) -> &[f64] {
        &self.cond_weights
    }

    pub fn dim(&self) -> usize {
        self.full_posteriors[0].dim()
    }

    fn weighted(&self) -> Vec<(DiagGaussian, f64)> {
        self.full_posteriors
            .iter()
            .cloned()
            .zip(self.cond_weights.iter().copied())
            .collect()
    }

    /// `Σᵢ wᵢ KL(q ‖ pᵢ)`.
    pub fn expected_kl(&self, q: &DiagGaussian) -> Result<f64, GapError> {
        let mut total = 0.0;
        for (p, w) in self.full_posteriors.iter().zip(&self.cond_weights) {
            total += w * q.kl(p)?;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub shared_posterior: DiagGaussian,
    /// Expected KL from the shared posterior to the full posteriors, nats.
    pub gap: f64,
    pub per_condition_kl: Vec<f64>,
    pub log_z: f64,
}

/// The distribution `∝ exp(E_{Ū|C} log p(z | C, Ū))` and its log normaliser.
pub fn optimal_shared_posterior(s: &ConditioningScenario) -> Result<(DiagGaussian, f64), GapError> {
    Ok(gaussian_product(&s.weighted())?)
}

pub fn conditioning_gap(s: &ConditioningScenario) -> Result<GapReport, GapError> {
    let (mut shared, log_z) = optimal_shared_posterior(s)?;
    // the product of identical components should be that component exactly,
    // but renormalised weights leave a few ulps of round-off
    let first = &s.full_posteriors[0];
    if s.full_posteriors.iter().all(|p| p == first) {
        shared = first.clone();
    }
    let per_condition_kl = s
        .full_posteriors
        .iter()
        .map(|p| shared.kl(p))
        .collect::<Result<Vec<_>, _>>()?;
    let gap = per_condition_kl
        .iter()
        .zip(&s.cond_weights)
        .map(|(k, w)| w * k)
        .sum::<f64>()
        .max(0.0);
    Ok(GapReport {
        shared_posterior: shared,
        gap,
        per_condition_kl,
        log_z,
    })
}

/// The true partially conditioned posterior `p(z | C) = E_{Ū|C} p(z | C, Ū)`.
pub fn marginal_posterior(s: &ConditioningScenario) -> Result<GaussianMixture, GapError> {
    Ok(GaussianMixture::new(s.weighted())?)
}

/// Whether every full posterior coincides (within [`INDEPENDENCE_TOL`]),
/// i.e. `z` carries no information about the missing condition.
pub fn independence_gap_check(s: &ConditioningScenario) -> bool {
    let first = &s.full_posteriors[0];
    s.full_posteriors.iter().all(|p| {
        p.mean()
            .iter()
            .zip(first.mean())
            .chain(p.var().iter().zip(first.var()))
            .all(|(a, b)| (a - b).abs() <= INDEPENDENCE_TOL)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn n(m: f64, v: f64) -> DiagGaussian {
        DiagGaussian::scalar(m, v).unwrap()
    }

    fn figure_separated() -> ConditioningScenario {
        ConditioningScenario::uniform(vec![n(-2.0, 0.1), n(2.0, 0.1)]).unwrap()
    }

    #[test]
    fn single_posterior_is_its_own_optimum() {
        let s = ConditioningScenario::uniform(vec![n(0.4, 0.2)]).unwrap();
        let (w, log_z) = optimal_shared_posterior(&s).unwrap();
        assert_eq!(w.mean(), &[0.4]);
        assert!((w.var()[0] - 0.2).abs() < 1e-15);
        assert!(log_z.abs() < 1e-14);
    }

    #[test]
    fn separated_modes_give_narrow_compromise() {
        let r = conditioning_gap(&figure_separated()).unwrap();
        assert!(r.shared_posterior.mean()[0].abs() < 1e-12);
        assert!((r.shared_posterior.var()[0] - 0.1).abs() < 1e-12);
        for k in &r.per_condition_kl {
            assert!((k - 20.0).abs() < 1e-10);
        }
        assert!((r.gap - 20.0).abs() < 1e-10);
        assert!(!independence_gap_check(&figure_separated()));
    }

    #[test]
    fn gap_matches_monte_carlo() {
        // Equal means, different variances.
        let s = ConditioningScenario::uniform(vec![n(0.0, 1.0), n(0.0, 2.0)]).unwrap();
        let r = conditioning_gap(&s).unwrap();
        assert!(r.gap > 0.0);
        let mut rng = Rng::new(21);
        let w = &r.shared_posterior;
        let draws = 400_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let z = w.sample(&mut rng);
            let lw = w.log_prob(&z).unwrap();
            acc += s
                .full_posteriors()
                .iter()
                .zip(s.cond_weights())
                .map(|(p, wi)| wi * (lw - p.log_prob(&z).unwrap()))
                .sum::<f64>();
        }
        let mc = acc / draws as f64;
        assert!((mc - r.gap).abs() < 3e-3, "mc {mc} vs {}", r.gap);
    }

    #[test]
    fn identical_posteriors_have_no_gap() {
        let s = ConditioningScenario::uniform(vec![n(1.0, 0.3); 4]).unwrap();
        let r = conditioning_gap(&s).unwrap();
        assert!(r.gap.abs() < 1e-12);
        assert!(independence_gap_check(&s));
    }

    #[test]
    fn tiny_differences_count_as_independent() {
        let s = ConditioningScenario::uniform(vec![n(1.0, 0.3), n(1.0 + 1e-12, 0.3)]).unwrap();
        assert!(independence_gap_check(&s));
        assert!(conditioning_gap(&s).unwrap().gap < 1e-9);
    }

    #[test]
    fn marginal_posterior_density_and_moments() {
        let mix = marginal_posterior(&figure_separated()).unwrap();
        let d0 = mix.density(&[0.0]).unwrap();
        // Both modes contribute 0.5·N(0; ±2, 0.1) = N(0; 2, 0.1).
        let expected = (-20.0f64).exp() / (0.2 * std::f64::consts::PI).sqrt();
        assert!((d0 - expected).abs() / expected < 1e-12);
        let (m, v) = mix.moments();
        assert!(m[0].abs() < 1e-15 && (v[0] - 4.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        assert!(ConditioningScenario::new(vec![], vec![]).is_err());
        assert!(ConditioningScenario::new(vec![n(0.0, 1.0)], vec![0.5]).is_err());
        assert!(ConditioningScenario::new(vec![n(0.0, 1.0)], vec![0.5, 0.5]).is_err());
        assert!(ConditioningScenario::new(vec![n(0.0, 1.0), DiagGaussian::standard(2)], vec![0.5, 0.5]).is_err());
    }
}
