//! Scalar linear-Gaussian model `p_a(x, z) = N(x | a z, 0.1) N(z | 0, 1)`
//! fitted to data `x ~ N(0, 1)` with one posterior shared by every `x`.

use serde::Serialize;

use super::GapError;
use crate::distributions::{normal_log_pdf, DiagGaussian};
use crate::quadrature::GaussHermite;

/// Observation noise variance of the model.
pub const OBS_NOISE_VAR: f64 = 0.1;
/// Variance of the data distribution `x ~ N(0, TARGET_VAR)`.
pub const TARGET_VAR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnivariateModel {
    a: f64,
}

impl UnivariateModel {
    pub fn new(a: f64) -> Result<Self, GapError> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(GapError::Distribution(
                crate::distributions::DistributionError::NonFinite("slope a (must be finite and >= 0)"),
            ));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Slope at which the model marginal equals the data distribution.
    pub fn ml_slope() -> f64 {
        (TARGET_VAR - OBS_NOISE_VAR).sqrt()
    }

    /// `p_a(z | x) = N(a x / (0.1 + a²), (1 + 10 a²)⁻¹)`.
    pub fn true_posterior(&self, x: f64) -> DiagGaussian {
        let s = OBS_NOISE_VAR + self.a * self.a;
        DiagGaussian::scalar(self.a * x / s, OBS_NOISE_VAR / s).expect("positive variance")
    }

    /// `p_a(x) = N(0, 0.1 + a²)`.
    pub fn marginal(&self) -> DiagGaussian {
        DiagGaussian::scalar(0.0, OBS_NOISE_VAR + self.a * self.a).expect("positive variance")
    }

    /// Maximiser of the expected ELBO over Gaussians `q(z)` shared across all `x`.
    ///
    /// Setting the derivatives of the closed form to zero gives mean 0 and
    /// precision `1 + a²/0.1`, the same precision as every true posterior:
    /// the weighted product of posteriors that differ only in their means.
    pub fn optimal_shared_q(&self) -> DiagGaussian {
        let prec = 1.0 + self.a * self.a / OBS_NOISE_VAR;
        DiagGaussian::scalar(0.0, 1.0 / prec).expect("positive variance")
    }

    fn integrand(&self, x: f64, z: f64, q: &DiagGaussian) -> f64 {
        normal_log_pdf(x, self.a * z, OBS_NOISE_VAR) + normal_log_pdf(z, 0.0, 1.0)
            - normal_log_pdf(z, q.mean()[0], q.var()[0])
    }

    /// `E_{x ~ N(0,1)} E_{z ~ q} [log p_a(x, z) − log q(z)]` by tensor-product
    /// Gauss–Hermite quadrature.
    pub fn expected_elbo(&self, q: &DiagGaussian, gh: &GaussHermite) -> f64 {
        let (qm, qv) = (q.mean()[0], q.var()[0]);
        gh.gaussian_points(0.0, TARGET_VAR)
            .map(|(x, wx)| {
                wx * gh
                    .gaussian_points(qm, qv)
                    .map(|(z, wz)| wz * self.integrand(x, z, q))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Closed form of [`UnivariateModel::expected_elbo`].
    pub fn expected_elbo_closed_form(&self, q: &DiagGaussian) -> f64 {
        let (m, v) = (q.mean()[0], q.var()[0]);
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let second = m * m + v;
        let recon =
            -0.5 * (ln2pi + OBS_NOISE_VAR.ln()) - (TARGET_VAR + self.a * self.a * second) / (2.0 * OBS_NOISE_VAR);
        let prior = -0.5 * ln2pi - 0.5 * second;
        let entropy = 0.5 * (ln2pi + 1.0 + v.ln());
        recon + prior + entropy
    }

    /// `E_{x ~ N(0,1)} log p_a(x)`.
    pub fn expected_log_marginal(&self) -> f64 {
        let s = OBS_NOISE_VAR + self.a * self.a;
        -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + TARGET_VAR / s)
    }

    pub fn expected_log_marginal_quadrature(&self, gh: &GaussHermite) -> f64 {
        let s = OBS_NOISE_VAR + self.a * self.a;
        gh.expect(0.0, TARGET_VAR, |x| normal_log_pdf(x, 0.0, s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub a: f64,
    pub expected_log_marginal: f64,
    pub expected_elbo: f64,
    pub shared_q_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlVsElboReport {
    pub ml_argmax: f64,
    pub elbo_argmax: f64,
    pub grid_step: f64,
    /// Whether the two maximisers are more than two grid steps apart.
    pub differ: bool,
    pub table: Vec<SlopeRow>,
}

/// Grid search over slopes for the maximum-likelihood slope and the slope
/// that maximises the expected ELBO under the optimal shared posterior.
pub fn ml_vs_elbo_argmax(grid: &[f64], gh: &GaussHermite) -> Result<MlVsElboReport, GapError> {
    if grid.is_empty() {
        return Err(GapError::Empty);
    }
    let mut table = Vec::with_capacity(grid.len());
    for &a in grid {
        let m = UnivariateModel::new(a)?;
        let q = m.optimal_shared_q();
        table.push(SlopeRow {
            a,
            expected_log_marginal: m.expected_log_marginal_quadrature(gh),
            expected_elbo: m.expected_elbo(&q, gh),
            shared_q_var: q.var()[0],
        });
    }
    let argmax = |f: fn(&SlopeRow) -> f64| {
        table
            .iter()
            .fold((f64::NEG_INFINITY, f64::NAN), |(best, arg), r| {
                if f(r) > best {
                    (f(r), r.a)
                } else {
                    (best, arg)
                }
            })
            .1
    };
    let ml_argmax = argmax(|r| r.expected_log_marginal);
    let elbo_argmax = argmax(|r| r.expected_elbo);
    let grid_step = grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    Ok(MlVsElboReport {
        ml_argmax,
        elbo_argmax,
        grid_step,
        differ: (ml_argmax - elbo_argmax).abs() > 2.0 * grid_step,
        table,
    })
}

/// Evenly spaced slopes `lo, lo+step, …, hi`.
pub fn slope_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}
