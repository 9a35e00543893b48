use std::collections::BTreeMap;

use super::GapError;
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tensor};
use crate::distributions::{DiagGaussian, GaussianMixture};
use crate::rng::Rng;

/// A log density with its gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
    fn grad_log_density(&self, z: &[f64]) -> Vec<f64>;
}

impl LogDensity for DiagGaussian {
    fn dim(&self) -> usize {
        DiagGaussian::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.log_prob(z).unwrap_or(f64::NEG_INFINITY)
    }

    fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean().iter().zip(self.var()))
            .map(|(zi, (m, v))| -(zi - m) / v)
            .collect()
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        GaussianMixture::log_density(self, z).unwrap_or(f64::NEG_INFINITY)
    }

    fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        // Σ rᵢ ∇ log Nᵢ with responsibilities rᵢ computed in log space.
        let logs: Vec<f64> = self
            .components()
            .iter()
            .map(|(g, w)| {
                if *w > 0.0 {
                    w.ln() + g.log_density(z)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let mut grad = vec![0.0; z.len()];
        for ((g, _), l) in self.components().iter().zip(&logs) {
            let r = (l - max).exp() / total;
            if r == 0.0 {
                continue;
            }
            for (gd, c) in grad.iter_mut().zip(g.grad_log_density(z)) {
                *gd += r * c;
            }
        }
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Reparameterised draws per gradient estimate.
    pub samples_per_step: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            learning_rate: 0.02,
            samples_per_step: 32,
        }
    }
}

/// Stochastic minimisation of `KL(q ‖ target)` over diagonal Gaussians.
///
/// Gradients use the reparameterisation `z = μ + σ ε`:
/// `∂/∂μ = −E[∇ log p(z)]`, `∂/∂ log σ = −1 − E[∇ log p(z) · σ ε]`.
/// The returned parameters are averaged over the second half of the run.
pub fn fit_gaussian_reverse_kl(
    target: &dyn LogDensity,
    init: &DiagGaussian,
    config: FitConfig,
    rng: &mut Rng,
) -> Result<DiagGaussian, GapError> {
    let dim = init.dim();
    let mut params = ParamStore::new();
    params.insert("mean", Tensor::row(init.mean()));
    let log_sd: Vec<f64> = init.var().iter().map(|v| 0.5 * v.ln()).collect();
    params.insert("log_sd", Tensor::row(&log_sd));
    let mut opt = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    })
    .expect("fit learning rate must be positive");

    let avg_from = config.steps / 2;
    let mut avg_mean = vec![0.0; dim];
    let mut avg_log_sd = vec![0.0; dim];
    let m = config.samples_per_step.max(1);

    for step in 0..config.steps {
        let mean = params.get("mean").unwrap().data().to_vec();
        let log_sd = params.get("log_sd").unwrap().data().to_vec();
        let mut g_mean = vec![0.0; dim];
        let mut g_log_sd = vec![-1.0; dim];
        for _ in 0..m {
            let eps = rng.normal_vec(dim);
            let z: Vec<f64> = (0..dim).map(|d| mean[d] + log_sd[d].exp() * eps[d]).collect();
            let grad = target.grad_log_density(&z);
            for d in 0..dim {
                g_mean[d] -= grad[d] / m as f64;
                g_log_sd[d] -= grad[d] * log_sd[d].exp() * eps[d] / m as f64;
            }
        }
        if g_mean.iter().chain(&g_log_sd).any(|v| !v.is_finite()) {
            return Err(GapError::Diverged { step });
        }
        let grads = BTreeMap::from([
            ("mean".to_string(), Tensor::row(&g_mean)),
            ("log_sd".to_string(), Tensor::row(&g_log_sd)),
        ]);
        opt.step(&mut params, &grads).map_err(|_| GapError::Diverged { step })?;
        if step >= avg_from {
            let k = (step - avg_from) as f64;
            for d in 0..dim {
                avg_mean[d] += (params.get("mean").unwrap().data()[d] - avg_mean[d]) / (k + 1.0);
                avg_log_sd[d] += (params.get("log_sd").unwrap().data()[d] - avg_log_sd[d]) / (k + 1.0);
            }
        }
    }
    let var = avg_log_sd.iter().map(|l| (2.0 * l).exp()).collect();
    Ok(DiagGaussian::new(avg_mean, var)?)
}
