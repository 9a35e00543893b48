use std::f64::consts::PI;

use super::{normal_pdf, DiagGaussian, DistributionError};

fn normalised_weights(components: &[(DiagGaussian, f64)]) -> Result<Vec<f64>, DistributionError> {
    let first = components.first().ok_or(DistributionError::NoComponents)?;
    let dim = first.0.dim();
    let mut total = 0.0;
    for (g, w) in components {
        if g.dim() != dim {
            return Err(DistributionError::Dim {
                expected: dim,
                got: g.dim(),
            });
        }
        if !(w.is_finite() && *w >= 0.0) {
            return Err(DistributionError::BadWeight(*w));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(DistributionError::ZeroTotalWeight);
    }
    Ok(components.iter().map(|(_, w)| w / total).collect())
}

/// Normalised geometric mixture `∝ exp(Σᵢ wᵢ log Nᵢ(z))` and the log of its normaliser.
///
/// Per dimension the result has precision `Σ wᵢ/σᵢ²` and precision-weighted
/// mean. Weights are rescaled to sum to one.
pub fn gaussian_product(components: &[(DiagGaussian, f64)]) -> Result<(DiagGaussian, f64), DistributionError> {
    let w = normalised_weights(components)?;
    let dim = components[0].0.dim();
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    let mut log_z = 0.0;
    for d in 0..dim {
        let (mut prec, mut h, mut c) = (0.0, 0.0, 0.0);
        for ((g, _), wi) in components.iter().zip(&w) {
            if *wi == 0.0 {
                continue;
            }
            let (m, v) = (g.mean()[d], g.var()[d]);
            prec += wi / v;
            h += wi * m / v;
            c += wi * (-0.5 * (2.0 * PI * v).ln() - 0.5 * m * m / v);
        }
        mean[d] = h / prec;
        var[d] = 1.0 / prec;
        // ∫ exp(c + h z - prec z²/2) dz
        log_z += c + 0.5 * h * h / prec + 0.5 * (2.0 * PI / prec).ln();
    }
    Ok((DiagGaussian::new(mean, var)?, log_z))
}

/// Mean and variance of the mixture `Σᵢ wᵢ Nᵢ` (law of total variance).
pub fn gaussian_mixture_moments(components: &[(DiagGaussian, f64)]) -> Result<(Vec<f64>, Vec<f64>), DistributionError> {
    let w = normalised_weights(components)?;
    let dim = components[0].0.dim();
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for d in 0..dim {
        let m: f64 = components.iter().zip(&w).map(|((g, _), wi)| wi * g.mean()[d]).sum();
        let second: f64 = components
            .iter()
            .zip(&w)
            .map(|((g, _), wi)| wi * (g.var()[d] + (g.mean()[d] - m).powi(2)))
            .sum();
        mean[d] = m;
        var[d] = second;
    }
    Ok((mean, var))
}

/// Finite mixture of diagonal Gaussians with an exact density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<(DiagGaussian, f64)>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(DiagGaussian, f64)>) -> Result<Self, DistributionError> {
        let w = normalised_weights(&components)?;
        let components = components.into_iter().zip(w).map(|((g, _), w)| (g, w)).collect();
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(DiagGaussian, f64)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].0.dim()
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64, DistributionError> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (g, w) in &self.components {
            if *w > 0.0 {
                terms.push(w.ln() + g.log_prob(z)?);
            }
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }

    pub fn density(&self, z: &[f64]) -> Result<f64, DistributionError> {
        Ok(self.log_density(z)?.exp())
    }

    /// Density of a one-dimensional mixture without allocation.
    pub fn density_1d(&self, z: f64) -> f64 {
        self.components
            .iter()
            .map(|(g, w)| w * normal_pdf(z, g.mean()[0], g.var()[0]))
            .sum()
    }

    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        gaussian_mixture_moments(&self.components).expect("validated at construction")
    }
}
