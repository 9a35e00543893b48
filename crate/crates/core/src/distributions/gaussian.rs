use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DistributionError;
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::rng::Rng;

/// Log-variance range accepted from network heads.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gaussian with diagonal covariance, stored as variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, DistributionError> {
        if mean.len() != var.len() {
            return Err(DistributionError::Dim {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if let Some(&v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(DistributionError::NonPositiveVariance(v));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(DistributionError::NonFinite("mean"));
        }
        Ok(Self { mean, var })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self, DistributionError> {
        Self::new(vec![mean], vec![var])
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    fn check_dim(&self, n: usize) -> Result<(), DistributionError> {
        if n == self.dim() {
            Ok(())
        } else {
            Err(DistributionError::Dim {
                expected: self.dim(),
                got: n,
            })
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64, DistributionError> {
        self.check_dim(x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.var)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (LN_2PI + v.ln() + (xi - m) * (xi - m) / v))
            .sum())
    }

    /// `KL(self ‖ p)` in nats.
    pub fn kl(&self, p: &DiagGaussian) -> Result<f64, DistributionError> {
        self.check_dim(p.dim())?;
        Ok((0..self.dim())
            .map(|i| {
                let (mq, vq, mp, vp) = (self.mean[i], self.var[i], p.mean[i], p.var[i]);
                let d = mq - mp;
                0.5 * (vq / vp + d * d / vp - 1.0 + (vp / vq).ln())
            })
            .sum())
    }

    /// `mean + sqrt(var) ⊙ ε`, `ε ~ N(0, I)`.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.var.iter().map(|v| 0.5 * (LN_2PI + 1.0 + v.ln())).sum()
    }
}

/// Univariate normal density.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// Differentiable reparameterised draw `mean + sqrt(var) ⊙ ε` for a fixed `ε`.
pub fn reparam_sample(g: &mut Graph, mean: Var, var: Var, eps: Var) -> Result<Var, AutodiffError> {
    let sd = g.sqrt(var);
    let noise = g.mul(sd, eps)?;
    g.add(mean, noise)
}

/// As [`reparam_sample`], parameterised by log-variance.
pub fn reparam_sample_logvar(g: &mut Graph, mean: Var, logvar: Var, eps: Var) -> Result<Var, AutodiffError> {
    let half = g.scale(logvar, 0.5);
    let sd = g.exp(half);
    let noise = g.mul(sd, eps)?;
    g.add(mean, noise)
}

/// Standard-normal noise shaped like `like`.
pub fn noise_like(g: &mut Graph, rows: usize, cols: usize, rng: &mut Rng) -> Var {
    let data = rng.normal_vec(rows * cols);
    g.input(Tensor::new(vec![rows, cols], data).unwrap())
}

/// Per-row diagonal-Gaussian log density, shape `[rows, 1]`.
pub fn log_prob_graph(g: &mut Graph, x: Var, mean: Var, logvar: Var) -> Result<Var, AutodiffError> {
    let d = g.sub(x, mean)?;
    let d2 = g.square(d);
    let neg_lv = g.neg(logvar);
    let prec = g.exp(neg_lv);
    let maha = g.mul(d2, prec)?;
    let t = g.add(maha, logvar)?;
    let t = g.add_scalar(t, LN_2PI);
    let s = g.sum_axis1(t)?;
    Ok(g.scale(s, -0.5))
}

/// Per-row `KL(N(mean, exp(logvar)) ‖ N(0, I))`, shape `[rows, 1]`.
pub fn kl_std_normal_graph(g: &mut Graph, mean: Var, logvar: Var) -> Result<Var, AutodiffError> {
    let v = g.exp(logvar);
    let m2 = g.square(mean);
    let t = g.add(v, m2)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0);
    let s = g.sum_axis1(t)?;
    Ok(g.scale(s, 0.5))
}

/// Per-row KL between diagonal Gaussians given in log-variance form.
pub fn kl_graph(g: &mut Graph, q_mean: Var, q_logvar: Var, p_mean: Var, p_logvar: Var) -> Result<Var, AutodiffError> {
    let lv_diff = g.sub(q_logvar, p_logvar)?;
    let ratio = g.exp(lv_diff);
    let d = g.sub(q_mean, p_mean)?;
    let d2 = g.square(d);
    let neg_plv = g.neg(p_logvar);
    let pprec = g.exp(neg_plv);
    let maha = g.mul(d2, pprec)?;
    let t = g.add(ratio, maha)?;
    let t = g.sub(t, lv_diff)?;
    let t = g.add_scalar(t, -1.0);
    let s = g.sum_axis1(t)?;
    Ok(g.scale(s, 0.5))
}

/// Clamp a network's raw log-variance output to the accepted range.
pub fn clamp_logvar(g: &mut Graph, raw: Var) -> Var {
    g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let n = DiagGaussian::standard(1);
        assert!((n.log_prob(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let n2 = DiagGaussian::standard(2);
        assert!((n2.log_prob(&[0.0, 0.0]).unwrap() + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_by_hand() {
        let n = DiagGaussian::scalar(1.0, 4.0).unwrap();
        let expected = -0.5 * (8.0 * PI).ln() - 0.5;
        assert!((n.log_prob(&[3.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_error() {
        let n = DiagGaussian::standard(2);
        assert!(n.log_prob(&[0.0]).is_err());
        assert!(n.kl(&DiagGaussian::standard(3)).is_err());
    }

    #[test]
    fn invalid_variance_rejected() {
        assert!(DiagGaussian::scalar(0.0, 0.0).is_err());
        assert!(DiagGaussian::scalar(0.0, -1.0).is_err());
        assert!(DiagGaussian::scalar(0.0, f64::NAN).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn kl_closed_form_values() {
        let s = DiagGaussian::standard(1);
        assert_eq!(s.kl(&s).unwrap(), 0.0);
        let shifted = DiagGaussian::scalar(1.0, 1.0).unwrap();
        assert!((shifted.kl(&s).unwrap() - 0.5).abs() < 1e-15);
        let narrow = DiagGaussian::scalar(0.0, 0.5).unwrap();
        assert!((narrow.kl(&s).unwrap() - 0.096_573_590_279_972_65).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q - log p] with 2e5 draws; std error ≈ 1.6e-3 for these pairs.
        let q = DiagGaussian::new(vec![0.0, 0.3], vec![0.5, 1.5]).unwrap();
        let p = DiagGaussian::new(vec![0.2, -0.1], vec![1.0, 0.8]).unwrap();
        let mut rng = Rng::new(11);
        let n = 200_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let z = q.sample(&mut rng);
                q.log_prob(&z).unwrap() - p.log_prob(&z).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mc - q.kl(&p).unwrap()).abs() < 6e-3);
    }

    #[test]
    fn near_zero_variance_sample_is_mean() {
        let n = DiagGaussian::scalar(3.5, 1e-30).unwrap();
        let mut rng = Rng::new(0);
        assert!((n.sample(&mut rng)[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn sample_moments_within_clt_bounds() {
        let n = DiagGaussian::scalar(2.0, 9.0).unwrap();
        let mut rng = Rng::new(5);
        let xs: Vec<f64> = (0..100_000).map(|_| n.sample(&mut rng)[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((m - 2.0).abs() < 0.03, "mean {m}");
        assert!((v - 9.0).abs() < 0.15, "var {v}");
    }

    #[test]
    fn reparam_gradient_wrt_mean_is_one() {
        let mut g = Graph::new();
        let mean = g.input(Tensor::row(&[0.7]));
        let var = g.input(Tensor::row(&[2.0]));
        let eps = g.input(Tensor::row(&[0.4]));
        let s = reparam_sample(&mut g, mean, var, eps).unwrap();
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert_eq!(g.grad(mean).unwrap().item(), 1.0);
        // d/dvar of sqrt(var)·ε = ε / (2 sqrt(var))
        let expected = 0.4 / (2.0 * 2f64.sqrt());
        assert!((g.grad(var).unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn graph_formulas_agree_with_value_types() {
        let q = DiagGaussian::new(vec![0.1, -0.4], vec![0.3, 2.0]).unwrap();
        let p = DiagGaussian::new(vec![0.5, 0.2], vec![1.1, 0.7]).unwrap();
        let mut g = Graph::new();
        let lv = |d: &DiagGaussian| Tensor::row(&d.var().iter().map(|v| v.ln()).collect::<Vec<_>>());
        let qm = g.input(Tensor::row(q.mean()));
        let qlv = g.input(lv(&q));
        let pm = g.input(Tensor::row(p.mean()));
        let plv = g.input(lv(&p));
        let kl = kl_graph(&mut g, qm, qlv, pm, plv).unwrap();
        assert!((g.item(kl) - q.kl(&p).unwrap()).abs() < 1e-12);
        let kl0 = kl_std_normal_graph(&mut g, qm, qlv).unwrap();
        assert!((g.item(kl0) - q.kl(&DiagGaussian::standard(2)).unwrap()).abs() < 1e-12);
        let x = g.input(Tensor::row(&[0.3, 0.9]));
        let lp = log_prob_graph(&mut g, x, pm, plv).unwrap();
        assert!((g.item(lp) - p.log_prob(&[0.3, 0.9]).unwrap()).abs() < 1e-12);
    }
}
