use super::DistributionError;
use crate::autodiff::{AutodiffError, Graph, Var};
use crate::rng::Rng;

/// Independent Bernoulli variables, stored as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliVec {
    logits: Vec<f64>,
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

impl BernoulliVec {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self, DistributionError> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(DistributionError::NonFinite("logit"));
        }
        Ok(Self { logits })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self, DistributionError> {
        let logits = probs
            .iter()
            .map(|&p| {
                if p > 0.0 && p < 1.0 {
                    Ok((p / (1.0 - p)).ln())
                } else {
                    Err(DistributionError::Probability(p))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { logits })
    }

    pub fn dim(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| log_sigmoid(l).exp()).collect()
    }

    /// `Σ x log p + (1-x) log(1-p)` evaluated in logit space.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64, DistributionError> {
        if x.len() != self.dim() {
            return Err(DistributionError::Dim {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self
            .logits
            .iter()
            .zip(x)
            .map(|(&l, &xi)| xi * log_sigmoid(l) + (1.0 - xi) * log_sigmoid(-l))
            .sum())
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.probs()
            .into_iter()
            .map(|p| if rng.bernoulli(p) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Per-row Bernoulli log-likelihood `Σ x·l − softplus(l)`, shape `[rows, 1]`.
pub fn bernoulli_log_prob_graph(g: &mut Graph, x: Var, logits: Var) -> Result<Var, AutodiffError> {
    let xl = g.mul(x, logits)?;
    let sp = g.softplus(logits);
    let t = g.sub(xl, sp)?;
    g.sum_axis1(t)
}
