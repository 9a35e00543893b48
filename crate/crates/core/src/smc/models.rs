use rayon::prelude::*;

use super::{SmcError, StateSpace};
use crate::autodiff::ParamStore;
use crate::distributions::normal_log_pdf;
use crate::lgssm::LgssmParams;
use crate::rng::Rng;
use crate::vssm::VssmModel;

/// An LGSSM as a particle-filter proposal; needs `R > 0`.
#[derive(Debug, Clone)]
pub struct LgssmStateSpace<'a> {
    params: &'a LgssmParams,
}

impl<'a> LgssmStateSpace<'a> {
    pub fn new(params: &'a LgssmParams) -> Result<Self, SmcError> {
        if params.r_diag().iter().any(|r| *r <= 0.0) {
            return Err(SmcError::Model("observation noise must be positive".into()));
        }
        Ok(Self { params })
    }

    fn step(&self, z: &[f64], rng: &mut Rng) -> Vec<f64> {
        let p = self.params;
        let d = p.state_dim();
        (0..d)
            .map(|i| {
                let m: f64 = (0..d).map(|j| p.a()[(i, j)] * z[j]).sum();
                m + p.q_diag()[i].sqrt() * rng.normal()
            })
            .collect()
    }

    fn emission_mean(&self, z: &[f64]) -> Vec<f64> {
        let p = self.params;
        (0..p.obs_dim())
            .map(|i| (0..p.state_dim()).map(|j| p.h()[(i, j)] * z[j]).sum())
            .collect()
    }

    fn check(&self, z: &[Vec<f64>]) -> Result<(), SmcError> {
        match z.iter().find(|z| z.len() != self.params.state_dim()) {
            Some(z) => Err(SmcError::Dim(format!("state of length {}", z.len()))),
            None => Ok(()),
        }
    }
}

impl StateSpace for LgssmStateSpace<'_> {
    fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.params.obs_dim()
    }

    fn sample_initial(&self, n: usize, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        let p = self.params;
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng.fork(i as u64);
                let z0: Vec<f64> = (0..p.state_dim())
                    .map(|k| p.m0()[k] + p.p0_diag()[k].sqrt() * r.normal())
                    .collect();
                self.step(&z0, &mut r)
            })
            .collect())
    }

    fn propagate(&self, z: &[Vec<f64>], _u: Option<&[f64]>, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        self.check(z)?;
        Ok(z.par_iter()
            .enumerate()
            .map(|(i, z)| self.step(z, &mut rng.fork(i as u64)))
            .collect())
    }

    fn log_likelihood(&self, z: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, SmcError> {
        self.check(z)?;
        let r = self.params.r_diag();
        Ok(z.par_iter()
            .map(|z| {
                self.emission_mean(z)
                    .iter()
                    .enumerate()
                    .map(|(k, m)| normal_log_pdf(x[k], *m, r[k]))
                    .sum()
            })
            .collect())
    }

    fn emit(&self, z: &[Vec<f64>], rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        self.check(z)?;
        let r = self.params.r_diag();
        Ok(z.par_iter()
            .enumerate()
            .map(|(i, z)| {
                let mut g = rng.fork(i as u64);
                self.emission_mean(z)
                    .iter()
                    .enumerate()
                    .map(|(k, m)| m + r[k].sqrt() * g.normal())
                    .collect()
            })
            .collect())
    }
}

/// A trained VSSM's generative half; particles move through one batched
/// graph per step.
#[derive(Debug, Clone)]
pub struct VssmStateSpace<'a> {
    pub model: &'a VssmModel,
    pub params: &'a ParamStore,
}

impl<'a> VssmStateSpace<'a> {
    pub fn new(model: &'a VssmModel, params: &'a ParamStore) -> Result<Self, SmcError> {
        model.check_params(params)?;
        Ok(Self { model, params })
    }

    fn noise(&self, n: usize, rng: &Rng) -> Vec<Vec<f64>> {
        let d = self.model.n_latent();
        (0..n)
            .into_par_iter()
            .map(|i| rng.fork(i as u64).normal_vec(d))
            .collect()
    }
}

impl StateSpace for VssmStateSpace<'_> {
    fn state_dim(&self) -> usize {
        self.model.n_latent()
    }

    fn obs_dim(&self) -> usize {
        self.model.config().n_obs
    }

    fn cond_dim(&self) -> usize {
        self.model.config().n_cond
    }

    fn sample_initial(&self, n: usize, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        Ok(self.model.prior_from_noise(self.params, &self.noise(n, rng))?)
    }

    fn propagate(&self, z: &[Vec<f64>], u_prev: Option<&[f64]>, rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        if self.cond_dim() > 0 && u_prev.is_none() {
            return Err(SmcError::Conditions { needed: 1, got: 0 });
        }
        Ok(self
            .model
            .transition_values(self.params, z, u_prev, &self.noise(z.len(), rng))?)
    }

    fn log_likelihood(&self, z: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, SmcError> {
        Ok(self.model.emission_log_likelihood(self.params, z, x)?)
    }

    fn emit(&self, z: &[Vec<f64>], rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        let dists = self.model.emission(self.params, z)?;
        Ok(dists
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let mut r = rng.fork(i as u64);
                match d {
                    crate::vssm::EmissionDist::Gaussian(g) => g.sample(&mut r),
                    crate::vssm::EmissionDist::Bernoulli(b) => b.sample(&mut r),
                }
            })
            .collect())
    }
}
