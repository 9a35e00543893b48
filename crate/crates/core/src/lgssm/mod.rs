//! Exact linear-Gaussian state-space engine.
//!
//! `z_0 ~ N(m0, P0)`, `z_t = A z_{t-1} + N(0, Q)`, `x_t = H z_t + N(0, R)` for
//! `t = 1..T`, with diagonal `Q`, `R`, `P0` and full belief covariances.

mod filter;
mod gap;

pub use filter::{kalman_filter, log_likelihood, rts_smoother, FilterResult};
pub use gap::{
    conditional_gap_monte_carlo, gap_noise_sweep, lgssm_conditioning_gap, optimal_filter_conditioned_posterior,
    GapTable, MonteCarloGap, NoiseKind, SweepRow,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum LgssmError {
    #[error("inconsistent dimensions: {0}")]
    Dim(String),
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("expected {expected} observations, got {got}")]
    ObsLength { expected: usize, got: usize },
    #[error("observation {t} has length {got}, expected {expected}")]
    ObsDim { t: usize, expected: usize, got: usize },
    #[error("singular innovation covariance at t = {t}")]
    SingularInnovation { t: usize },
    #[error("prefix length {prefix} exceeds horizon {horizon}")]
    Prefix { prefix: usize, horizon: usize },
}

/// JSON form: matrices as lists of rows, diagonal covariances as vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgssmConfig {
    pub a: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub m0: Vec<f64>,
    pub p0: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LgssmConfig", into = "LgssmConfig")]
pub struct LgssmParams {
    a: DMatrix<f64>,
    q: DVector<f64>,
    h: DMatrix<f64>,
    r: DVector<f64>,
    m0: DVector<f64>,
    p0: DVector<f64>,
    horizon: usize,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, LgssmError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(LgssmError::Dim(format!(
            "{name} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl TryFrom<LgssmConfig> for LgssmParams {
    type Error = LgssmError;

    fn try_from(c: LgssmConfig) -> Result<Self, LgssmError> {
        Self::new(
            matrix("a", &c.a)?,
            DVector::from_vec(c.q),
            matrix("h", &c.h)?,
            DVector::from_vec(c.r),
            DVector::from_vec(c.m0),
            DVector::from_vec(c.p0),
            c.horizon,
        )
    }
}

impl From<LgssmParams> for LgssmConfig {
    fn from(p: LgssmParams) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        LgssmConfig {
            a: rows(&p.a),
            q: p.q.as_slice().to_vec(),
            h: rows(&p.h),
            r: p.r.as_slice().to_vec(),
            m0: p.m0.as_slice().to_vec(),
            p0: p.p0.as_slice().to_vec(),
            horizon: p.horizon,
        }
    }
}

impl LgssmParams {
    pub fn new(
        a: DMatrix<f64>,
        q: DVector<f64>,
        h: DMatrix<f64>,
        r: DVector<f64>,
        m0: DVector<f64>,
        p0: DVector<f64>,
        horizon: usize,
    ) -> Result<Self, LgssmError> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(LgssmError::Dim(format!(
                "a is {}x{}, must be square",
                a.nrows(),
                a.ncols()
            )));
        }
        if h.ncols() != d || h.nrows() == 0 {
            return Err(LgssmError::Dim(format!(
                "h is {}x{}, needs {d} columns",
                h.nrows(),
                h.ncols()
            )));
        }
        for (name, len, want) in [
            ("q", q.len(), d),
            ("m0", m0.len(), d),
            ("p0", p0.len(), d),
            ("r", r.len(), h.nrows()),
        ] {
            if len != want {
                return Err(LgssmError::Dim(format!("{name} has length {len}, expected {want}")));
            }
        }
        if a.iter().chain(h.iter()).chain(m0.iter()).any(|v| !v.is_finite()) {
            return Err(LgssmError::NonFinite("a, h or m0"));
        }
        for (name, v) in [("q", &q), ("r", &r), ("p0", &p0)] {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(LgssmError::Negative(name));
            }
        }
        if horizon == 0 {
            return Err(LgssmError::EmptyHorizon);
        }
        Ok(Self {
            a,
            q,
            h,
            r,
            m0,
            p0,
            horizon,
        })
    }

    /// Scalar model with the given coefficients.
    pub fn scalar(a: f64, q: f64, h: f64, r: f64, m0: f64, p0: f64, horizon: usize) -> Result<Self, LgssmError> {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let v = |x: f64| DVector::from_element(1, x);
        Self::new(m(a), v(q), m(h), v(r), v(m0), v(p0), horizon)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q_diag(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r_diag(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn p0_diag(&self) -> &DVector<f64> {
        &self.p0
    }

    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.q)
    }

    pub fn r(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.r)
    }

    pub fn p0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.p0)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self, LgssmError> {
        let mut p = self.clone();
        if horizon == 0 {
            return Err(LgssmError::EmptyHorizon);
        }
        p.horizon = horizon;
        Ok(p)
    }

    /// Same model with a different initial belief.
    pub fn with_initial(&self, m0: DVector<f64>, p0: DVector<f64>) -> Result<Self, LgssmError> {
        Self::new(
            self.a.clone(),
            self.q.clone(),
            self.h.clone(),
            self.r.clone(),
            m0,
            p0,
            self.horizon,
        )
    }

    pub fn scale_process_noise(&self, s: f64) -> Result<Self, LgssmError> {
        Self::new(
            self.a.clone(),
            &self.q * s,
            self.h.clone(),
            self.r.clone(),
            self.m0.clone(),
            &self.p0 * s,
            self.horizon,
        )
    }

    pub fn scale_observation_noise(&self, s: f64) -> Result<Self, LgssmError> {
        Self::new(
            self.a.clone(),
            self.q.clone(),
            self.h.clone(),
            &self.r * s,
            self.m0.clone(),
            self.p0.clone(),
            self.horizon,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetric with eigenvalues ≥ −1e-10.
    pub fn is_valid(&self) -> bool {
        let c = &self.cov;
        if c.nrows() != self.dim() || c.ncols() != self.dim() {
            return false;
        }
        let scale = c.amax().max(1.0);
        if (c - c.transpose()).amax() > 1e-12 * scale {
            return false;
        }
        c.clone().symmetric_eigenvalues().iter().all(|&e| e >= -1e-10)
    }
}

/// One trajectory: latents `z_{1:T}` and observations `x_{1:T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub latents: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Ancestral sample of one length-`T` sequence.
pub fn lgssm_sample(p: &LgssmParams, rng: &mut Rng) -> Trajectory {
    let noisy = |mean: DVector<f64>, var: &DVector<f64>, rng: &mut Rng| {
        DVector::from_iterator(
            mean.len(),
            mean.iter().zip(var.iter()).map(|(m, v)| m + v.sqrt() * rng.normal()),
        )
    };
    let mut latents = Vec::with_capacity(p.horizon);
    let mut observations = Vec::with_capacity(p.horizon);
    let mut z = noisy(p.m0.clone(), &p.p0, rng);
    for _ in 0..p.horizon {
        z = noisy(&p.a * &z, &p.q, rng);
        let x = noisy(&p.h * &z, &p.r, rng);
        latents.push(z.as_slice().to_vec());
        observations.push(x.as_slice().to_vec());
    }
    Trajectory { latents, observations }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let p = LgssmParams::scalar(0.9, 0.19, 1.0, 0.5, 0.0, 1.0, 10).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: LgssmParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"a":[[1]],"q":[-1],"h":[[1]],"r":[1],"m0":[0],"p0":[1],"horizon":3}"#;
        assert!(serde_json::from_str::<LgssmParams>(bad).is_err());
        let ragged = r#"{"a":[[1,0],[1]],"q":[1,1],"h":[[1,0]],"r":[1],"m0":[0,0],"p0":[1,1],"horizon":3}"#;
        assert!(serde_json::from_str::<LgssmParams>(ragged).is_err());
        let extra = r#"{"a":[[1]],"q":[1],"h":[[1]],"r":[1],"m0":[0],"p0":[1],"horizon":3,"b":1}"#;
        assert!(serde_json::from_str::<LgssmParams>(extra).is_err());
    }

    #[test]
    fn noiseless_sample_is_deterministic_trajectory() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let p = LgssmParams::new(
            a.clone(),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::zeros(2),
            6,
        )
        .unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(4));
        let mut z = &a * p.m0();
        for t in 0..6 {
            for i in 0..2 {
                assert!((tr.latents[t][i] - z[i]).abs() < 1e-14);
                assert_eq!(tr.latents[t][i], tr.observations[t][i]);
            }
            z = &a * z;
        }
    }

    #[test]
    fn ar1_stationary_variance() {
        // Q / (1 − A²) = 0.19 / 0.19.
        let p = LgssmParams::scalar(0.9, 0.19, 1.0, 0.0, 0.0, 1.0, 100_000).unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(8));
        let zs: Vec<f64> = tr.latents.iter().map(|z| z[0]).collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / zs.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let p = LgssmParams::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 20).unwrap();
        assert_eq!(lgssm_sample(&p, &mut Rng::new(5)), lgssm_sample(&p, &mut Rng::new(5)));
        assert_ne!(lgssm_sample(&p, &mut Rng::new(5)), lgssm_sample(&p, &mut Rng::new(6)));
    }
}
