//! Exact posterior of a scalar linear-Gaussian model, written in the
//! residual form used by the ELBO, and the network weights that make a
//! [`VssmModel`] coincide with that model.

use super::config::{ConditioningMode, EmissionConfig, InitialConfig, NetConfig, VssmConfig};
use super::inference::InferenceModel;
use super::model::{softplus_inv, BatchInputs, VssmModel, GAIN_FLOOR};
use super::VssmError;
use crate::autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use crate::lgssm::LgssmParams;
use crate::rng::Rng;

/// `p(z_1 | x_{1:T})` and `p(z_t | z_{t-1}, x_{t:T})` of a scalar LGSSM,
/// from backward information messages `exp(−Λ_t z²/2 + η_t z)` for
/// `p(x_{t:T} | z_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLgssmPosterior {
    a: f64,
    q: f64,
    h: f64,
    r: f64,
    m1: f64,
    p1: f64,
}

impl ExactLgssmPosterior {
    pub fn new(p: &LgssmParams) -> Result<Self, VssmError> {
        if p.state_dim() != 1 || p.obs_dim() != 1 {
            return Err(VssmError::Config("exact posterior needs a scalar model".into()));
        }
        let (a, q, h, r) = (p.a()[(0, 0)], p.q_diag()[0], p.h()[(0, 0)], p.r_diag()[0]);
        if q <= 0.0 || r <= 0.0 {
            return Err(VssmError::Config("exact posterior needs Q > 0 and R > 0".into()));
        }
        let (m0, p0) = (p.m0()[0], p.p0_diag()[0]);
        Ok(Self {
            a,
            q,
            h,
            r,
            m1: a * m0,
            p1: a * a * p0 + q,
        })
    }

    /// `(Λ_t, η_t)` for `t = 1..T` given one observation sequence.
    pub fn messages(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let (a, q, h, r) = (self.a, self.q, self.h, self.r);
        let mut out = vec![(0.0, 0.0); x.len()];
        let mut next: Option<(f64, f64)> = None;
        for t in (0..x.len()).rev() {
            let (mut lam, mut eta) = (0.0, 0.0);
            if let Some((ln, en)) = next {
                let m = 1.0 / q + ln;
                lam = a * a / q - a * a / (q * q * m);
                eta = a * en / (q * m);
            }
            lam += h * h / r;
            eta += h * x[t] / r;
            out[t] = (lam, eta);
            next = Some((lam, eta));
        }
        out
    }
}

/// Per-step `(Λ_t, η_t)` columns on the graph.
#[derive(Debug, Clone)]
pub struct ExactContext {
    lam: Vec<f64>,
    eta: Vec<Var>,
    rows: usize,
}

impl InferenceModel for ExactLgssmPosterior {
    type Context = ExactContext;

    fn begin(&self, g: &mut Graph, _p: &Binding, _m: &VssmModel, inp: &BatchInputs) -> Result<ExactContext, VssmError> {
        let t_len = inp.x.len();
        let rows = inp.rows;
        let mut eta = vec![vec![0.0; rows]; t_len];
        let mut lam = vec![0.0; t_len];
        for r in 0..rows {
            let x: Vec<f64> = inp.x.iter().map(|v| g.value(*v).data()[r]).collect();
            for (t, (l, e)) in self.messages(&x).into_iter().enumerate() {
                lam[t] = l;
                eta[t][r] = e;
            }
        }
        let eta = eta
            .into_iter()
            .map(|col| g.input(Tensor::new(vec![rows, 1], col).expect("column")))
            .collect();
        Ok(ExactContext { lam, eta, rows })
    }

    fn initial(
        &self,
        g: &mut Graph,
        _p: &Binding,
        _m: &VssmModel,
        ctx: &ExactContext,
    ) -> Result<(Var, Var), VssmError> {
        let prec = 1.0 / self.p1 + ctx.lam[0];
        let shifted = g.add_scalar(ctx.eta[0], self.m1 / self.p1);
        let mean = g.scale(shifted, 1.0 / prec);
        let logvar = g.input(Tensor::full(&[ctx.rows, 1], -prec.ln()));
        Ok((mean, logvar))
    }

    fn residual(
        &self,
        g: &mut Graph,
        _p: &Binding,
        _m: &VssmModel,
        ctx: &ExactContext,
        t: usize,
        z_prev: Var,
        z_tilde: Var,
        gain: Var,
    ) -> Result<(Var, Var), VssmError> {
        let prec = 1.0 / self.q + ctx.lam[t];
        let pulled = g.scale(z_prev, self.a / self.q);
        let num = g.add(pulled, ctx.eta[t])?;
        let mu = g.scale(num, 1.0 / prec);
        let diff = g.sub(mu, z_tilde)?;
        let mean = g.div(diff, gain)?;
        let log_gain = g.log(gain);
        let lg2 = g.scale(log_gain, -2.0);
        let logvar = g.add_scalar(lg2, -prec.ln());
        Ok((mean, logvar))
    }
}

/// A configuration whose networks can represent a scalar LGSSM exactly.
pub fn linear_gaussian_config(p: &LgssmParams) -> Result<VssmConfig, VssmError> {
    if p.state_dim() != 1 || p.obs_dim() != 1 {
        return Err(VssmError::Config("linearisation needs a scalar model".into()));
    }
    Ok(VssmConfig {
        n_latent: 1,
        n_obs: 1,
        n_cond: 0,
        conditioning: ConditioningMode::Full,
        initial: InitialConfig { n_flows: 1 },
        transition: NetConfig::linear(),
        gain: NetConfig::linear(),
        emission: EmissionConfig::FixedScale {
            layers: Vec::new(),
            scale: vec![p.r_diag()[0]],
        },
        ..VssmConfig::default()
    })
}

/// Weights for a model built from [`linear_gaussian_config`] that reproduce
/// the LGSSM's generative distribution. Inference weights are random.
pub fn linear_gaussian_params(model: &VssmModel, p: &LgssmParams, rng: &mut Rng) -> Result<ParamStore, VssmError> {
    let (a, q, h) = (p.a()[(0, 0)], p.q_diag()[0], p.h()[(0, 0)]);
    let (m0, p0) = (p.m0()[0], p.p0_diag()[0]);
    let sd = q.sqrt();
    if sd <= GAIN_FLOOR {
        return Err(VssmError::Config("process noise too small for the gain floor".into()));
    }
    let mut store = model.init_params(rng);
    let mut set = |name: &str, v: f64| store.insert(name, Tensor::new(vec![1, 1], vec![v]).expect("1x1"));
    set("transition.layers.0.weight", a - 1.0);
    set("transition.layers.0.bias", 0.0);
    set("gain.layers.0.weight", 0.0);
    set("gain.layers.0.bias", softplus_inv(sd - GAIN_FLOOR));
    set("emission.layers.0.weight", h);
    set("emission.layers.0.bias", 0.0);
    for part in ["shift", "log_scale"] {
        set(&format!("initial.flows.0.{part}.weight"), 0.0);
    }
    set("initial.flows.0.shift.bias", a * m0);
    set("initial.flows.0.log_scale.bias", 0.5 * (a * a * p0 + q).ln());
    model.check_params(&store)?;
    Ok(store)
}
