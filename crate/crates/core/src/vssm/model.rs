use super::config::{ConditioningMode, EmissionConfig, VssmConfig};
use super::VssmError;
use crate::autodiff::nn::{Gru, Mlp};
use crate::autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use crate::datasets::Sequence;
use crate::distributions::{
    bernoulli_log_prob_graph, clamp_logvar, log_prob_graph, AffineIafFlow, BernoulliVec, DiagGaussian,
};
use crate::rng::Rng;

/// Floor added to the softplus gain so the residual map stays invertible.
pub const GAIN_FLOOR: f64 = 1e-4;

pub(crate) fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Sequences of equal length and dimensions.
#[derive(Debug, Clone)]
pub struct SequenceBatch<'a> {
    seqs: Vec<&'a Sequence>,
    t_len: usize,
    n_obs: usize,
    n_cond: usize,
}

impl<'a> SequenceBatch<'a> {
    pub fn new(seqs: impl IntoIterator<Item = &'a Sequence>) -> Result<Self, VssmError> {
        let seqs: Vec<&Sequence> = seqs.into_iter().collect();
        let first = seqs.first().ok_or(VssmError::EmptyDataset)?;
        let (t_len, n_obs, n_cond) = (first.len(), first.obs_dim(), first.cond_dim());
        if t_len == 0 {
            return Err(VssmError::Batch("sequences must have at least one step".into()));
        }
        for (i, s) in seqs.iter().enumerate() {
            if s.len() != t_len {
                return Err(VssmError::Batch(format!(
                    "sequence {i} has length {}, expected {t_len}",
                    s.len()
                )));
            }
            if !s.u.is_empty() && s.u.len() != t_len {
                return Err(VssmError::Batch(format!(
                    "sequence {i} has {} conditions for {t_len} steps",
                    s.u.len()
                )));
            }
            if s.x.iter().any(|x| x.len() != n_obs) || s.u.iter().any(|u| u.len() != n_cond) {
                return Err(VssmError::Batch(format!("sequence {i} has inconsistent dimensions")));
            }
            if s.x.iter().chain(&s.u).flatten().any(|v| !v.is_finite()) {
                return Err(VssmError::Batch(format!("sequence {i} has non-finite values")));
            }
        }
        Ok(Self {
            seqs,
            t_len,
            n_obs,
            n_cond,
        })
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_cond(&self) -> usize {
        self.n_cond
    }

    /// Step `t` of every sequence, the whole batch tiled `repeat` times.
    fn tensor(&self, t: usize, repeat: usize, cond: bool) -> Tensor {
        let width = if cond { self.n_cond } else { self.n_obs };
        let mut data = Vec::with_capacity(repeat * self.len() * width);
        for _ in 0..repeat {
            for s in &self.seqs {
                data.extend_from_slice(if cond { &s.u[t] } else { &s.x[t] });
            }
        }
        Tensor::new(vec![repeat * self.len(), width], data).expect("consistent batch")
    }
}

/// Batch data placed on a graph. Row `r` holds sequence `r % batch`.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub x: Vec<Var>,
    /// Empty when the model has no conditions.
    pub u: Vec<Var>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Emission {
    Gaussian(Mlp),
    FixedScale(Mlp, Vec<f64>),
    IdentitySlice(Vec<f64>),
    Bernoulli(Mlp),
}

/// Per-row emission parameters on a graph.
#[derive(Debug, Clone, Copy)]
pub enum EmissionVars {
    Gaussian { mean: Var, logvar: Var },
    Bernoulli { logits: Var },
}

/// Emission distribution at a single state.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionDist {
    Gaussian(DiagGaussian),
    Bernoulli(BernoulliVec),
}

/// Network structure of the residual state-space model; weights live in a
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct VssmModel {
    config: VssmConfig,
    transition: Mlp,
    gain: Mlp,
    prior: AffineIafFlow,
    inv_initial: Mlp,
    inv_disturbance: Mlp,
    rnn_fwd: Gru,
    rnn_bwd: Option<Gru>,
    initial_mlp: Option<Mlp>,
    emission: Emission,
}

impl VssmModel {
    pub fn new(config: VssmConfig) -> Result<Self, VssmError> {
        config.validate()?;
        let (n, k_obs, k_cond) = (config.n_latent, config.n_obs, config.n_cond);
        let h = config.feature_rnn.n_states;
        let step_in = k_obs + k_cond;
        let full = config.conditioning == ConditioningMode::Full;
        let n_features = if full { 2 * h } else { h };
        let initial_mlp = match config.conditioning {
            ConditioningMode::Full => None,
            mode => Some(Mlp::from_layers(
                "feature_rnn.initial_mlp",
                mode.sneak_peek(0) * step_in,
                &config.feature_rnn.initial_mlp.pairs(),
                h,
            )),
        };
        let emission = match &config.emission {
            EmissionConfig::Gaussian { layers } => {
                Emission::Gaussian(Mlp::from_layers("emission", n, &pairs(layers), 2 * k_obs))
            }
            EmissionConfig::FixedScale { layers, scale } => Emission::FixedScale(
                Mlp::from_layers("emission", n, &pairs(layers), k_obs),
                scale.iter().map(|s| s.ln()).collect(),
            ),
            EmissionConfig::IdentitySlice { scale } => Emission::IdentitySlice(scale.iter().map(|s| s.ln()).collect()),
            EmissionConfig::Bernoulli { layers } => {
                Emission::Bernoulli(Mlp::from_layers("emission", n, &pairs(layers), k_obs))
            }
        };
        Ok(Self {
            transition: Mlp::from_layers("transition", n + k_cond, &config.transition.pairs(), n),
            gain: Mlp::from_layers("gain", n, &config.gain.pairs(), n),
            prior: AffineIafFlow::new("initial", config.initial.n_flows, DiagGaussian::standard(n)),
            inv_initial: Mlp::from_layers("inv_initial", n_features, &config.inv_initial.pairs(), 2 * n),
            inv_disturbance: Mlp::from_layers(
                "inv_disturbance",
                n + n_features,
                &config.inv_disturbance.pairs(),
                2 * n,
            ),
            rnn_fwd: Gru::new("feature_rnn.fwd", step_in, h),
            rnn_bwd: full.then(|| Gru::new("feature_rnn.bwd", step_in, h)),
            initial_mlp,
            emission,
            config,
        })
    }

    pub fn config(&self) -> &VssmConfig {
        &self.config
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.conditioning
    }

    pub fn n_latent(&self) -> usize {
        self.config.n_latent
    }

    pub fn prior(&self) -> &AffineIafFlow {
        &self.prior
    }

    /// Fresh weights: identity deterministic step, constant initial gain,
    /// small random flows and Glorot-uniform elsewhere.
    pub fn init_params(&self, rng: &mut Rng) -> ParamStore {
        let mut store = ParamStore::new();
        self.transition.init(&mut store, rng);
        self.transition.init_output_constant(&mut store, 0.0);
        self.gain.init(&mut store, rng);
        self.gain
            .init_output_constant(&mut store, softplus_inv(self.config.initial_gain - GAIN_FLOOR));
        self.prior.init_random(&mut store, rng, 0.01);
        self.inv_initial.init(&mut store, rng);
        self.inv_disturbance.init(&mut store, rng);
        self.rnn_fwd.init(&mut store, rng);
        if let Some(b) = &self.rnn_bwd {
            b.init(&mut store, rng);
        }
        if let Some(m) = &self.initial_mlp {
            m.init(&mut store, rng);
        }
        match &self.emission {
            Emission::Gaussian(m) | Emission::FixedScale(m, _) | Emission::Bernoulli(m) => m.init(&mut store, rng),
            Emission::IdentitySlice(_) => {}
        }
        store
    }

    /// Check that `store` has every tensor this model reads, with the right shape.
    pub fn check_params(&self, store: &ParamStore) -> Result<(), VssmError> {
        let reference = self.init_params(&mut Rng::new(0));
        for (name, t) in reference.iter() {
            let got = store.get(name)?;
            if got.shape() != t.shape() {
                return Err(VssmError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if !store.all_finite() {
            return Err(VssmError::Config("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn check_batch(&self, batch: &SequenceBatch) -> Result<(), VssmError> {
        if batch.n_obs() != self.config.n_obs || batch.n_cond() != self.config.n_cond {
            return Err(VssmError::Batch(format!(
                "data has n_obs = {}, n_cond = {}; model expects {} and {}",
                batch.n_obs(),
                batch.n_cond(),
                self.config.n_obs,
                self.config.n_cond
            )));
        }
        self.mode().validate(batch.t_len())
    }

    pub fn batch_inputs(&self, g: &mut Graph, batch: &SequenceBatch, repeat: usize) -> BatchInputs {
        let x = (0..batch.t_len())
            .map(|t| g.input(batch.tensor(t, repeat, false)))
            .collect();
        let u = if self.config.n_cond > 0 {
            (0..batch.t_len())
                .map(|t| g.input(batch.tensor(t, repeat, true)))
                .collect()
        } else {
            Vec::new()
        };
        BatchInputs {
            x,
            u,
            rows: repeat * batch.len(),
        }
    }

    fn step_input(&self, g: &mut Graph, inp: &BatchInputs, t: usize) -> Result<Var, VssmError> {
        if inp.u.is_empty() {
            Ok(inp.x[t])
        } else {
            Ok(g.concat(&[inp.x[t], inp.u[t]])?)
        }
    }

    /// Features `β_{1:T}`. Full mode concatenates forward and backward GRU
    /// states; otherwise `β_1` comes from the sneak-peek network and `β_t`
    /// from the forward GRU, so `β_t` depends on `x_{1:max(t,k)}` only.
    pub fn features(&self, g: &mut Graph, p: &Binding, inp: &BatchInputs) -> Result<Vec<Var>, VssmError> {
        let t_len = inp.x.len();
        self.mode().validate(t_len)?;
        let steps = (0..t_len)
            .map(|t| self.step_input(g, inp, t))
            .collect::<Result<Vec<_>, _>>()?;
        let fwd = self.rnn_fwd.run(g, p, &steps, false)?;
        match (&self.rnn_bwd, &self.initial_mlp) {
            (Some(bwd), _) => {
                let back = bwd.run(g, p, &steps, true)?;
                fwd.iter().zip(&back).map(|(f, b)| Ok(g.concat(&[*f, *b])?)).collect()
            }
            (None, Some(mlp)) => {
                let k = self.mode().sneak_peek(t_len);
                let peek = g.concat(&steps[..k])?;
                let beta1 = mlp.forward(g, p, peek)?;
                let mut out = fwd;
                out[0] = beta1;
                Ok(out)
            }
            (None, None) => unreachable!("partial and semi modes always have a sneak-peek network"),
        }
    }

    fn split_head(&self, g: &mut Graph, out: Var) -> Result<(Var, Var), VssmError> {
        let n = self.config.n_latent;
        let mean = g.slice_cols(out, 0, n)?;
        let raw = g.slice_cols(out, n, 2 * n)?;
        Ok((mean, clamp_logvar(g, raw)))
    }

    /// `q(z_1 | β_1)` as (mean, log-variance).
    pub fn initial_posterior(&self, g: &mut Graph, p: &Binding, beta1: Var) -> Result<(Var, Var), VssmError> {
        let out = self.inv_initial.forward(g, p, beta1)?;
        self.split_head(g, out)
    }

    /// `q(ε_t | z̃_t, β_t)` as (mean, log-variance).
    pub fn residual_posterior(
        &self,
        g: &mut Graph,
        p: &Binding,
        z_tilde: Var,
        beta: Var,
    ) -> Result<(Var, Var), VssmError> {
        let inp = g.concat(&[z_tilde, beta])?;
        let out = self.inv_disturbance.forward(g, p, inp)?;
        self.split_head(g, out)
    }

    /// `log p(z_1)` under the flow prior, per row.
    pub fn prior_log_prob(&self, g: &mut Graph, p: &Binding, z1: Var) -> Result<Var, VssmError> {
        Ok(self.prior.log_prob_graph(g, p, z1)?)
    }

    /// `z̃_t = z_{t-1} + FNN(z_{t-1}, u_{t-1})`.
    pub fn deterministic_step(
        &self,
        g: &mut Graph,
        p: &Binding,
        z_prev: Var,
        u_prev: Option<Var>,
    ) -> Result<Var, VssmError> {
        let inp = match u_prev {
            Some(u) => g.concat(&[z_prev, u])?,
            None => z_prev,
        };
        let delta = self.transition.forward(g, p, inp)?;
        Ok(g.add(z_prev, delta)?)
    }

    /// `softplus(FNN(z_{t-1})) + 1e-4`.
    pub fn gain(&self, g: &mut Graph, p: &Binding, z_prev: Var) -> Result<Var, VssmError> {
        let raw = self.gain.forward(g, p, z_prev)?;
        let sp = g.softplus(raw);
        Ok(g.add_scalar(sp, GAIN_FLOOR))
    }

    pub fn transition_step(
        &self,
        g: &mut Graph,
        p: &Binding,
        z_prev: Var,
        u_prev: Option<Var>,
        eps: Var,
    ) -> Result<Var, VssmError> {
        let det = self.deterministic_step(g, p, z_prev, u_prev)?;
        let gain = self.gain(g, p, z_prev)?;
        let scaled = g.mul(gain, eps)?;
        Ok(g.add(det, scaled)?)
    }

    pub fn emission_vars(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<EmissionVars, VssmError> {
        let k = self.config.n_obs;
        let rows = g.value(z).rows();
        let fixed = |g: &mut Graph, lv: &[f64]| {
            let row: Vec<f64> = (0..rows).flat_map(|_| lv.iter().copied()).collect();
            g.input(Tensor::new(vec![rows, lv.len()], row).expect("fixed scale shape"))
        };
        Ok(match &self.emission {
            Emission::Gaussian(m) => {
                let out = m.forward(g, p, z)?;
                let mean = g.slice_cols(out, 0, k)?;
                let raw = g.slice_cols(out, k, 2 * k)?;
                EmissionVars::Gaussian {
                    mean,
                    logvar: clamp_logvar(g, raw),
                }
            }
            Emission::FixedScale(m, lv) => EmissionVars::Gaussian {
                mean: m.forward(g, p, z)?,
                logvar: fixed(g, lv),
            },
            Emission::IdentitySlice(lv) => EmissionVars::Gaussian {
                mean: g.slice_cols(z, 0, k)?,
                logvar: fixed(g, lv),
            },
            Emission::Bernoulli(m) => EmissionVars::Bernoulli {
                logits: m.forward(g, p, z)?,
            },
        })
    }

    /// `log p(x_t | z_t)` per row.
    pub fn emission_log_prob(&self, g: &mut Graph, p: &Binding, z: Var, x: Var) -> Result<Var, VssmError> {
        Ok(match self.emission_vars(g, p, z)? {
            EmissionVars::Gaussian { mean, logvar } => log_prob_graph(g, x, mean, logvar)?,
            EmissionVars::Bernoulli { logits } => bernoulli_log_prob_graph(g, x, logits)?,
        })
    }

    /// Emission distributions at the given states.
    pub fn emission(&self, store: &ParamStore, z: &[Vec<f64>]) -> Result<Vec<EmissionDist>, VssmError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let zv = g.input(rows_tensor(z, self.config.n_latent)?);
        let vars = self.emission_vars(&mut g, &p, zv)?;
        let k = self.config.n_obs;
        (0..z.len())
            .map(|r| {
                let row = |v: Var| g.value(v).data()[r * k..(r + 1) * k].to_vec();
                Ok(match vars {
                    EmissionVars::Gaussian { mean, logvar } => EmissionDist::Gaussian(DiagGaussian::new(
                        row(mean),
                        row(logvar).iter().map(|l| l.exp()).collect(),
                    )?),
                    EmissionVars::Bernoulli { logits } => {
                        EmissionDist::Bernoulli(BernoulliVec::from_logits(row(logits))?)
                    }
                })
            })
            .collect()
    }

    /// `log p(x | z_i)` for each state `z_i`.
    pub fn emission_log_likelihood(
        &self,
        store: &ParamStore,
        z: &[Vec<f64>],
        x: &[f64],
    ) -> Result<Vec<f64>, VssmError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let zv = g.input(rows_tensor(z, self.config.n_latent)?);
        let xs: Vec<Vec<f64>> = vec![x.to_vec(); z.len()];
        let xv = g.input(rows_tensor(&xs, self.config.n_obs)?);
        let lp = self.emission_log_prob(&mut g, &p, zv, xv)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// One prior transition for each state with fresh `ε ~ N(0, I)`.
    pub fn propagate(
        &self,
        store: &ParamStore,
        z: &[Vec<f64>],
        u_prev: Option<&[f64]>,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>, VssmError> {
        let n = self.config.n_latent;
        let eps: Vec<Vec<f64>> = z.iter().map(|_| rng.normal_vec(n)).collect();
        self.transition_values(store, z, u_prev, &eps)
    }

    /// Value-level [`VssmModel::transition_step`].
    pub fn transition_values(
        &self,
        store: &ParamStore,
        z: &[Vec<f64>],
        u_prev: Option<&[f64]>,
        eps: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, VssmError> {
        let n = self.config.n_latent;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let zv = g.input(rows_tensor(z, n)?);
        let ev = g.input(rows_tensor(eps, n)?);
        let uv = match u_prev {
            Some(u) if self.config.n_cond > 0 => {
                Some(g.input(rows_tensor(&vec![u.to_vec(); z.len()], self.config.n_cond)?))
            }
            _ => None,
        };
        let out = self.transition_step(&mut g, &p, zv, uv, ev)?;
        Ok(g.value(out).data().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// Samples from the flow prior `p(z_1)`.
    pub fn sample_prior(&self, store: &ParamStore, count: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, VssmError> {
        let n = self.config.n_latent;
        let noise: Vec<Vec<f64>> = (0..count).map(|_| rng.normal_vec(n)).collect();
        self.prior_from_noise(store, &noise)
    }

    /// Push standard-normal draws through the flow prior.
    pub fn prior_from_noise(&self, store: &ParamStore, noise: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, VssmError> {
        let n = self.config.n_latent;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let e = g.input(rows_tensor(noise, n)?);
        let (z, _) = self.prior.sample_graph(&mut g, &p, e)?;
        Ok(g.value(z).data().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// Draw one observation per state.
    pub fn emit(&self, store: &ParamStore, z: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>, VssmError> {
        Ok(self
            .emission(store, z)?
            .into_iter()
            .map(|d| match d {
                EmissionDist::Gaussian(g) => g.sample(rng),
                EmissionDist::Bernoulli(b) => b.sample(rng),
            })
            .collect())
    }

    /// Ancestral samples `(z_{1:T}, x_{1:T})` from the generative model.
    /// `conds`, if given, supplies `u_{1:T}` for each sequence.
    pub fn generate(
        &self,
        store: &ParamStore,
        n: usize,
        t_len: usize,
        conds: Option<&[Vec<Vec<f64>>]>,
        rng: &mut Rng,
    ) -> Result<Generated, VssmError> {
        if let Some(c) = conds {
            if c.len() != n || c.iter().any(|u| u.len() != t_len) {
                return Err(VssmError::Batch("conditions must cover every sequence and step".into()));
            }
        }
        let mut z = self.sample_prior(store, n, rng)?;
        let mut latents = vec![Vec::with_capacity(t_len); n];
        let mut sequences: Vec<Sequence> = (0..n)
            .map(|i| Sequence {
                x: Vec::with_capacity(t_len),
                u: conds.map_or_else(Vec::new, |c| c[i].clone()),
            })
            .collect();
        for t in 0..t_len {
            if t > 0 {
                let eps: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(self.config.n_latent)).collect();
                z = match conds {
                    Some(c) => (0..n)
                        .map(|i| {
                            self.transition_values(store, &z[i..=i], Some(&c[i][t - 1]), &eps[i..=i])
                                .map(|mut v| v.remove(0))
                        })
                        .collect::<Result<_, _>>()?,
                    None => self.transition_values(store, &z, None, &eps)?,
                };
            }
            let x = self.emit(store, &z, rng)?;
            for i in 0..n {
                latents[i].push(z[i].clone());
                sequences[i].x.push(x[i].clone());
            }
        }
        Ok(Generated { latents, sequences })
    }
}

fn pairs(layers: &[super::config::LayerSpec]) -> Vec<(usize, crate::autodiff::nn::Activation)> {
    layers.iter().map(|l| (l.units, l.activation)).collect()
}

pub(crate) fn rows_tensor(rows: &[Vec<f64>], width: usize) -> Result<Tensor, VssmError> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(VssmError::Batch(format!("expected rows of width {width}")));
    }
    Ok(Tensor::new(vec![rows.len(), width], rows.concat())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub latents: Vec<Vec<Vec<f64>>>,
    pub sequences: Vec<Sequence>,
}
