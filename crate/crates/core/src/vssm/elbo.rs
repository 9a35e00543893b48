use rayon::prelude::*;
use serde::Serialize;

use super::inference::InferenceModel;
use super::model::{SequenceBatch, VssmModel};
use super::VssmError;
use crate::autodiff::{Binding, Graph, ParamStore, Var};
use crate::datasets::Sequence;
use crate::distributions::{kl_std_normal_graph, log_prob_graph, noise_like, reparam_sample_logvar};
use crate::rng::Rng;

/// Per-row ELBO terms (`[rows, 1]`), summed over time.
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub elbo: Var,
    pub recon: Var,
    pub kl: Var,
    pub rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboReport {
    /// Nats per sequence, averaged over the batch and posterior samples.
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub n_posterior_samples: usize,
}

impl VssmModel {
    /// Reparameterised single-sample ELBO for each of `n_samples` copies of
    /// the batch. The `z_1` term is `log q(z_1) − log p(z_1)` at the sample;
    /// residual terms are analytic KLs to `N(0, I)`.
    pub fn elbo_graph<I: InferenceModel>(
        &self,
        inference: &I,
        g: &mut Graph,
        p: &Binding,
        batch: &SequenceBatch,
        n_samples: usize,
        rng: &mut Rng,
    ) -> Result<ElboVars, VssmError> {
        if n_samples == 0 {
            return Err(VssmError::Config("n_samples must be positive".into()));
        }
        self.check_batch(batch)?;
        let n = self.n_latent();
        let inp = self.batch_inputs(g, batch, n_samples);
        let rows = inp.rows;
        let ctx = inference.begin(g, p, self, &inp)?;

        let (m1, lv1) = inference.initial(g, p, self, &ctx)?;
        let e1 = noise_like(g, rows, n, rng);
        let mut z = reparam_sample_logvar(g, m1, lv1, e1)?;
        let log_q = log_prob_graph(g, z, m1, lv1)?;
        let log_p = self.prior_log_prob(g, p, z)?;
        let mut kl = g.sub(log_q, log_p)?;
        let mut recon = self.emission_log_prob(g, p, z, inp.x[0])?;
        check(g, &[kl, recon], 1)?;

        for t in 1..batch.t_len() {
            let u_prev = inp.u.get(t - 1).copied();
            let z_tilde = self.deterministic_step(g, p, z, u_prev)?;
            let gain = self.gain(g, p, z)?;
            let (me, lve) = inference.residual(g, p, self, &ctx, t, z, z_tilde, gain)?;
            let noise = noise_like(g, rows, n, rng);
            let eps = reparam_sample_logvar(g, me, lve, noise)?;
            let step_kl = kl_std_normal_graph(g, me, lve)?;
            let scaled = g.mul(gain, eps)?;
            z = g.add(z_tilde, scaled)?;
            let step_recon = self.emission_log_prob(g, p, z, inp.x[t])?;
            check(g, &[step_kl, step_recon], t + 1)?;
            kl = g.add(kl, step_kl)?;
            recon = g.add(recon, step_recon)?;
        }
        let elbo = g.sub(recon, kl)?;
        Ok(ElboVars { elbo, recon, kl, rows })
    }

    /// Batch-averaged ELBO without gradients.
    pub fn elbo_estimate<I: InferenceModel>(
        &self,
        inference: &I,
        store: &ParamStore,
        batch: &SequenceBatch,
        n_samples: usize,
        rng: &mut Rng,
    ) -> Result<ElboReport, VssmError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let v = self.elbo_graph(inference, &mut g, &p, batch, n_samples, rng)?;
        let mean = |v: Var| g.value(v).data().iter().sum::<f64>() / g.value(v).numel() as f64;
        let (recon, kl) = (mean(v.recon), mean(v.kl));
        Ok(ElboReport {
            elbo: recon - kl,
            recon,
            kl,
            n_posterior_samples: n_samples,
        })
    }
}

fn check(g: &Graph, vars: &[Var], t: usize) -> Result<(), VssmError> {
    if vars.iter().all(|v| g.value(*v).all_finite()) {
        Ok(())
    } else {
        Err(VssmError::NonFiniteElbo { t })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Mean over sequences of the sample-averaged ELBO (nats per sequence).
    pub mean: f64,
    /// Standard deviation over sequences.
    pub std: f64,
    /// `mean` divided by the average sequence length.
    pub mean_per_step: f64,
    pub recon: f64,
    pub kl: f64,
    pub n_posterior_samples: usize,
    pub per_sequence: Vec<f64>,
}

/// Per-sequence ELBO averaged over `n_samples` posterior draws. Sequence
/// `i` uses `rng.fork(i)`, so the result does not depend on thread count.
pub fn evaluate_elbo<I: InferenceModel + Sync>(
    model: &VssmModel,
    inference: &I,
    store: &ParamStore,
    data: &[Sequence],
    n_samples: usize,
    rng: &Rng,
) -> Result<EvalSummary, VssmError> {
    if data.is_empty() {
        return Err(VssmError::EmptyDataset);
    }
    let reports = data
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let batch = SequenceBatch::new([s])?;
            model.elbo_estimate(inference, store, &batch, n_samples, &mut rng.fork(i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = reports.len() as f64;
    let per_sequence: Vec<f64> = reports.iter().map(|r| r.elbo).collect();
    let mean = per_sequence.iter().sum::<f64>() / n;
    let var = if reports.len() > 1 {
        per_sequence.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mean_len = data.iter().map(Sequence::len).sum::<usize>() as f64 / n;
    Ok(EvalSummary {
        mean,
        std: var.sqrt(),
        mean_per_step: mean / mean_len,
        recon: reports.iter().map(|r| r.recon).sum::<f64>() / n,
        kl: reports.iter().map(|r| r.kl).sum::<f64>() / n,
        n_posterior_samples: n_samples,
        per_sequence,
    })
}
