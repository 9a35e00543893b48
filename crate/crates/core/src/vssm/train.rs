use std::collections::BTreeMap;

use serde::Serialize;

use super::elbo::evaluate_elbo;
use super::inference::Amortized;
use super::model::{SequenceBatch, VssmModel};
use super::VssmError;
use crate::autodiff::{Adam, Graph, ParamStore, Tensor};
use crate::datasets::Sequence;
use crate::rng::{streams, Rng};

/// Batch averages in nats per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValRow {
    pub step: usize,
    pub elbo: f64,
    pub elbo_std: f64,
    pub elbo_per_step: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if training aborted.
    pub params: ParamStore,
    pub log: Vec<LogRow>,
    pub validation: Vec<ValRow>,
    pub steps_completed: usize,
    pub aborted: Option<String>,
}

/// Adam on the negative ELBO per time step. Batches are drawn with
/// replacement from sequences of one length. Deterministic given `seed`.
pub fn train(
    model: &VssmModel,
    init: ParamStore,
    data: &[Sequence],
    validation: Option<&[Sequence]>,
    seed: u64,
) -> Result<TrainOutcome, VssmError> {
    if data.is_empty() {
        return Err(VssmError::EmptyDataset);
    }
    model.check_params(&init)?;
    for s in data.iter().chain(validation.unwrap_or_default()) {
        model.check_batch(&SequenceBatch::new([s])?)?;
    }
    let cfg = model.config();
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        buckets.entry(s.len()).or_default().push(i);
    }
    let mut rng = Rng::with_stream(seed, streams::TRAIN);
    let eval_rng = Rng::with_stream(seed, streams::EVAL);
    let mut adam = Adam::new(cfg.optimizer)?;
    let mut store = init;
    let mut out = TrainOutcome {
        params: ParamStore::new(),
        log: Vec::new(),
        validation: Vec::new(),
        steps_completed: 0,
        aborted: None,
    };
    let validate = |store: &ParamStore, step: usize| -> Result<Option<ValRow>, VssmError> {
        let Some(val) = validation else { return Ok(None) };
        let s = evaluate_elbo(model, &Amortized, store, val, cfg.eval_samples, &eval_rng)?;
        Ok(Some(ValRow {
            step,
            elbo: s.mean,
            elbo_std: s.std,
            elbo_per_step: s.mean_per_step,
        }))
    };

    for step in 1..=cfg.steps {
        adam.set_learning_rate(learning_rate(
            cfg.optimizer.learning_rate,
            cfg.final_learning_rate,
            step,
            cfg.steps,
        ));
        let anchor = rng.index(data.len());
        let bucket = &buckets[&data[anchor].len()];
        let picks: Vec<&Sequence> = (0..cfg.batch_size)
            .map(|_| &data[bucket[rng.index(bucket.len())]])
            .collect();
        let batch = SequenceBatch::new(picks)?;

        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let vars = match model.elbo_graph(&Amortized, &mut g, &p, &batch, cfg.n_samples, &mut rng) {
            Ok(v) => v,
            Err(e @ VssmError::NonFiniteElbo { .. }) => {
                out.aborted = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mean_elbo = g.mean(vars.elbo);
        let loss = g.scale(mean_elbo, -1.0 / batch.t_len() as f64);
        g.backward(loss)?;
        let mut grads = g.named_grads()?;
        if grads.values().any(|t| !t.all_finite()) {
            out.aborted = Some(format!("step {step}: non-finite gradient"));
            break;
        }
        if let Some(clip) = cfg.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        let last_good = store.clone();
        adam.step(&mut store, &grads)?;
        if !store.all_finite() {
            store = last_good;
            out.aborted = Some(format!("step {step}: non-finite parameters"));
            break;
        }
        out.steps_completed = step;

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1) {
            let mean = |v| g.value(v).data().iter().sum::<f64>() / vars.rows as f64;
            let (recon, kl) = (mean(vars.recon), mean(vars.kl));
            out.log.push(LogRow {
                step,
                elbo: recon - kl,
                recon,
                kl,
            });
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            out.validation.extend(validate(&store, step)?);
        }
    }
    out.validation.extend(validate(&store, out.steps_completed)?);
    out.params = store;
    Ok(out)
}

/// Geometric interpolation from `start` at step 1 to `end` at the last step.
pub(crate) fn learning_rate(start: f64, end: Option<f64>, step: usize, steps: usize) -> f64 {
    match end {
        Some(end) if steps > 1 => start * (end / start).powf((step - 1) as f64 / (steps - 1) as f64),
        _ => start,
    }
}

/// Rescale gradients so their joint Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub(crate) fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
