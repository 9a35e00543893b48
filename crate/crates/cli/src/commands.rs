use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use condgap::analytic_gap::demo::{
    bimodal_report, univariate_report, BimodalConfig, UnivariateConfig, UnivariateReport,
};
use condgap::autodiff::ParamStore;
use condgap::datasets::{read_jsonl, to_jsonl, BranchingParams, DatasetSpec, GeneratorSpec, Sequence, Split};
use condgap::lgssm::{conditional_gap_monte_carlo, gap_noise_sweep, lgssm_conditioning_gap, LgssmParams, NoiseKind};
use condgap::rng::{streams, Rng};
use condgap::smc::{self, bootstrap_filter, ppc_final_density, VssmStateSpace};
use condgap::vssm::{evaluate_elbo, train as train_model, Amortized, VssmConfig, VssmModel};

use crate::config::{load_or_default, load_required, parse, resolve, usage, Failure};
use crate::output::{num, OutDir};

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        resolve(self.config_path(), p)
    }
}

fn grid_mass(zs: &[f64], ys: impl Iterator<Item = f64>) -> f64 {
    let ys: Vec<f64> = ys.collect();
    zs.windows(2)
        .zip(ys.windows(2))
        .map(|(z, y)| 0.5 * (z[1] - z[0]) * (y[0] + y[1]))
        .sum()
}

pub fn demo_univariate(ctx: &Context) -> Result<(), Failure> {
    let cfg: UnivariateConfig = load_or_default(ctx.config_path())?;
    if !(cfg.a_step > 0.0 && cfg.a_hi >= cfg.a_lo) {
        return Err(usage("a_step must be positive and a_hi >= a_lo"));
    }
    let report = univariate_report(&cfg).map_err(anyhow::Error::from)?;

    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a UnivariateReport,
        /// `(100 a² + 1)⁻¹` at the exact ML slope, as the closed form is usually quoted.
        stated_formula_var_at_ml: f64,
    }
    let a = report.ml_slope_exact;
    let mut out = OutDir::create(&ctx.out)?;
    out.json(
        "univariate.json",
        &Out {
            report: &report,
            stated_formula_var_at_ml: 1.0 / (100.0 * a * a + 1.0),
        },
    )?;
    let rows: Vec<Vec<String>> = report
        .table
        .iter()
        .map(|r| {
            vec![
                num(r.a),
                num(r.expected_log_marginal),
                num(r.expected_elbo),
                num(r.shared_q_var),
            ]
        })
        .collect();
    out.csv(
        "univariate_slopes.csv",
        &["a", "expected_log_marginal", "expected_elbo", "shared_q_var"],
        &rows,
    )?;

    let mut header = vec!["z".to_string(), "prior".into(), "shared_q_at_ml".into()];
    header.extend(report.posterior_xs.iter().map(|x| format!("posterior_x={}", num(*x))));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .density_grid
        .iter()
        .map(|r| {
            let mut row = vec![num(r.z), num(r.prior), num(r.shared_q_at_ml)];
            row.extend(r.true_posteriors_at_ml.iter().map(|v| num(*v)));
            row
        })
        .collect();
    out.csv("univariate_density.csv", &header, &rows)?;
    out.finish("demo-univariate", ctx.seed())?;
    Ok(())
}

pub fn demo_bimodal(ctx: &Context) -> Result<(), Failure> {
    let cfg: BimodalConfig = load_or_default(ctx.config_path())?;
    if cfg.scenarios.is_empty() {
        return Err(usage("bimodal config needs at least one scenario"));
    }
    let report = bimodal_report(&cfg, ctx.seed()).map_err(anyhow::Error::from)?;
    let mut out = OutDir::create(&ctx.out)?;
    let mut summary = Vec::new();
    for s in &report.scenarios {
        let zs: Vec<f64> = s.density_grid.iter().map(|r| r.z).collect();
        let k = s.density_grid.first().map_or(0, |r| r.full_posteriors.len());
        let mut masses = serde_json::Map::new();
        for i in 0..k {
            masses.insert(
                format!("full_{i}"),
                grid_mass(&zs, s.density_grid.iter().map(|r| r.full_posteriors[i])).into(),
            );
        }
        masses.insert(
            "marginal".into(),
            grid_mass(&zs, s.density_grid.iter().map(|r| r.marginal_posterior)).into(),
        );
        masses.insert(
            "shared".into(),
            grid_mass(&zs, s.density_grid.iter().map(|r| r.shared_posterior)).into(),
        );
        masses.insert(
            "fitted".into(),
            grid_mass(&zs, s.density_grid.iter().map(|r| r.fitted_marginal)).into(),
        );

        let mut v = serde_json::to_value(s).map_err(anyhow::Error::from)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("density_grid");
            o.insert("grid_mass".into(), masses.into());
            o.insert("density_file".into(), format!("bimodal_density_{}.csv", s.name).into());
        }
        summary.push(v);

        let mut header: Vec<String> = vec!["z".into()];
        header.extend((0..k).map(|i| format!("full_{i}")));
        header.extend(["marginal", "shared", "fitted"].map(String::from));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = s
            .density_grid
            .iter()
            .map(|r| {
                let mut row = vec![num(r.z)];
                row.extend(r.full_posteriors.iter().map(|v| num(*v)));
                row.extend([
                    num(r.marginal_posterior),
                    num(r.shared_posterior),
                    num(r.fitted_marginal),
                ]);
                row
            })
            .collect();
        out.csv(&format!("bimodal_density_{}.csv", s.name), &header, &rows)?;
    }
    out.json("bimodal.json", &serde_json::json!({ "scenarios": summary }))?;
    out.finish("demo-bimodal", ctx.seed())?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GapLgssmConfig {
    model: LgssmParams,
    process_scales: Vec<f64>,
    observation_scales: Vec<f64>,
    /// Sequences for the simulation cross-check; 0 skips it.
    monte_carlo_sequences: usize,
}

impl Default for GapLgssmConfig {
    fn default() -> Self {
        Self {
            model: LgssmParams::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 10).expect("valid default model"),
            process_scales: vec![1.0, 0.1, 0.01, 0.001, 0.0],
            observation_scales: vec![1.0, 0.1, 0.01, 0.001, 0.0],
            monte_carlo_sequences: 0,
        }
    }
}

pub fn gap_lgssm(ctx: &Context) -> Result<(), Failure> {
    let cfg: GapLgssmConfig = load_or_default(ctx.config_path())?;
    if cfg
        .process_scales
        .iter()
        .chain(&cfg.observation_scales)
        .any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(usage("noise scales must be finite and non-negative"));
    }
    let p = &cfg.model;
    let table = lgssm_conditioning_gap(p).map_err(anyhow::Error::from)?;
    let mc = match cfg.monte_carlo_sequences {
        0 => None,
        n => Some(
            conditional_gap_monte_carlo(p, n, &Rng::with_stream(ctx.seed(), streams::EVAL))
                .map_err(anyhow::Error::from)?,
        ),
    };
    let process = gap_noise_sweep(p, NoiseKind::Process, &cfg.process_scales).map_err(anyhow::Error::from)?;
    let observation =
        gap_noise_sweep(p, NoiseKind::Observation, &cfg.observation_scales).map_err(anyhow::Error::from)?;

    let mut out = OutDir::create(&ctx.out)?;
    let mut header = vec!["t", "gap"];
    if mc.is_some() {
        header.push("monte_carlo_gap");
    }
    let rows: Vec<Vec<String>> = table
        .per_step
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut r = vec![(i + 1).to_string(), num(*g)];
            if let Some(m) = &mc {
                r.push(num(m.per_step[i]));
            }
            r
        })
        .collect();
    out.csv("gap_per_step.csv", &header, &rows)?;
    let sweep_rows: Vec<Vec<String>> = process
        .iter()
        .map(|r| ("process", r))
        .chain(observation.iter().map(|r| ("observation", r)))
        .map(|(k, r)| vec![k.to_string(), num(r.scale), num(r.total_gap)])
        .collect();
    out.csv("gap_sweep.csv", &["noise", "scale", "total_gap"], &sweep_rows)?;
    out.json(
        "gap_lgssm.json",
        &serde_json::json!({
            "model": p,
            "gap": table,
            "monte_carlo": mc,
            "sweep": { "process": process, "observation": observation },
        }),
    )?;
    out.finish("gap-lgssm", ctx.seed())?;
    Ok(())
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec {
        horizon: 20,
        n_train: 2000,
        n_val: 200,
        n_test: 200,
        seed: 0,
        generator: GeneratorSpec::Branching(BranchingParams::default()),
    }
}

pub fn gen_data(ctx: &Context) -> Result<(), Failure> {
    let mut spec = match ctx.config_path() {
        Some(p) => load_required::<DatasetSpec>(Some(p), "gen-data")?,
        None => default_dataset(),
    };
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let splits = spec.generate().map_err(anyhow::Error::from)?;
    let mut out = OutDir::create(&ctx.out)?;
    let mut labels = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let items = splits.get(split);
        let seqs: Vec<Sequence> = items.iter().map(|l| l.sequence.clone()).collect();
        out.text(
            &format!("{}.jsonl", split.name()),
            &to_jsonl(&seqs).map_err(anyhow::Error::from)?,
        )?;
        labels.extend(items.iter().enumerate().map(|(i, l)| {
            vec![
                split.name().to_string(),
                i.to_string(),
                l.label.to_string(),
                l.event_step.map_or(String::new(), |s| s.to_string()),
            ]
        }));
    }
    out.csv("labels.csv", &["split", "index", "label", "event_step"], &labels)?;
    out.json("dataset.json", &spec)?;
    out.finish("gen-data", spec.seed)?;
    Ok(())
}

fn read_data(path: &Path, what: &str) -> Result<Vec<Sequence>> {
    if !path.exists() {
        bail!("{what} file {} does not exist", path.display());
    }
    let data = read_jsonl(path).with_context(|| format!("cannot read {what} file {}", path.display()))?;
    if data.is_empty() {
        bail!("{what} file {} holds no sequences", path.display());
    }
    Ok(data)
}

fn read_model(path: &Path) -> Result<VssmModel, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(anyhow!("cannot read model config {}: {e}", path.display())))?;
    let cfg: VssmConfig = parse(&text, &path.display().to_string())?;
    VssmModel::new(cfg).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Checkpoint parameters, or a seeded initialisation when there is none.
fn model_params(model: &VssmModel, checkpoint: Option<&Path>, seed: u64) -> Result<ParamStore> {
    let store = match checkpoint {
        Some(p) => {
            if !p.exists() {
                bail!("checkpoint {} does not exist", p.display());
            }
            ParamStore::load(p).with_context(|| format!("cannot load checkpoint {}", p.display()))?
        }
        None => model.init_params(&mut Rng::with_stream(seed, streams::INIT)),
    };
    model
        .check_params(&store)
        .context("checkpoint does not fit the model config")?;
    Ok(store)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    model: VssmConfig,
    train_data: PathBuf,
    #[serde(default)]
    val_data: Option<PathBuf>,
}

pub fn train(ctx: &Context) -> Result<(), Failure> {
    let cfg: TrainConfig = load_required(ctx.config_path(), "train")?;
    let model = VssmModel::new(cfg.model.clone()).map_err(|e| usage(format!("model: {e}")))?;
    let seed = ctx.seed();
    let data = read_data(&ctx.resolve(&cfg.train_data), "training data")?;
    let val = cfg
        .val_data
        .as_ref()
        .map(|p| read_data(&ctx.resolve(p), "validation data"))
        .transpose()?;
    let init = model.init_params(&mut Rng::with_stream(seed, streams::INIT));
    let outcome = train_model(&model, init, &data, val.as_deref(), seed).map_err(anyhow::Error::from)?;

    let mut out = OutDir::create(&ctx.out)?;
    out.text(
        "checkpoint.json",
        &(outcome.params.to_json().map_err(anyhow::Error::from)? + "\n"),
    )?;
    out.json("model.json", &cfg.model)?;
    let log: Vec<Vec<String>> = outcome
        .log
        .iter()
        .map(|r| vec![r.step.to_string(), num(r.elbo), num(r.recon), num(r.kl)])
        .collect();
    out.csv("train_log.csv", &["step", "elbo", "recon", "kl"], &log)?;
    let vrows: Vec<Vec<String>> = outcome
        .validation
        .iter()
        .map(|r| vec![r.step.to_string(), num(r.elbo), num(r.elbo_std), num(r.elbo_per_step)])
        .collect();
    out.csv("validation.csv", &["step", "elbo", "elbo_std", "elbo_per_step"], &vrows)?;
    out.json(
        "summary.json",
        &serde_json::json!({
            "mode": cfg.model.conditioning.name(),
            "steps_completed": outcome.steps_completed,
            "aborted": outcome.aborted,
            "final_train": outcome.log.last(),
            "final_validation": outcome.validation.last(),
        }),
    )?;
    out.finish("train", seed)?;
    if let Some(reason) = outcome.aborted {
        return Err(Failure::Runtime(anyhow!(
            "training aborted after {} steps: {reason}; last good parameters saved to {}",
            outcome.steps_completed,
            ctx.out.join("checkpoint.json").display()
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalModel {
    /// Row label; defaults to the conditioning mode.
    #[serde(default)]
    name: Option<String>,
    /// Model config as written by `train` (`model.json`).
    model: PathBuf,
    /// Omit to evaluate a freshly initialised model.
    #[serde(default)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSplit {
    name: String,
    data: PathBuf,
}

fn default_eval_samples() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    models: Vec<EvalModel>,
    splits: Vec<EvalSplit>,
    #[serde(default = "default_eval_samples")]
    n_samples: usize,
}

pub fn eval_elbo(ctx: &Context) -> Result<(), Failure> {
    let cfg: EvalConfig = load_required(ctx.config_path(), "eval-elbo")?;
    if cfg.models.is_empty() || cfg.splits.is_empty() || cfg.n_samples == 0 {
        return Err(usage(
            "eval-elbo needs at least one model, one split and n_samples >= 1",
        ));
    }
    let seed = ctx.seed();
    let splits: Vec<(String, Vec<Sequence>)> = cfg
        .splits
        .iter()
        .map(|s| {
            Ok((
                s.name.clone(),
                read_data(&ctx.resolve(&s.data), &format!("split `{}`", s.name))?,
            ))
        })
        .collect::<Result<_>>()?;
    let rng = Rng::with_stream(seed, streams::EVAL);

    let mut long = Vec::new();
    let mut wide = Vec::new();
    let mut details = Vec::new();
    for entry in &cfg.models {
        let model = read_model(&ctx.resolve(&entry.model))?;
        let checkpoint = entry.checkpoint.as_ref().map(|p| ctx.resolve(p));
        let store = model_params(&model, checkpoint.as_deref(), seed)?;
        let mode = model.config().conditioning.name();
        let label = entry.name.clone().unwrap_or_else(|| mode.to_string());
        let mut row = vec![label.clone(), mode.to_string()];
        for (name, data) in &splits {
            let s = evaluate_elbo(&model, &Amortized, &store, data, cfg.n_samples, &rng)
                .with_context(|| format!("evaluating `{label}` on split `{name}`"))?;
            long.push(vec![
                label.clone(),
                mode.to_string(),
                name.clone(),
                data.len().to_string(),
                s.n_posterior_samples.to_string(),
                num(s.mean),
                num(s.std),
                num(s.mean_per_step),
                num(s.recon),
                num(s.kl),
            ]);
            row.extend([num(s.mean), num(s.std), num(s.mean_per_step)]);
            details.push(serde_json::json!({ "model": label, "mode": mode, "split": name, "summary": s }));
        }
        wide.push(row);
    }

    let mut out = OutDir::create(&ctx.out)?;
    let mut header = vec!["model".to_string(), "mode".into()];
    for (name, _) in &splits {
        header.extend([
            format!("{name}_elbo"),
            format!("{name}_std"),
            format!("{name}_elbo_per_step"),
        ]);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("elbo_table.csv", &header, &wide)?;
    out.csv(
        "elbo_long.csv",
        &[
            "model",
            "mode",
            "split",
            "n_sequences",
            "n_samples",
            "elbo_mean",
            "elbo_std",
            "elbo_per_step",
            "recon",
            "kl",
        ],
        &long,
    )?;
    out.json("eval_elbo.json", &details)?;
    out.finish("eval-elbo", seed)?;
    Ok(())
}

fn default_particles() -> usize {
    1000
}

fn default_futures() -> usize {
    100
}

fn default_grid_points() -> usize {
    201
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrefixConfig {
    model: PathBuf,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    data: PathBuf,
    prefix_len: usize,
    #[serde(default = "default_particles")]
    n_particles: usize,
    #[serde(default = "default_futures")]
    n_futures: usize,
    #[serde(default = "default_grid_points")]
    grid_points: usize,
    /// Only the first this many sequences; all when absent.
    #[serde(default)]
    max_sequences: Option<usize>,
}

#[derive(Serialize)]
struct SequenceFutures {
    sequence: usize,
    truth_final: Vec<f64>,
    filter_log_likelihood: f64,
    futures: Vec<Vec<Vec<f64>>>,
}

pub fn prefix_sample(ctx: &Context) -> Result<(), Failure> {
    let cfg: PrefixConfig = load_required(ctx.config_path(), "prefix-sample")?;
    if cfg.prefix_len == 0 || cfg.n_particles < 2 || cfg.grid_points < 2 {
        return Err(usage(
            "prefix-sample needs prefix_len >= 1, n_particles >= 2 and grid_points >= 2",
        ));
    }
    let seed = ctx.seed();
    let model = read_model(&ctx.resolve(&cfg.model))?;
    let checkpoint = cfg.checkpoint.as_ref().map(|p| ctx.resolve(p));
    let store = model_params(&model, checkpoint.as_deref(), seed)?;
    let mut data = read_data(&ctx.resolve(&cfg.data), "data")?;
    if let Some(m) = cfg.max_sequences {
        data.truncate(m);
    }
    let ss = VssmStateSpace::new(&model, &store).map_err(anyhow::Error::from)?;
    let base = Rng::with_stream(seed, streams::SMC);

    let mut futures = Vec::with_capacity(data.len());
    let mut ppc_rows = Vec::new();
    let mut grid_rows = Vec::new();
    let mut scores = Vec::new();
    for (i, seq) in data.iter().enumerate() {
        let t_len = seq.x.len();
        if t_len <= cfg.prefix_len {
            return Err(Failure::Runtime(anyhow!(
                "sequence {i} has length {t_len}, not longer than prefix_len {}",
                cfg.prefix_len
            )));
        }
        let conds = (!seq.u.is_empty()).then_some(seq.u.as_slice());
        let r = base.fork(i as u64);
        let filt = bootstrap_filter(&ss, &seq.x[..cfg.prefix_len], conds, cfg.n_particles, &r.fork(0))
            .with_context(|| format!("filtering sequence {i}"))?;
        let set = &filt.sets[cfg.prefix_len - 1];
        let f = smc::prefix_sample(&ss, set, cfg.prefix_len, t_len, conds, cfg.n_futures, &r.fork(1))
            .with_context(|| format!("sampling futures for sequence {i}"))?;
        let truth = &seq.x[t_len - 1];
        let ppc =
            ppc_final_density(&f.finals(), truth, cfg.grid_points).with_context(|| format!("scoring sequence {i}"))?;
        let mut row = vec![i.to_string(), num(ppc.log_density), num(filt.log_likelihood)];
        row.extend(ppc.bandwidths.iter().map(|b| num(*b)));
        ppc_rows.push(row);
        for (d, grid) in ppc.grid.iter().enumerate() {
            grid_rows.extend(
                grid.iter()
                    .map(|g| vec![i.to_string(), d.to_string(), num(g.x), num(g.density)]),
            );
        }
        scores.push(ppc.log_density);
        futures.push(SequenceFutures {
            sequence: i,
            truth_final: truth.clone(),
            filter_log_likelihood: filt.log_likelihood,
            futures: f.observations,
        });
    }

    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };

    let mut out = OutDir::create(&ctx.out)?;
    out.json("futures.json", &futures)?;
    let mut header = vec![
        "sequence".to_string(),
        "log_density".into(),
        "filter_log_likelihood".into(),
    ];
    header.extend((0..model.config().n_obs).map(|d| format!("bandwidth_{d}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("ppc.csv", &header, &ppc_rows)?;
    out.csv("ppc_grid.csv", &["sequence", "dim", "x", "density"], &grid_rows)?;
    out.json(
        "summary.json",
        &serde_json::json!({
            "n_sequences": scores.len(),
            "prefix_len": cfg.prefix_len,
            "n_particles": cfg.n_particles,
            "n_futures": cfg.n_futures,
            "mode": model.config().conditioning.name(),
            "ppc_log_density": { "mean": mean, "median": median, "std": std },
        }),
    )?;
    out.finish("prefix-sample", seed)?;
    Ok(())
}

/// Parse `text` as the config of `command` (`"model"` for a model config)
/// without running anything. Errors carry the usage message.
pub fn check_config(command: &str, text: &str) -> Result<(), String> {
    fn go<T: serde::de::DeserializeOwned>(text: &str) -> Result<(), String> {
        parse::<T>(text, "config").map(drop).map_err(|e| format!("{e:?}"))
    }
    match command {
        "demo-univariate" => go::<UnivariateConfig>(text),
        "demo-bimodal" => go::<BimodalConfig>(text),
        "gap-lgssm" => go::<GapLgssmConfig>(text),
        "gen-data" => go::<DatasetSpec>(text),
        "train" => go::<TrainConfig>(text),
        "eval-elbo" => go::<EvalConfig>(text),
        "prefix-sample" => go::<PrefixConfig>(text),
        "model" => {
            let cfg = parse::<VssmConfig>(text, "config").map_err(|e| format!("{e:?}"))?;
            VssmModel::new(cfg).map(drop).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown command {other:?}")),
    }
}
