//! Report builders for the two analytic demonstrations.

use serde::{Deserialize, Serialize};

use super::univariate::{ml_vs_elbo_argmax, slope_grid, SlopeRow, UnivariateModel};
use super::{conditioning_gap, fit_gaussian_reverse_kl, marginal_posterior, ConditioningScenario, FitConfig, GapError};
use crate::distributions::{normal_pdf, DiagGaussian};
use crate::quadrature::GaussHermite;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let h = (self.hi - self.lo) / (n - 1) as f64;
        (0..n).map(|i| self.lo + i as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points.max(2) - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub weights: Vec<f64>,
    /// Initial mean of the reverse-KL fit.
    #[serde(default = "default_fit_init")]
    pub fit_init_mean: f64,
}

fn default_fit_init() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BimodalConfig {
    pub scenarios: Vec<ScenarioSpec>,
    pub grid: GridSpec,
    pub fit_steps: usize,
    pub fit_learning_rate: f64,
    pub fit_samples_per_step: usize,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![
                ScenarioSpec {
                    name: "separated".into(),
                    means: vec![-2.0, 2.0],
                    vars: vec![0.1, 0.1],
                    weights: vec![0.5, 0.5],
                    fit_init_mean: 0.3,
                },
                ScenarioSpec {
                    name: "overlapping".into(),
                    means: vec![-0.5, 0.5],
                    vars: vec![1.0, 1.0],
                    weights: vec![0.5, 0.5],
                    fit_init_mean: 0.3,
                },
            ],
            grid: GridSpec {
                lo: -8.0,
                hi: 8.0,
                points: 1601,
            },
            fit_steps: 3000,
            fit_learning_rate: 0.02,
            fit_samples_per_step: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub z: f64,
    pub full_posteriors: Vec<f64>,
    pub marginal_posterior: f64,
    pub shared_posterior: f64,
    pub fitted_marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    /// Component values are illustrative choices, not measured data.
    pub provenance: &'static str,
    pub scenario: ConditioningScenario,
    pub shared_posterior: DiagGaussian,
    pub log_z: f64,
    pub gap: f64,
    pub per_condition_kl: Vec<f64>,
    pub mixture_mean: f64,
    pub mixture_var: f64,
    /// Reverse-KL Gaussian fit to the marginal posterior.
    pub fitted_marginal: DiagGaussian,
    /// Expected KL of the fitted marginal to the full posteriors.
    pub fitted_expected_kl: f64,
    pub density_grid: Vec<DensityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BimodalReport {
    pub scenarios: Vec<ScenarioReport>,
}

pub fn bimodal_report(config: &BimodalConfig, seed: u64) -> Result<BimodalReport, GapError> {
    let mut scenarios = Vec::with_capacity(config.scenarios.len());
    for (i, spec) in config.scenarios.iter().enumerate() {
        if spec.means.len() != spec.vars.len() {
            return Err(GapError::WeightCount {
                posteriors: spec.means.len(),
                weights: spec.vars.len(),
            });
        }
        let posteriors = spec
            .means
            .iter()
            .zip(&spec.vars)
            .map(|(&m, &v)| DiagGaussian::scalar(m, v))
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = ConditioningScenario::new(posteriors, spec.weights.clone())?;
        let report = conditioning_gap(&scenario)?;
        let mixture = marginal_posterior(&scenario)?;
        let (mm, mv) = mixture.moments();
        let mut rng = Rng::with_stream(seed, 100 + i as u64);
        let init = DiagGaussian::scalar(spec.fit_init_mean, 1.0)?;
        let fitted = fit_gaussian_reverse_kl(
            &mixture,
            &init,
            FitConfig {
                steps: config.fit_steps,
                learning_rate: config.fit_learning_rate,
                samples_per_step: config.fit_samples_per_step,
            },
            &mut rng,
        )?;
        let fitted_expected_kl = scenario.expected_kl(&fitted)?;
        let w = &report.shared_posterior;
        let density_grid = config
            .grid
            .values()
            .into_iter()
            .map(|z| DensityRow {
                z,
                full_posteriors: scenario
                    .full_posteriors()
                    .iter()
                    .map(|p| normal_pdf(z, p.mean()[0], p.var()[0]))
                    .collect(),
                marginal_posterior: mixture.density_1d(z),
                shared_posterior: normal_pdf(z, w.mean()[0], w.var()[0]),
                fitted_marginal: normal_pdf(z, fitted.mean()[0], fitted.var()[0]),
            })
            .collect();
        scenarios.push(ScenarioReport {
            name: spec.name.clone(),
            provenance: "illustrative reconstruction",
            scenario,
            shared_posterior: report.shared_posterior.clone(),
            log_z: report.log_z,
            gap: report.gap,
            per_condition_kl: report.per_condition_kl,
            mixture_mean: mm[0],
            mixture_var: mv[0],
            fitted_marginal: fitted,
            fitted_expected_kl,
            density_grid,
        });
    }
    Ok(BimodalReport { scenarios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnivariateConfig {
    pub a_lo: f64,
    pub a_hi: f64,
    pub a_step: f64,
    pub quadrature_order: usize,
    pub density_grid: GridSpec,
    /// Observations at which the true posterior density is tabulated.
    pub posterior_xs: Vec<f64>,
}

impl Default for UnivariateConfig {
    fn default() -> Self {
        Self {
            a_lo: 0.0,
            a_hi: 2.0,
            a_step: 0.01,
            quadrature_order: 40,
            density_grid: GridSpec {
                lo: -4.0,
                hi: 4.0,
                points: 801,
            },
            posterior_xs: vec![-1.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnivariateDensityRow {
    pub z: f64,
    pub prior: f64,
    pub shared_q_at_ml: f64,
    pub true_posteriors_at_ml: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnivariateReport {
    pub ml_slope_exact: f64,
    pub ml_argmax: f64,
    pub elbo_argmax: f64,
    pub grid_step: f64,
    pub elbo_argmax_differs_from_ml: bool,
    pub shared_q_var_at_ml: f64,
    pub true_posterior_var_at_ml: f64,
    pub table: Vec<SlopeRow>,
    pub posterior_xs: Vec<f64>,
    pub density_grid: Vec<UnivariateDensityRow>,
}

pub fn univariate_report(config: &UnivariateConfig) -> Result<UnivariateReport, GapError> {
    let gh = GaussHermite::new(config.quadrature_order.max(2));
    let r = ml_vs_elbo_argmax(&slope_grid(config.a_lo, config.a_hi, config.a_step), &gh)?;
    let exact = UnivariateModel::new(UnivariateModel::ml_slope())?;
    let shared = exact.optimal_shared_q();
    let posteriors: Vec<DiagGaussian> = config.posterior_xs.iter().map(|&x| exact.true_posterior(x)).collect();
    let density_grid = config
        .density_grid
        .values()
        .into_iter()
        .map(|z| UnivariateDensityRow {
            z,
            prior: normal_pdf(z, 0.0, 1.0),
            shared_q_at_ml: normal_pdf(z, 0.0, shared.var()[0]),
            true_posteriors_at_ml: posteriors
                .iter()
                .map(|p| normal_pdf(z, p.mean()[0], p.var()[0]))
                .collect(),
        })
        .collect();
    Ok(UnivariateReport {
        ml_slope_exact: UnivariateModel::ml_slope(),
        ml_argmax: r.ml_argmax,
        elbo_argmax: r.elbo_argmax,
        grid_step: r.grid_step,
        elbo_argmax_differs_from_ml: r.differ,
        shared_q_var_at_ml: shared.var()[0],
        true_posterior_var_at_ml: exact.true_posterior(0.0).var()[0],
        table: r.table,
        posterior_xs: config.posterior_xs.clone(),
        density_grid,
    })
}
