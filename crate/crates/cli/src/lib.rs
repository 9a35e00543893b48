//! `condgap`: one entry point for the demos, data generation, training,
//! evaluation and prefix sampling.
//!
//! Exit codes: 0 ok, 1 usage (bad flags or config), 2 runtime failure.

mod commands;
mod config;
mod output;

pub use commands::check_config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::Failure;

#[derive(Debug, Parser)]
#[command(name = "condgap", version, about = "Conditioning-gap laboratory")]
struct Cli {
    /// JSON configuration for the subcommand; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random stream the subcommand uses.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Linear-Gaussian slope example: ML vs expected-ELBO argmax, densities.
    ///
    /// Config (optional): a_lo, a_hi, a_step, quadrature_order,
    /// density_grid {lo, hi, points}, posterior_xs.
    /// Writes univariate.json, univariate_slopes.csv, univariate_density.csv.
    DemoUnivariate,
    /// Two-component scenarios: shared posterior, mixture, reverse-KL fit.
    ///
    /// Config (optional): scenarios [{name, means, vars, weights, fit_init_mean}],
    /// grid {lo, hi, points}, fit_steps, fit_learning_rate, fit_samples_per_step.
    /// Writes bimodal.json and bimodal_density_<name>.csv per scenario.
    DemoBimodal,
    /// Closed-form LGSSM gap per step and noise sweeps.
    ///
    /// Config (optional): model {a, q, h, r, m0, p0, horizon}, process_scales,
    /// observation_scales, monte_carlo_sequences (0 skips the simulation check).
    /// Writes gap_per_step.csv, gap_sweep.csv, gap_lgssm.json.
    GapLgssm,
    /// Generate train/val/test JSON-lines files from a dataset spec.
    ///
    /// Config (optional): {T, n_train, n_val, n_test, seed, generator {kind, ...}}
    /// with kind one of branching, traffic_like, rowwise_grid, lgssm_export.
    /// --seed overrides the spec seed. Writes <split>.jsonl, labels.csv, dataset.json.
    GenData,
    /// Train a state-space model; writes logs and a checkpoint.
    ///
    /// Config (required): model {VSSM config}, train_data, val_data (optional).
    /// Paths are relative to the config file. Writes checkpoint.json, model.json,
    /// train_log.csv, validation.csv, summary.json. A non-finite loss stops
    /// training, saves the last good parameters and exits with code 2.
    Train,
    /// ELBO table over models and data splits.
    ///
    /// Config (required): models [{name, model, checkpoint}], splits [{name, data}],
    /// n_samples (default 10 posterior samples per sequence). A model without
    /// a checkpoint is evaluated at its seeded initialisation.
    /// Writes elbo_table.csv (mode x split), elbo_long.csv, eval_elbo.json.
    EvalElbo,
    /// Particle-filter prefixes, sample futures and score the final step.
    ///
    /// Config (required): model, checkpoint, data, prefix_len, n_particles
    /// (default 1000), n_futures (default 100), grid_points (default 201),
    /// max_sequences. Writes futures.json, ppc.csv, ppc_grid.csv, summary.json.
    PrefixSample,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    config::init_threads()?;
    let ctx = commands::Context {
        config: cli.config.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::DemoUnivariate => commands::demo_univariate(&ctx),
        Command::DemoBimodal => commands::demo_bimodal(&ctx),
        Command::GapLgssm => commands::gap_lgssm(&ctx),
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::EvalElbo => commands::eval_elbo(&ctx),
        Command::PrefixSample => commands::prefix_sample(&ctx),
    }
}
