use proptest::prelude::*;

use super::*;
use crate::lgssm::{kalman_filter, lgssm_sample, LgssmParams};
use crate::rng::Rng;
use crate::vssm::exact::{linear_gaussian_config, linear_gaussian_params};
use crate::vssm::VssmModel;

fn counts(idx: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    idx.iter().for_each(|&i| c[i] += 1);
    c
}

#[test]
fn resampling_examples() {
    let mut rng = Rng::new(0);
    let lw = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
    assert_eq!(systematic_resample(&lw, &mut rng), vec![0, 0, 0]);
    for _ in 0..20 {
        assert_eq!(systematic_resample(&[0.3; 4], &mut rng), vec![0, 1, 2, 3]);
    }
    let lw: Vec<f64> = [0.5f64, 0.25, 0.25].iter().map(|w| w.ln()).collect();
    let mut tot = [0.0; 3];
    for _ in 0..100 {
        let c = counts(&systematic_resample_n(&lw, 10_000, &mut rng), 3);
        for (t, n) in tot.iter_mut().zip(c) {
            *t += n as f64 / 100.0;
        }
    }
    for (m, e) in tot.iter().zip([5000.0, 2500.0, 2500.0]) {
        assert!((m - e).abs() <= 1.0, "{m} vs {e}");
    }
}

#[test]
fn particle_set_normalises() {
    let s = ParticleSet::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![5.0, 5.0, f64::NEG_INFINITY]).unwrap();
    assert!(logsumexp(&s.log_weights).abs() < 1e-12);
    assert!((s.ess - 2.0).abs() < 1e-12);
    assert!((s.mean()[0] - 0.5).abs() < 1e-12);
    assert!((s.var()[0] - 0.25).abs() < 1e-12);
    assert!(ParticleSet::new(vec![vec![0.0]], vec![f64::NEG_INFINITY]).is_err());
    assert!(ParticleSet::new(vec![vec![0.0]], vec![f64::NAN]).is_err());
    let r = s.resample(&mut Rng::new(1));
    assert_eq!(r.ess, 3.0);
    assert!(r.particles.iter().all(|p| p[0] < 2.0));
}

fn model_1d(t: usize) -> LgssmParams {
    LgssmParams::scalar(0.9, 0.4, 1.0, 0.5, 0.0, 1.0, t).unwrap()
}

#[test]
fn filter_matches_kalman_within_monte_carlo_error() {
    let lg = model_1d(8);
    let ss = LgssmStateSpace::new(&lg).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(3));
    let kf = kalman_filter(&lg, &tr.observations).unwrap();
    let reps = 20;
    let runs: Vec<FilterOutput> = (0..reps)
        .map(|r| bootstrap_filter(&ss, &tr.observations, None, 10_000, &Rng::with_stream(r, 3)).unwrap())
        .collect();
    for t in 0..8 {
        let exact = (kf.filtered[t].mean[0], kf.filtered[t].cov[(0, 0)]);
        for (k, e) in [exact.0, exact.1].into_iter().enumerate() {
            let est: Vec<f64> = runs
                .iter()
                .map(|o| {
                    if k == 0 {
                        o.sets[t].mean()[0]
                    } else {
                        o.sets[t].var()[0]
                    }
                })
                .collect();
            let m = est.iter().sum::<f64>() / reps as f64;
            let sd = (est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            assert!(
                (m - e).abs() < 3.0 * sd / (reps as f64).sqrt(),
                "t={t} k={k}: {m} vs {e} (sd {sd})"
            );
            // each single run is within 3 of its own standard errors as well
            assert!(est.iter().filter(|v| (*v - e).abs() > 3.0 * sd).count() <= 1);
        }
    }
    let ll = runs.iter().map(|o| o.log_likelihood).sum::<f64>() / reps as f64;
    assert!((ll - kf.log_likelihood).abs() < 0.05, "{ll} vs {}", kf.log_likelihood);
}

#[test]
fn filter_error_shrinks_with_particles() {
    let lg = model_1d(5);
    let ss = LgssmStateSpace::new(&lg).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(8));
    let kf = kalman_filter(&lg, &tr.observations).unwrap();
    let exact = kf.filtered[4].mean[0];
    let median_err = |n: usize| {
        let mut e: Vec<f64> = (0..20)
            .map(|s| {
                let o = bootstrap_filter(&ss, &tr.observations, None, n, &Rng::with_stream(s, 9)).unwrap();
                (o.sets[4].mean()[0] - exact).abs()
            })
            .collect();
        e.sort_by(f64::total_cmp);
        0.5 * (e[9] + e[10])
    };
    let errs: Vec<f64> = [100, 1000, 10_000].into_iter().map(median_err).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn near_perfect_observations_collapse_onto_truth() {
    let lg = LgssmParams::scalar(1.0, 0.0, 1.0, 1e-6, 0.0, 1.0, 4).unwrap();
    let ss = LgssmStateSpace::new(&lg).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(1));
    let o = bootstrap_filter(&ss, &tr.observations, None, 5000, &Rng::new(2)).unwrap();
    let last = o.sets.last().unwrap();
    assert!((last.mean()[0] - tr.latents[3][0]).abs() < 1e-2);
    assert!(last.var()[0] < 1e-4);
}

#[test]
fn filter_is_seeded_and_thread_independent() {
    let lg = model_1d(6);
    let ss = LgssmStateSpace::new(&lg).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(4));
    let a = bootstrap_filter(&ss, &tr.observations, None, 500, &Rng::new(5)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| bootstrap_filter(&ss, &tr.observations, None, 500, &Rng::new(5)).unwrap());
    assert_eq!(a, b);
    let c = bootstrap_filter(&ss, &tr.observations, None, 500, &Rng::new(6)).unwrap();
    assert_ne!(a, c);
}

/// Deterministic random walk with a box likelihood, for edge cases.
struct Boxed {
    half_width: f64,
}

impl StateSpace for Boxed {
    fn state_dim(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn sample_initial(&self, n: usize, _rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        Ok(vec![vec![0.0]; n])
    }
    fn propagate(&self, z: &[Vec<f64>], _u: Option<&[f64]>, _rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        Ok(z.iter().map(|z| vec![z[0] + 1.0]).collect())
    }
    fn log_likelihood(&self, z: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, SmcError> {
        Ok(z.iter()
            .map(|z| {
                if (z[0] - x[0]).abs() <= self.half_width {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }
    fn emit(&self, z: &[Vec<f64>], _rng: &Rng) -> Result<Vec<Vec<f64>>, SmcError> {
        Ok(z.to_vec())
    }
}

#[test]
fn degenerate_weights_report_the_step() {
    let m = Boxed { half_width: 0.5 };
    let obs = vec![vec![0.0], vec![1.0], vec![7.0]];
    assert!(matches!(
        bootstrap_filter(&m, &obs, None, 10, &Rng::new(0)),
        Err(SmcError::Degenerate { t: 3 })
    ));
    assert!(matches!(
        bootstrap_filter(&m, &obs, None, 1, &Rng::new(0)),
        Err(SmcError::TooFewParticles(1))
    ));
}

#[test]
fn noiseless_futures_are_identical() {
    let m = Boxed { half_width: 0.5 };
    let o = bootstrap_filter(&m, &[vec![0.0], vec![1.0]], None, 10, &Rng::new(0)).unwrap();
    let f = prefix_sample(&m, &o.sets[1], 2, 6, None, 40, &Rng::new(1)).unwrap();
    assert!(f.observations.iter().all(|x| *x == f.observations[0]));
    assert_eq!(f.observations[0], vec![vec![2.0], vec![3.0], vec![4.0], vec![5.0]]);
}

#[test]
fn futures_match_kalman_predictive() {
    let lg = LgssmParams::scalar(0.8, 0.3, 1.5, 0.2, 0.5, 0.6, 7).unwrap();
    let ss = LgssmStateSpace::new(&lg).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(11));
    let t = 3;
    let kf = kalman_filter(&lg.with_horizon(t).unwrap(), &tr.observations[..t]).unwrap();
    let (mut m, mut p) = (kf.filtered[t - 1].mean[0], kf.filtered[t - 1].cov[(0, 0)]);
    for _ in t..7 {
        m *= 0.8;
        p = 0.64 * p + 0.3;
    }
    let (pm, pv) = (1.5 * m, 2.25 * p + 0.2);

    // particles drawn from the exact filter belief isolate the forward sampler
    let mut rng = Rng::new(12);
    let n = 50_000;
    let set = ParticleSet::uniform(
        (0..n)
            .map(|_| vec![kf.filtered[t - 1].mean[0] + kf.filtered[t - 1].cov[(0, 0)].sqrt() * rng.normal()])
            .collect(),
    )
    .unwrap();
    let f = prefix_sample(&ss, &set, t, 7, None, n, &Rng::new(13)).unwrap();
    let xs: Vec<f64> = f.finals().iter().map(|x| x[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - pm).abs() < 4.0 * (pv / n as f64).sqrt(), "{mean} vs {pm}");
    assert!((var - pv).abs() < 4.0 * pv * (2.0 / n as f64).sqrt(), "{var} vs {pv}");

    let again = prefix_sample(&ss, &set, t, 7, None, 100, &Rng::new(13)).unwrap();
    assert_eq!(again, prefix_sample(&ss, &set, t, 7, None, 100, &Rng::new(13)).unwrap());
}

#[test]
fn kde_examples() {
    let mut rng = Rng::new(0);
    let truth = [0.0];
    let tight = ppc_final_density(&vec![vec![0.0]; 40], &truth, 11).unwrap();
    let spread: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal()]).collect();
    let loose = ppc_final_density(&spread, &truth, 11).unwrap();
    assert!(tight.log_density > loose.log_density + 5.0);
    let far = ppc_final_density(&spread, &[3.0], 11).unwrap();
    assert!(loose.log_density > far.log_density);
    assert!(ppc_final_density(&spread[..29], &truth, 11).is_err());

    let big: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.normal()]).collect();
    let d = ppc_final_density(&big, &truth, 5).unwrap();
    let expect = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((d.log_density.exp() - expect).abs() < 0.01);
}

#[test]
fn kde_grid_integrates_to_one() {
    let mut rng = Rng::new(3);
    let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), 2.0 * rng.normal()]).collect();
    let d = ppc_final_density(&xs, &[0.0, 0.0], 2001).unwrap();
    for g in &d.grid {
        let h = g[1].x - g[0].x;
        let mass: f64 = g.iter().map(|p| p.density).sum::<f64>() * h;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }
}

#[test]
fn linearised_vssm_filter_tracks_kalman() {
    let lg = model_1d(6);
    let model = VssmModel::new(linear_gaussian_config(&lg).unwrap()).unwrap();
    let store = linear_gaussian_params(&model, &lg, &mut Rng::new(0)).unwrap();
    let ss = VssmStateSpace::new(&model, &store).unwrap();
    let tr = lgssm_sample(&lg, &mut Rng::new(1));
    let kf = kalman_filter(&lg, &tr.observations).unwrap();
    let o = bootstrap_filter(&ss, &tr.observations, None, 20_000, &Rng::new(2)).unwrap();
    for (s, k) in o.sets.iter().zip(&kf.filtered) {
        let sd = k.cov[(0, 0)].sqrt();
        assert!((s.mean()[0] - k.mean[0]).abs() < 0.05 * sd.max(0.1));
        assert!((s.var()[0] / k.cov[(0, 0)] - 1.0).abs() < 0.05);
    }
    assert!((o.log_likelihood - kf.log_likelihood).abs() < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn systematic_counts_are_floor_or_ceil(
        w in prop::collection::vec(0.0f64..1.0, 1..30),
        seed in 0u64..10_000,
    ) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let total: f64 = w.iter().sum();
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let n = w.len();
        let c = counts(&systematic_resample(&lw, &mut Rng::new(seed)), n);
        for (ci, wi) in c.iter().zip(&w) {
            let e = n as f64 * wi / total;
            prop_assert!((*ci as f64 - e).abs() < 1.0 + 1e-9, "count {} expected {}", ci, e);
        }
    }

    #[test]
    fn resampling_preserves_weighted_means(
        w in prop::collection::vec(0.01f64..1.0, 2..40),
        f in prop::collection::vec(-5.0f64..5.0, 40),
        seed in 0u64..10_000,
    ) {
        let n = w.len();
        let particles: Vec<Vec<f64>> = f[..n].iter().map(|v| vec![*v]).collect();
        let set = ParticleSet::new(particles, w.iter().map(|v| v.ln()).collect()).unwrap();
        prop_assert!(set.ess >= 1.0 && set.ess <= n as f64);
        let target = set.mean()[0];
        // average over the uniform offset: exact expectation up to quadrature
        let trials = 400;
        let mut rng = Rng::new(seed);
        let avg = (0..trials).map(|_| set.resample(&mut rng).mean()[0]).sum::<f64>() / trials as f64;
        let bound: f64 = f[..n].iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        prop_assert!((avg - target).abs() <= bound * 4.0 / (trials as f64).sqrt() + 1e-9);
        let r = set.resample(&mut rng);
        prop_assert_eq!(r.ess, n as f64);
    }
}
