use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{symmetrize, GaussianBelief, LgssmError, LgssmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// `p(z_t | x_{1:t})`.
    pub filtered: Vec<GaussianBelief>,
    /// `p(z_t | x_{1:t-1})`.
    pub predicted: Vec<GaussianBelief>,
    /// `log p(x_{1:T})`.
    pub log_likelihood: f64,
}

fn check_obs(p: &LgssmParams, obs: &[Vec<f64>]) -> Result<(), LgssmError> {
    if obs.len() != p.horizon() {
        return Err(LgssmError::ObsLength {
            expected: p.horizon(),
            got: obs.len(),
        });
    }
    if let Some((t, x)) = obs.iter().enumerate().find(|(_, x)| x.len() != p.obs_dim()) {
        return Err(LgssmError::ObsDim {
            t: t + 1,
            expected: p.obs_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Predict/update recursion with a Joseph-form covariance update.
pub fn kalman_filter(p: &LgssmParams, obs: &[Vec<f64>]) -> Result<FilterResult, LgssmError> {
    check_obs(p, obs)?;
    filter_unchecked(p, obs)
}

/// Runs the filter on however many observations are given (≤ horizon not enforced).
pub(crate) fn filter_unchecked(p: &LgssmParams, obs: &[Vec<f64>]) -> Result<FilterResult, LgssmError> {
    let d = p.state_dim();
    let k = p.obs_dim();
    let (a, h, q, r) = (p.a(), p.h(), p.q(), p.r());
    let eye = DMatrix::<f64>::identity(d, d);
    let mut filtered = Vec::with_capacity(obs.len());
    let mut predicted = Vec::with_capacity(obs.len());
    let mut log_likelihood = 0.0;
    let mut m = p.m0().clone();
    let mut cov = p.p0();
    for (t, x) in obs.iter().enumerate() {
        m = a * &m;
        cov = a * &cov * a.transpose() + &q;
        symmetrize(&mut cov);
        predicted.push(GaussianBelief::new(m.clone(), cov.clone()));

        let x = DVector::from_column_slice(x);
        let innov = x - h * &m;
        let mut s = h * &cov * h.transpose() + &r;
        symmetrize(&mut s);
        let chol = s
            .clone()
            .cholesky()
            .ok_or(LgssmError::SingularInnovation { t: t + 1 })?;
        // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ.
        let gain = chol.solve(&(h * &cov)).transpose();
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let maha = innov.dot(&chol.solve(&innov));
        log_likelihood += -0.5 * (k as f64 * (2.0 * PI).ln() + logdet + maha);

        m += &gain * innov;
        let ikh = &eye - &gain * h;
        cov = &ikh * &cov * ikh.transpose() + &gain * &r * gain.transpose();
        symmetrize(&mut cov);
        filtered.push(GaussianBelief::new(m.clone(), cov.clone()));
    }
    Ok(FilterResult {
        filtered,
        predicted,
        log_likelihood,
    })
}

pub fn log_likelihood(p: &LgssmParams, obs: &[Vec<f64>]) -> Result<f64, LgssmError> {
    Ok(kalman_filter(p, obs)?.log_likelihood)
}

/// `M⁻¹ B` for symmetric PSD `M`, falling back to the pseudo-inverse when `M` is singular.
pub(crate) fn psd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.solve(b);
    }
    let eps = 1e-13 * m.amax().max(f64::MIN_POSITIVE);
    m.clone().pseudo_inverse(eps).expect("eps is non-negative") * b
}

/// Rauch–Tung–Striebel backward pass: `p(z_t | x_{1:T})`.
pub fn rts_smoother(p: &LgssmParams, f: &FilterResult) -> Vec<GaussianBelief> {
    let n = f.filtered.len();
    let mut out = f.filtered.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let fb = &f.filtered[t];
        let pred = &f.predicted[t + 1];
        // G = P_f Aᵀ P_pred⁻¹
        let gain = psd_solve(&pred.cov, &(p.a() * &fb.cov)).transpose();
        let next = &out[t + 1];
        let mean = &fb.mean + &gain * (&next.mean - &pred.mean);
        let mut cov = &fb.cov + &gain * (&next.cov - &pred.cov) * gain.transpose();
        symmetrize(&mut cov);
        out[t] = GaussianBelief::new(mean, cov);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lgssm::lgssm_sample;
    use crate::lgssm::oracle::{condition, joint_scalar};
    use crate::rng::Rng;

    fn bench(t: usize) -> LgssmParams {
        LgssmParams::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, t).unwrap()
    }

    #[test]
    fn single_step_by_hand() {
        // Predicted variance P0 + Q = 2, so the gain is 2/3.
        let f = kalman_filter(&bench(1), &[vec![1.0]]).unwrap();
        assert!((f.predicted[0].cov[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((f.filtered[0].mean[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((f.filtered[0].cov[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn perfect_observations_pin_the_state() {
        let p = LgssmParams::scalar(0.7, 1.0, 1.0, 1e-12, 0.0, 1.0, 8).unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(2));
        let f = kalman_filter(&p, &tr.observations).unwrap();
        for (b, x) in f.filtered.iter().zip(&tr.observations) {
            assert!((b.mean[0] - x[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_dynamics_shrink_covariance() {
        let a = DMatrix::identity(2, 2);
        let p = LgssmParams::new(
            a,
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::from_element(2, 0.3),
            DVector::zeros(2),
            DVector::from_element(2, 2.0),
            30,
        )
        .unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(3));
        let f = kalman_filter(&p, &tr.observations).unwrap();
        for w in f.filtered.windows(2) {
            let diff = &w[0].cov - &w[1].cov;
            assert!(diff.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
        }
        let last = &f.filtered[29];
        assert!((&last.mean - DVector::from_column_slice(&tr.latents[29])).norm() < 0.5);
        assert!(last.cov.trace() < 0.1);
    }

    #[test]
    fn filter_and_smoother_match_joint_conditioning() {
        let (a, q, h, r, m0, p0) = (0.8, 0.5, 1.3, 0.4, 0.2, 1.5);
        let t = 4;
        let p = LgssmParams::scalar(a, q, h, r, m0, p0, t).unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(9));
        let xs: Vec<f64> = tr.observations.iter().map(|x| x[0]).collect();
        let (mean, cov) = joint_scalar(a, q, h, r, m0, p0, t);
        let f = kalman_filter(&p, &tr.observations).unwrap();
        let s = rts_smoother(&p, &f);
        let (sm, sc) = condition(&mean, &cov, t, &xs);
        for k in 0..t {
            assert!((s[k].mean[0] - sm[k]).abs() < 1e-10);
            assert!((s[k].cov[(0, 0)] - sc[(k, k)]).abs() < 1e-10);
            // Filter at k conditions on the first k+1 observations only.
            let (m0_, c0_) = joint_scalar(a, q, h, r, m0, p0, k + 1);
            let (fm, fc) = condition(&m0_, &c0_, k + 1, &xs[..=k]);
            assert!((f.filtered[k].mean[0] - fm[k]).abs() < 1e-10);
            assert!((f.filtered[k].cov[(0, 0)] - fc[(k, k)]).abs() < 1e-10);
        }
        // log p(x) from the joint marginal of x.
        let sxx = cov.view((t, t), (t, t)).into_owned();
        let dx = DVector::from_column_slice(&xs) - mean.rows(t, t);
        let chol = sxx.cholesky().unwrap();
        let ll = -0.5
            * (t as f64 * (2.0 * PI).ln()
                + 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
                + dx.dot(&chol.solve(&dx)));
        assert!((f.log_likelihood - ll).abs() < 1e-10);
    }

    #[test]
    fn two_step_smoother_by_joint_oracle() {
        let p = bench(2);
        let xs = [vec![0.4], vec![-1.1]];
        let s = rts_smoother(&p, &kalman_filter(&p, &xs).unwrap());
        let (mean, cov) = joint_scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2);
        let (m, c) = condition(&mean, &cov, 2, &[0.4, -1.1]);
        assert!((s[0].mean[0] - m[0]).abs() < 1e-12);
        assert!((s[0].cov[(0, 0)] - c[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn smoother_edges_equal_filter() {
        let p = LgssmParams::scalar(0.5, 0.3, 2.0, 0.2, 1.0, 0.7, 6).unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(1));
        let f = kalman_filter(&p, &tr.observations).unwrap();
        let s = rts_smoother(&p, &f);
        assert_eq!(s[5], f.filtered[5]);
        let p1 = p.with_horizon(1).unwrap();
        let f1 = kalman_filter(&p1, &tr.observations[..1]).unwrap();
        assert_eq!(rts_smoother(&p1, &f1), f1.filtered);
    }

    #[test]
    fn smoother_is_tighter_than_filter_2d() {
        let p = LgssmParams::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.7]),
            DVector::from_vec(vec![0.2, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, -0.4]),
            DVector::from_element(1, 0.3),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, 1.0]),
            12,
        )
        .unwrap();
        let tr = lgssm_sample(&p, &mut Rng::new(12));
        let f = kalman_filter(&p, &tr.observations).unwrap();
        let s = rts_smoother(&p, &f);
        for (fb, sb) in f.filtered.iter().zip(&s) {
            assert!(fb.is_valid() && sb.is_valid());
            let diff = &fb.cov - &sb.cov;
            assert!(diff.symmetric_eigenvalues().iter().all(|&e| e >= -1e-9));
        }
    }

    #[test]
    fn singular_innovation_reports_time() {
        let p = LgssmParams::scalar(1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3).unwrap();
        let err = kalman_filter(&p, &[vec![0.0], vec![0.0], vec![0.0]]).unwrap_err();
        assert_eq!(err, LgssmError::SingularInnovation { t: 1 });
    }

    #[test]
    fn wrong_observation_count() {
        let p = bench(3);
        assert_eq!(
            kalman_filter(&p, &[vec![0.0]]).unwrap_err(),
            LgssmError::ObsLength { expected: 3, got: 1 }
        );
        assert!(matches!(
            kalman_filter(&p, &[vec![0.0], vec![0.0, 1.0], vec![0.0]]),
            Err(LgssmError::ObsDim { t: 2, .. })
        ));
    }
}
