use super::{log_prob_graph, DiagGaussian, DistributionError};
use crate::autodiff::{AutodiffError, Binding, Graph, ParamStore, Tensor, Var};
use crate::rng::Rng;

const LOG_SCALE_LIMIT: f64 = 8.0;

/// Affine inverse-autoregressive flow over a fixed diagonal-Gaussian base.
///
/// Each flow maps `x ↦ x ⊙ exp(s(x)) + m(x)` where `s` and `m` are single
/// masked linear layers whose output `i` sees only `x_{<i}`. Sampling is one
/// pass per flow; density evaluation at an arbitrary point inverts each flow
/// by `dim` fixed-point sweeps, which are exact because the Jacobian is
/// triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineIafFlow {
    prefix: String,
    dim: usize,
    n_flows: usize,
    base: DiagGaussian,
}

impl AffineIafFlow {
    pub fn new(prefix: &str, n_flows: usize, base: DiagGaussian) -> Self {
        Self {
            prefix: prefix.to_string(),
            dim: base.dim(),
            n_flows,
            base,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_flows(&self) -> usize {
        self.n_flows
    }

    pub fn base(&self) -> &DiagGaussian {
        &self.base
    }

    fn name(&self, k: usize, part: &str) -> String {
        format!("{}.flows.{k}.{part}", self.prefix)
    }

    /// Shift 0, scale 1: the flow starts as the identity map.
    pub fn init_identity(&self, store: &mut ParamStore) {
        let d = self.dim;
        for k in 0..self.n_flows {
            for part in ["shift", "log_scale"] {
                store.insert(self.name(k, &format!("{part}.weight")), Tensor::zeros(&[d, d]));
                store.init_bias(&self.name(k, &format!("{part}.bias")), d, 0.0);
            }
        }
    }

    /// Random weights of magnitude `scale` (masked entries are ignored anyway).
    pub fn init_random(&self, store: &mut ParamStore, rng: &mut Rng, scale: f64) {
        let d = self.dim;
        for k in 0..self.n_flows {
            for part in ["shift", "log_scale"] {
                let w = (0..d * d).map(|_| scale * rng.normal()).collect();
                store.insert(
                    self.name(k, &format!("{part}.weight")),
                    Tensor::new(vec![d, d], w).unwrap(),
                );
                let b = (0..d).map(|_| scale * rng.normal()).collect();
                store.insert(
                    self.name(k, &format!("{part}.bias")),
                    Tensor::new(vec![1, d], b).unwrap(),
                );
            }
        }
    }

    /// `mask[j, i] = 1` iff `j < i`: output `i` depends on inputs before it.
    fn mask(&self) -> Tensor {
        let d = self.dim;
        let data = (0..d * d)
            .map(|idx| if idx / d < idx % d { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![d, d], data).unwrap()
    }

    fn masked_linear(
        &self,
        g: &mut Graph,
        p: &Binding,
        mask: Var,
        k: usize,
        part: &str,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let w = p.get(&self.name(k, &format!("{part}.weight")))?;
        let b = p.get(&self.name(k, &format!("{part}.bias")))?;
        let wm = g.mul(w, mask)?;
        g.linear(x, wm, b)
    }

    fn terms(&self, g: &mut Graph, p: &Binding, mask: Var, k: usize, x: Var) -> Result<(Var, Var), AutodiffError> {
        let shift = self.masked_linear(g, p, mask, k, "shift", x)?;
        let raw = self.masked_linear(g, p, mask, k, "log_scale", x)?;
        let log_scale = g.clamp(raw, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT);
        Ok((shift, log_scale))
    }

    /// Push base-space points through all flows; returns the points and
    /// `Σ log scale` per row (`[rows, 1]`).
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<(Var, Var), AutodiffError> {
        let rows = g.value(x).rows();
        let mut logdet = g.input(Tensor::zeros(&[rows, 1]));
        let mut h = x;
        if self.n_flows == 0 {
            return Ok((h, logdet));
        }
        let mask = g.input(self.mask());
        for k in 0..self.n_flows {
            let (shift, log_scale) = self.terms(g, p, mask, k, h)?;
            let scale = g.exp(log_scale);
            let scaled = g.mul(h, scale)?;
            h = g.add(scaled, shift)?;
            let ls = g.sum_axis1(log_scale)?;
            logdet = g.add(logdet, ls)?;
        }
        Ok((h, logdet))
    }

    /// Map points back to base space; returns base points and the forward
    /// `Σ log scale` evaluated along the way.
    pub fn inverse(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<(Var, Var), AutodiffError> {
        let rows = g.value(z).rows();
        let mut logdet = g.input(Tensor::zeros(&[rows, 1]));
        let mut y = z;
        if self.n_flows == 0 {
            return Ok((y, logdet));
        }
        let mask = g.input(self.mask());
        for k in (0..self.n_flows).rev() {
            let mut x = g.input(Tensor::zeros(&[rows, self.dim]));
            // After sweep i the first i+1 coordinates are exact.
            for _ in 0..self.dim {
                let (shift, log_scale) = self.terms(g, p, mask, k, x)?;
                let centred = g.sub(y, shift)?;
                let neg = g.neg(log_scale);
                let inv_scale = g.exp(neg);
                x = g.mul(centred, inv_scale)?;
            }
            let (_, log_scale) = self.terms(g, p, mask, k, x)?;
            let ls = g.sum_axis1(log_scale)?;
            logdet = g.add(logdet, ls)?;
            y = x;
        }
        Ok((y, logdet))
    }

    fn base_log_prob(&self, g: &mut Graph, x: Var) -> Result<Var, AutodiffError> {
        let m = g.input(Tensor::row(self.base.mean()));
        let lv: Vec<f64> = self.base.var().iter().map(|v| v.ln()).collect();
        let lv = g.input(Tensor::row(&lv));
        log_prob_graph(g, x, m, lv)
    }

    /// Per-row log density of arbitrary points `z` (`[rows, dim]`).
    pub fn log_prob_graph(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<Var, AutodiffError> {
        let (x, logdet) = self.inverse(g, p, z)?;
        let base = self.base_log_prob(g, x)?;
        g.sub(base, logdet)
    }

    /// Reparameterised draw from standard-normal `noise`; returns `(z, log p(z))`.
    pub fn sample_graph(&self, g: &mut Graph, p: &Binding, noise: Var) -> Result<(Var, Var), AutodiffError> {
        let m = g.input(Tensor::row(self.base.mean()));
        let sd: Vec<f64> = self.base.var().iter().map(|v| v.sqrt()).collect();
        let sd = g.input(Tensor::row(&sd));
        let scaled = g.mul(noise, sd)?;
        let x = g.add(scaled, m)?;
        let base = self.base_log_prob(g, x)?;
        let (z, logdet) = self.forward(g, p, x)?;
        let lp = g.sub(base, logdet)?;
        Ok((z, lp))
    }

    /// Draw `n` samples with their log densities.
    pub fn sample(
        &self,
        store: &ParamStore,
        n: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>), DistributionError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let noise = g.input(Tensor::new(vec![n, self.dim], rng.normal_vec(n * self.dim))?);
        let (z, lp) = self.sample_graph(&mut g, &p, noise)?;
        let zt = g.value(z);
        let points = (0..n).map(|r| zt.row_slice(r).to_vec()).collect();
        Ok((points, g.value(lp).data().to_vec()))
    }

    pub fn log_prob(&self, store: &ParamStore, points: &[Vec<f64>]) -> Result<Vec<f64>, DistributionError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let z = g.input(Tensor::from_rows(points)?);
        let lp = self.log_prob_graph(&mut g, &p, z)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Base-space preimages of `points`.
    pub fn invert(&self, store: &ParamStore, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DistributionError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let z = g.input(Tensor::from_rows(points)?);
        let (x, _) = self.inverse(&mut g, &p, z)?;
        let xt = g.value(x);
        Ok((0..points.len()).map(|r| xt.row_slice(r).to_vec()).collect())
    }

    /// Images of base-space `points`.
    pub fn push_forward(&self, store: &ParamStore, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DistributionError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::from_rows(points)?);
        let (z, _) = self.forward(&mut g, &p, x)?;
        let zt = g.value(z);
        Ok((0..points.len()).map(|r| zt.row_slice(r).to_vec()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_flows_is_the_base() {
        let base = DiagGaussian::new(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let f = AffineIafFlow::new("z1", 0, base.clone());
        let store = ParamStore::new();
        let pts = vec![vec![0.1, 0.2], vec![-3.0, 1.0]];
        let lp = f.log_prob(&store, &pts).unwrap();
        for (p, l) in pts.iter().zip(lp) {
            assert!((l - base.log_prob(p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_init_matches_base() {
        let base = DiagGaussian::standard(3);
        let f = AffineIafFlow::new("z1", 2, base.clone());
        let mut store = ParamStore::new();
        f.init_identity(&mut store);
        let mut rng = Rng::new(2);
        let (pts, lps) = f.sample(&store, 5, &mut rng).unwrap();
        for (p, l) in pts.iter().zip(lps) {
            assert!((l - base.log_prob(p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let f = AffineIafFlow::new("z1", 3, DiagGaussian::standard(4));
        let mut store = ParamStore::new();
        let mut rng = Rng::new(9);
        f.init_random(&mut store, &mut rng, 0.5);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| rng.normal_vec(4)).collect();
        let zs = f.push_forward(&store, &xs).unwrap();
        let back = f.invert(&store, &zs).unwrap();
        for (a, b) in xs.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_log_prob_agrees_with_density_evaluation() {
        let f = AffineIafFlow::new("z1", 2, DiagGaussian::standard(3));
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        f.init_random(&mut store, &mut rng, 0.4);
        let (pts, lps) = f.sample(&store, 8, &mut rng).unwrap();
        let again = f.log_prob(&store, &pts).unwrap();
        for (a, b) in lps.iter().zip(again) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        for seed in 0..5 {
            let f = AffineIafFlow::new("z1", 2, DiagGaussian::standard(1));
            let mut store = ParamStore::new();
            let mut rng = Rng::new(100 + seed);
            f.init_random(&mut store, &mut rng, 0.5);
            let (lo, hi, n) = (-60.0, 60.0, 60_000);
            let h = (hi - lo) / n as f64;
            let pts: Vec<Vec<f64>> = (0..=n).map(|i| vec![lo + i as f64 * h]).collect();
            let lp = f.log_prob(&store, &pts).unwrap();
            let integral: f64 = lp
                .iter()
                .enumerate()
                .map(|(i, l)| l.exp() * if i == 0 || i == n { 0.5 } else { 1.0 })
                .sum::<f64>()
                * h;
            assert!((integral - 1.0).abs() < 1e-3, "seed {seed}: {integral}");
        }
    }

    #[test]
    fn two_dimensional_density_integrates_to_one() {
        let f = AffineIafFlow::new("z1", 2, DiagGaussian::standard(2));
        let mut store = ParamStore::new();
        let mut rng = Rng::new(77);
        f.init_random(&mut store, &mut rng, 0.3);
        let (lo, hi, n) = (-14.0, 14.0, 700);
        let h = (hi - lo) / n as f64;
        let mut pts = Vec::with_capacity((n + 1) * (n + 1));
        for i in 0..=n {
            for j in 0..=n {
                pts.push(vec![lo + i as f64 * h, lo + j as f64 * h]);
            }
        }
        let lp = f.log_prob(&store, &pts).unwrap();
        let integral: f64 = lp.iter().map(|l| l.exp()).sum::<f64>() * h * h;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }
}
