use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Sequence};
use crate::lgssm::{lgssm_sample, LgssmParams};
use crate::rng::Rng;

/// A sequence with the hidden quantity its generator chose: the branch
/// sign, whether a jam occurred, or the glyph class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub sequence: Sequence,
    pub label: i64,
    /// Branch step or jam onset (1-based), when there is one.
    pub event_step: Option<usize>,
}

fn parallel<F>(n: usize, rng: &Rng, f: F) -> Vec<Labeled>
where
    F: Fn(&mut Rng) -> Labeled + Sync,
{
    (0..n).into_par_iter().map(|i| f(&mut rng.fork(i as u64))).collect()
}

fn spec_err<T>(m: impl Into<String>) -> Result<T, DatasetError> {
    Err(DatasetError::Spec(m.into()))
}

/// Stands in for handwritten-digit completion and flight trajectories: the
/// early part of every sequence looks the same, the late part does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchingParams {
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Branch targets are `±target`.
    pub target: f64,
    /// Fraction of the remaining distance covered per step after the branch.
    pub drift_rate: f64,
    /// Latent random-walk standard deviation.
    pub process_noise: f64,
    /// Standard deviation of `z_0` around 0.
    pub start_noise: f64,
    /// Fixed branch step; `None` draws it uniformly from `[T/4, T/2]`.
    pub branch_step: Option<usize>,
}

impl Default for BranchingParams {
    fn default() -> Self {
        Self {
            sigma: 0.03,
            target: 2.0,
            drift_rate: 0.1,
            process_noise: 0.01,
            start_noise: 0.1,
            branch_step: None,
        }
    }
}

impl BranchingParams {
    pub(crate) fn validate(&self, t_len: usize) -> Result<(), DatasetError> {
        let nonneg = [self.sigma, self.process_noise, self.start_noise];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return spec_err("branching noise levels must be non-negative");
        }
        if !self.target.is_finite() || !(0.0..=1.0).contains(&self.drift_rate) {
            return spec_err("branching needs a finite target and drift_rate in [0, 1]");
        }
        if let Some(s) = self.branch_step {
            if s == 0 || s > t_len {
                return spec_err(format!("branch_step must lie in 1..={t_len}"));
            }
        }
        Ok(())
    }

    fn branch_range(&self, t_len: usize) -> (usize, usize) {
        match self.branch_step {
            Some(s) => (s, s),
            None => ((t_len / 4).max(1), (t_len / 2).max(1)),
        }
    }
}

/// Latent `z` idles near 0, then from step `t*` drifts toward `s · target`
/// for a fair sign `s`; `x_t = z_t + σ ε`.
pub fn gen_branching(p: &BranchingParams, t_len: usize, n: usize, rng: &Rng) -> Vec<Labeled> {
    let (lo, hi) = p.branch_range(t_len);
    parallel(n, rng, |r| {
        let s = if r.bernoulli(0.5) { 1.0 } else { -1.0 };
        let t_star = r.int_range(lo, hi);
        let mut z = p.start_noise * r.normal();
        let mut x = Vec::with_capacity(t_len);
        for t in 1..=t_len {
            if t >= t_star {
                z += p.drift_rate * (s * p.target - z);
            }
            z += p.process_noise * r.normal();
            x.push(vec![z + p.sigma * r.normal()]);
        }
        Labeled {
            sequence: Sequence::new(x),
            label: s as i64,
            event_step: Some(t_star),
        }
    })
}

/// Stands in for loop-detector speed data: similar mornings, occasional
/// sudden slowdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficParams {
    pub p_jam: f64,
    /// Observation noise standard deviation.
    pub noise: f64,
    /// Relative drop of the speed curve during a jam, drawn from this range.
    pub depth: [f64; 2],
    /// Jam length as a fraction of the day, drawn from this range.
    pub duration: [f64; 2],
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            p_jam: 0.3,
            noise: 0.03,
            depth: [0.3, 0.6],
            duration: [0.1, 0.25],
        }
    }
}

impl TrafficParams {
    pub(crate) fn validate(&self) -> Result<(), DatasetError> {
        let ordered = |r: [f64; 2], hi: f64| r[0].is_finite() && r[0] <= r[1] && r[0] >= 0.0 && r[1] <= hi;
        if !(0.0..=1.0).contains(&self.p_jam) {
            return spec_err("p_jam must lie in [0, 1]");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return spec_err("traffic noise must be non-negative");
        }
        if !ordered(self.depth, 1.0) || !ordered(self.duration, 1.0) || self.duration[1] <= 0.0 {
            return spec_err("depth and duration must be ordered ranges within [0, 1]");
        }
        Ok(())
    }
}

/// Free-flow speed with morning and evening dips, normalised to 1.
pub fn base_speed(t: usize, t_len: usize) -> f64 {
    let tau = t as f64 / (t_len - 1).max(1) as f64;
    let dip = |c: f64, w: f64, d: f64| d * (-((tau - c) / w).powi(2)).exp();
    1.0 - dip(0.3, 0.08, 0.2) - dip(0.72, 0.1, 0.15)
}

pub fn gen_traffic_like(p: &TrafficParams, t_len: usize, n: usize, rng: &Rng) -> Vec<Labeled> {
    parallel(n, rng, |r| {
        let jam = r.bernoulli(p.p_jam);
        let (mut onset, mut len, mut depth) = (0, 0, 0.0);
        if jam {
            let frac = r.uniform_range(p.duration[0], p.duration[1]);
            len = ((frac * t_len as f64).round() as usize).clamp(1, t_len);
            onset = r.int_range(0, t_len - len);
            depth = r.uniform_range(p.depth[0], p.depth[1]);
        }
        let x = (0..t_len)
            .map(|t| {
                let mut v = base_speed(t, t_len);
                if jam && (onset..onset + len).contains(&t) {
                    v *= 1.0 - depth;
                }
                vec![v + p.noise * r.normal()]
            })
            .collect();
        Labeled {
            sequence: Sequence::new(x),
            label: i64::from(jam),
            event_step: jam.then_some(onset + 1),
        }
    })
}

pub const GLYPH_SIZE: usize = 8;
/// Rows shared by every glyph template.
pub const SHARED_TOP_ROWS: usize = 3;
pub const GLYPH_CLASSES: [&str; 4] = ["3", "8", "9", "0"];

const GLYPHS: [[&str; GLYPH_SIZE]; 4] = [
    [
        "..####..", ".#....#.", ".#....#.", "...###..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".....#..", "..###...",
    ],
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
];

/// Binary 8×8 templates, one per entry of [`GLYPH_CLASSES`].
pub fn glyph_templates() -> Vec<Vec<Vec<f64>>> {
    GLYPHS
        .iter()
        .map(|g| {
            g.iter()
                .map(|row| row.chars().map(|c| if c == '#' { 1.0 } else { 0.0 }).collect())
                .collect()
        })
        .collect()
}

/// Stands in for row-by-row binarised digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RowwiseParams {
    /// Pixel is 1 with probability `rate · on` on strokes, `rate · off` elsewhere.
    pub rate: f64,
    pub on: f64,
    pub off: f64,
}

impl Default for RowwiseParams {
    fn default() -> Self {
        Self {
            rate: 1.0,
            on: 0.95,
            off: 0.03,
        }
    }
}

impl RowwiseParams {
    pub(crate) fn validate(&self, t_len: usize) -> Result<(), DatasetError> {
        if t_len != GLYPH_SIZE {
            return spec_err(format!(
                "rowwise_grid sequences have {GLYPH_SIZE} rows, horizon is {t_len}"
            ));
        }
        let p = [self.rate, self.on, self.off];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return spec_err("rate, on and off must lie in [0, 1]");
        }
        Ok(())
    }
}

pub fn gen_rowwise_grid(p: &RowwiseParams, _t_len: usize, n: usize, rng: &Rng) -> Vec<Labeled> {
    let templates = glyph_templates();
    parallel(n, rng, |r| {
        let class = r.index(templates.len());
        let x = templates[class]
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&ink| {
                        let prob = p.rate * if ink > 0.5 { p.on } else { p.off };
                        if r.bernoulli(prob) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Labeled {
            sequence: Sequence::new(x),
            label: class as i64,
            event_step: None,
        }
    })
}

pub fn gen_lgssm_export(p: &LgssmParams, n: usize, rng: &Rng) -> Vec<Labeled> {
    parallel(n, rng, |r| Labeled {
        sequence: Sequence::new(lgssm_sample(p, r).observations),
        label: 0,
        event_step: None,
    })
}
