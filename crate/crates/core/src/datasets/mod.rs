//! Synthetic sequence data and its JSON-lines storage.
//!
//! Every generator keeps stochastic dynamics and imperfect state
//! information on purpose, so the data sit outside the cases where partial
//! conditioning is harmless. Splits come from separate seed streams, and
//! sequence `i` of a split uses `fork(i)` of that stream.

mod generators;
mod io;

pub use generators::{
    gen_branching, gen_lgssm_export, gen_rowwise_grid, gen_traffic_like, glyph_templates, BranchingParams, Labeled,
    RowwiseParams, TrafficParams, GLYPH_CLASSES, GLYPH_SIZE, SHARED_TOP_ROWS,
};
pub use io::{parse_jsonl, read_jsonl, to_jsonl, write_jsonl};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lgssm::{LgssmConfig, LgssmError, LgssmParams};
use crate::rng::{streams, Rng};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sequence {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Lgssm(#[from] LgssmError),
}

/// One sequence: observations `x_{1:T}` and optional conditions `u_{1:T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sequence {
    pub x: Vec<Vec<f64>>,
    #[serde(default)]
    pub u: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn new(x: Vec<Vec<f64>>) -> Self {
        Self { x, u: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn cond_dim(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    /// Rectangular, finite, and `u` either empty or one row per step.
    pub fn validate(&self) -> Result<(), String> {
        let k = self.obs_dim();
        if self.x.iter().any(|r| r.len() != k) {
            return Err("rows of x differ in length".into());
        }
        if !self.u.is_empty() {
            if self.u.len() != self.x.len() {
                return Err(format!("u has {} rows for {} steps", self.u.len(), self.x.len()));
            }
            let c = self.cond_dim();
            if self.u.iter().any(|r| r.len() != c) {
                return Err("rows of u differ in length".into());
            }
        }
        if self.x.iter().chain(&self.u).flatten().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Which generator, with its own parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Branching(BranchingParams),
    TrafficLike(TrafficParams),
    RowwiseGrid(RowwiseParams),
    /// Observations of a linear-Gaussian model; its own horizon is replaced.
    LgssmExport {
        model: LgssmConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(alias = "T")]
    pub horizon: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    pub generator: GeneratorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn stream(self) -> u64 {
        match self {
            Split::Train => streams::DATA_TRAIN,
            Split::Val => streams::DATA_VAL,
            Split::Test => streams::DATA_TEST,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Labeled>,
    pub val: Vec<Labeled>,
    pub test: Vec<Labeled>,
}

impl Splits {
    pub fn get(&self, s: Split) -> &[Labeled] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn sequences(&self, s: Split) -> Vec<Sequence> {
        self.get(s).iter().map(|l| l.sequence.clone()).collect()
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: String| Err(DatasetError::Spec(m));
        if self.horizon < 2 {
            return err(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return err("split sizes must be positive".into());
        }
        match &self.generator {
            GeneratorSpec::Branching(p) => p.validate(self.horizon),
            GeneratorSpec::TrafficLike(p) => p.validate(),
            GeneratorSpec::RowwiseGrid(p) => p.validate(self.horizon),
            GeneratorSpec::LgssmExport { model } => {
                LgssmParams::try_from(model.clone())?;
                Ok(())
            }
        }
    }

    pub fn count(&self, s: Split) -> usize {
        match s {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// One split, from stream `split.stream()` of `self.seed`.
    pub fn generate_split(&self, split: Split) -> Result<Vec<Labeled>, DatasetError> {
        self.validate()?;
        let rng = Rng::with_stream(self.seed, split.stream());
        let (n, t) = (self.count(split), self.horizon);
        Ok(match &self.generator {
            GeneratorSpec::Branching(p) => gen_branching(p, t, n, &rng),
            GeneratorSpec::TrafficLike(p) => gen_traffic_like(p, t, n, &rng),
            GeneratorSpec::RowwiseGrid(p) => gen_rowwise_grid(p, t, n, &rng),
            GeneratorSpec::LgssmExport { model } => {
                gen_lgssm_export(&LgssmParams::try_from(model.clone())?.with_horizon(t)?, n, &rng)
            }
        })
    }

    pub fn generate(&self) -> Result<Splits, DatasetError> {
        Ok(Splits {
            train: self.generate_split(Split::Train)?,
            val: self.generate_split(Split::Val)?,
            test: self.generate_split(Split::Test)?,
        })
    }
}

/// Scalar LGSSM whose lag-0/1/2 autocovariances match pooled 1D data:
/// `A = γ₂/γ₁`, `Var z = γ₁/A`, `R = γ₀ − Var z`, `Q = Var z (1 − A²)`,
/// each variance floored at `10⁻³ γ₀`.
pub fn moment_matched_lgssm(data: &[Sequence]) -> Result<LgssmParams, DatasetError> {
    let seqs: Vec<&Sequence> = data.iter().filter(|s| s.len() >= 3).collect();
    if seqs.is_empty() || seqs.iter().any(|s| s.obs_dim() != 1) {
        return Err(DatasetError::Spec("need 1D sequences of length at least 3".into()));
    }
    let all: Vec<f64> = seqs.iter().flat_map(|s| s.x.iter().map(|r| r[0])).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let gamma = |lag: usize| {
        let (mut s, mut n) = (0.0, 0usize);
        for q in &seqs {
            for t in lag..q.len() {
                s += (q.x[t][0] - mean) * (q.x[t - lag][0] - mean);
                n += 1;
            }
        }
        s / n as f64
    };
    let (g0, g1, g2) = (gamma(0), gamma(1), gamma(2));
    let floor = 1e-3 * g0.max(1e-12);
    let a = if g1.abs() > 1e-12 {
        (g2 / g1).clamp(-0.999, 0.999)
    } else {
        0.0
    };
    let var_z = if a.abs() > 1e-12 {
        (g1 / a).clamp(floor, g0)
    } else {
        floor
    };
    let r = (g0 - var_z).max(floor);
    let q = (var_z * (1.0 - a * a)).max(floor);
    let t = seqs.iter().map(|s| s.len()).max().unwrap_or(3);
    Ok(LgssmParams::scalar(a, q, 1.0, r, 0.0, var_z, t)?)
}

#[cfg(test)]
mod tests;
