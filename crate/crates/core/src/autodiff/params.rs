use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, Tensor, Var};
use crate::rng::Rng;

const CHECKPOINT_FORMAT: &str = "condgap-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Named trainable tensors, ordered by path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: BTreeMap<String, CheckpointEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, AutodiffError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Glorot-uniform weight `[fan_in, fan_out]` under `name`.
    pub fn init_weight(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data).unwrap());
    }

    pub fn init_bias(&mut self, name: &str, width: usize, value: f64) {
        self.insert(name, Tensor::full(&[1, width], value));
    }

    /// Bind every tensor into `g` as a named leaf.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let vars = self.tensors.iter().map(|(k, t)| (k.clone(), g.param(k, t))).collect();
        Binding { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn to_json(&self) -> Result<String, AutodiffError> {
        let mut params = BTreeMap::new();
        for (k, t) in &self.tensors {
            if !t.all_finite() {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter `{k}` holds non-finite values"
                )));
            }
            params.insert(
                k.clone(),
                CheckpointEntry {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            );
        }
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
        };
        serde_json::to_string_pretty(&file).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, AutodiffError> {
        let file: CheckpointFile = serde_json::from_str(s).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(AutodiffError::Checkpoint(format!(
                "unexpected format tag `{}`",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mut store = ParamStore::new();
        for (k, e) in file.params {
            let t = Tensor::new(e.shape, e.data).map_err(|err| AutodiffError::Checkpoint(format!("`{k}`: {err}")))?;
            store.insert(k, t);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_json()?).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let s =
            std::fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// Parameter leaves of one graph, by path.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn get(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }
}
