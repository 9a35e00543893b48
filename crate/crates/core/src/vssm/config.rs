use serde::{Deserialize, Serialize};

use super::VssmError;
use crate::autodiff::nn::Activation;
use crate::autodiff::AdamConfig;

/// How much of the sequence the inference network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModeRepr", into = "ModeRepr")]
pub enum ConditioningMode {
    /// Past and present only; the first step sees `x_1`.
    Partial,
    /// As partial, but the first step peeks at `x_{1:k}`.
    Semi { sneak_peek: usize },
    /// The whole sequence through a bidirectional RNN.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeKind {
    Partial,
    Semi,
    Full,
}

// Flat form, so stray keys are rejected for every mode.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeRepr {
    mode: ModeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sneak_peek: Option<usize>,
}

impl TryFrom<ModeRepr> for ConditioningMode {
    type Error = String;

    fn try_from(r: ModeRepr) -> Result<Self, String> {
        match (r.mode, r.sneak_peek) {
            (ModeKind::Partial, None) => Ok(ConditioningMode::Partial),
            (ModeKind::Full, None) => Ok(ConditioningMode::Full),
            (ModeKind::Semi, Some(k)) => Ok(ConditioningMode::Semi { sneak_peek: k }),
            (ModeKind::Semi, None) => Err("semi mode needs sneak_peek".into()),
            (_, Some(_)) => Err("sneak_peek is only valid in semi mode".into()),
        }
    }
}

impl From<ConditioningMode> for ModeRepr {
    fn from(m: ConditioningMode) -> Self {
        match m {
            ConditioningMode::Partial => ModeRepr {
                mode: ModeKind::Partial,
                sneak_peek: None,
            },
            ConditioningMode::Semi { sneak_peek } => ModeRepr {
                mode: ModeKind::Semi,
                sneak_peek: Some(sneak_peek),
            },
            ConditioningMode::Full => ModeRepr {
                mode: ModeKind::Full,
                sneak_peek: None,
            },
        }
    }
}

impl ConditioningMode {
    pub fn name(&self) -> &'static str {
        match self {
            ConditioningMode::Partial => "partial",
            ConditioningMode::Semi { .. } => "semi",
            ConditioningMode::Full => "full",
        }
    }

    /// Observations visible to the first-step features.
    pub fn sneak_peek(&self, t_len: usize) -> usize {
        match self {
            ConditioningMode::Partial => 1,
            ConditioningMode::Semi { sneak_peek } => *sneak_peek,
            ConditioningMode::Full => t_len,
        }
    }

    pub fn validate(&self, t_len: usize) -> Result<(), VssmError> {
        if let ConditioningMode::Semi { sneak_peek: k } = *self {
            if k > t_len {
                return Err(VssmError::SneakPeek { k, t_len });
            }
            if k < 2 || k >= t_len {
                return Err(VssmError::Config(format!(
                    "semi conditioning needs 2 <= sneak_peek < T, got k = {k}, T = {t_len}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Hidden layers; the output layer is implied by the network's role.
    pub layers: Vec<LayerSpec>,
}

impl NetConfig {
    pub fn hidden(units: usize, activation: Activation) -> Self {
        Self {
            layers: vec![LayerSpec { units, activation }],
        }
    }

    pub fn linear() -> Self {
        Self { layers: Vec::new() }
    }

    pub(crate) fn pairs(&self) -> Vec<(usize, Activation)> {
        self.layers.iter().map(|l| (l.units, l.activation)).collect()
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::hidden(16, Activation::Tanh)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub n_flows: usize,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { n_flows: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Gru,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureRnnConfig {
    pub n_states: usize,
    pub n_layers: usize,
    pub cell_type: CellType,
    /// First-step feature network of the partial and semi modes.
    pub initial_mlp: NetConfig,
}

impl Default for FeatureRnnConfig {
    fn default() -> Self {
        Self {
            n_states: 16,
            n_layers: 1,
            cell_type: CellType::Gru,
            initial_mlp: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmissionConfig {
    /// Mean and log-variance from a network.
    Gaussian {
        #[serde(default)]
        layers: Vec<LayerSpec>,
    },
    /// Mean from a network, fixed per-dimension variance.
    FixedScale {
        #[serde(default)]
        layers: Vec<LayerSpec>,
        scale: Vec<f64>,
    },
    /// Mean is the first `n_obs` state dimensions, fixed variance.
    IdentitySlice { scale: Vec<f64> },
    /// Independent Bernoulli logits from a network.
    Bernoulli {
        #[serde(default)]
        layers: Vec<LayerSpec>,
    },
}

impl Default for EmissionConfig {
    fn default() -> Self {
        EmissionConfig::Gaussian {
            layers: NetConfig::default().layers,
        }
    }
}

/// Model and training configuration, keyed like the hyper-parameter tables
/// (`optimizer.learning_rate`, `transition.layers.0.units`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VssmConfig {
    pub n_latent: usize,
    pub n_obs: usize,
    pub n_cond: usize,
    pub conditioning: ConditioningMode,
    pub initial: InitialConfig,
    pub transition: NetConfig,
    pub gain: NetConfig,
    pub inv_initial: NetConfig,
    pub inv_disturbance: NetConfig,
    pub feature_rnn: FeatureRnnConfig,
    pub emission: EmissionConfig,

    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub steps: usize,
    /// Learning rate reached at the last step by geometric decay; `None` keeps it constant.
    pub final_learning_rate: Option<f64>,
    /// Posterior samples per sequence in each training step.
    pub n_samples: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Gain at initialisation, before any training.
    pub initial_gain: f64,
    pub log_every: usize,
    /// Validation interval in steps (0 = only at the end).
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for VssmConfig {
    fn default() -> Self {
        Self {
            n_latent: 4,
            n_obs: 1,
            n_cond: 0,
            conditioning: ConditioningMode::Full,
            initial: InitialConfig::default(),
            transition: NetConfig::default(),
            gain: NetConfig::default(),
            inv_initial: NetConfig::default(),
            inv_disturbance: NetConfig::default(),
            feature_rnn: FeatureRnnConfig::default(),
            emission: EmissionConfig::default(),
            batch_size: 32,
            optimizer: AdamConfig::default(),
            steps: 1000,
            final_learning_rate: None,
            n_samples: 1,
            grad_clip: Some(10.0),
            initial_gain: 0.5,
            log_every: 10,
            eval_every: 0,
            eval_samples: 10,
        }
    }
}

impl VssmConfig {
    pub fn validate(&self) -> Result<(), VssmError> {
        let err = |m: String| Err(VssmError::Config(m));
        if self.n_latent == 0 || self.n_obs == 0 {
            return err("n_latent and n_obs must be positive".into());
        }
        if self.feature_rnn.n_states == 0 {
            return err("feature_rnn.n_states must be positive".into());
        }
        if self.feature_rnn.n_layers != 1 {
            return err(format!(
                "feature_rnn.n_layers must be 1, got {}",
                self.feature_rnn.n_layers
            ));
        }
        let nets = [
            ("transition", &self.transition),
            ("gain", &self.gain),
            ("inv_initial", &self.inv_initial),
            ("inv_disturbance", &self.inv_disturbance),
            ("feature_rnn.initial_mlp", &self.feature_rnn.initial_mlp),
        ];
        for (name, net) in nets {
            if let Some(i) = net.layers.iter().position(|l| l.units == 0) {
                return err(format!("{name}.layers.{i}.units must be positive"));
            }
        }
        match &self.emission {
            EmissionConfig::FixedScale { scale, .. } | EmissionConfig::IdentitySlice { scale } => {
                if scale.len() != self.n_obs {
                    return err(format!(
                        "emission.scale has {} entries, n_obs is {}",
                        scale.len(),
                        self.n_obs
                    ));
                }
                if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return err("emission.scale entries must be positive".into());
                }
                if matches!(self.emission, EmissionConfig::IdentitySlice { .. }) && self.n_obs > self.n_latent {
                    return err("identity_slice emission needs n_obs <= n_latent".into());
                }
            }
            _ => {}
        }
        if let ConditioningMode::Semi { sneak_peek } = self.conditioning {
            if sneak_peek < 2 {
                return err(format!("conditioning.sneak_peek must be at least 2, got {sneak_peek}"));
            }
        }
        if self.batch_size == 0 || self.n_samples == 0 || self.eval_samples == 0 {
            return err("batch_size, n_samples and eval_samples must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return err("grad_clip must be positive".into());
            }
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return err("final_learning_rate must be positive".into());
            }
        }
        if !(self.initial_gain.is_finite() && self.initial_gain > 1e-4) {
            return err("initial_gain must exceed 1e-4".into());
        }
        self.optimizer
            .validate()
            .map_err(|e| VssmError::Config(format!("optimizer: {e}")))
    }
}
