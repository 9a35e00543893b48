use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::OptimizerConfig(format!("{self:?}")))
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self, AutodiffError> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Apply one update in place. Parameters without a gradient entry are left alone.
    ///
    /// All gradients are checked before anything is modified, so a rejected
    /// step leaves both parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient(name.clone()));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(AutodiffError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(m) = self.first.get(name) {
                if m.shape() != p.shape() {
                    return Err(AutodiffError::StateShape {
                        name: name.clone(),
                        state: m.shape().to_vec(),
                        param: p.shape().to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pk, mk), vk), &gk) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let mhat = *mk / c1;
                let vhat = *vk / c2;
                *pk -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.1,
            eps: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut p = single(1.0);
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.9);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut p = single(2.5);
        for _ in 0..20 {
            opt.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 2.5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        })
        .unwrap();
        let mut p = single(0.0);
        for _ in 0..500 {
            let w = p.get("w").unwrap().item();
            opt.step(&mut p, &grad(2.0 * (w - 3.0))).unwrap();
        }
        assert!((p.get("w").unwrap().item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut p = single(1.0);
        let err = opt.step(&mut p, &grad(f64::NAN)).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p.get("w").unwrap().item(), 1.0);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            AdamConfig {
                beta1: 1.0,
                ..Default::default()
            },
            AdamConfig {
                beta2: -0.1,
                ..Default::default()
            },
        ] {
            assert!(Adam::new(cfg).is_err());
        }
    }
}
