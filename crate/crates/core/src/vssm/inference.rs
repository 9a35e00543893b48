use super::model::{BatchInputs, VssmModel};
use super::VssmError;
use crate::autodiff::{Binding, Graph, Var};

/// A posterior over `z_1` and the residuals `ε_{2:T}`, expressed in the
/// ancestral form the ELBO rollout consumes. Heads return `(mean, logvar)`.
pub trait InferenceModel {
    type Context;

    fn begin(
        &self,
        g: &mut Graph,
        p: &Binding,
        model: &VssmModel,
        inp: &BatchInputs,
    ) -> Result<Self::Context, VssmError>;

    fn initial(
        &self,
        g: &mut Graph,
        p: &Binding,
        model: &VssmModel,
        ctx: &Self::Context,
    ) -> Result<(Var, Var), VssmError>;

    /// Posterior over `ε_t` (0-based `t ≥ 1`).
    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        g: &mut Graph,
        p: &Binding,
        model: &VssmModel,
        ctx: &Self::Context,
        t: usize,
        z_prev: Var,
        z_tilde: Var,
        gain: Var,
    ) -> Result<(Var, Var), VssmError>;
}

/// The model's own feature RNN and inference heads.
#[derive(Debug, Clone, Copy, Default)]
pub struct Amortized;

impl InferenceModel for Amortized {
    type Context = Vec<Var>;

    fn begin(&self, g: &mut Graph, p: &Binding, model: &VssmModel, inp: &BatchInputs) -> Result<Vec<Var>, VssmError> {
        model.features(g, p, inp)
    }

    fn initial(&self, g: &mut Graph, p: &Binding, model: &VssmModel, ctx: &Vec<Var>) -> Result<(Var, Var), VssmError> {
        model.initial_posterior(g, p, ctx[0])
    }

    fn residual(
        &self,
        g: &mut Graph,
        p: &Binding,
        model: &VssmModel,
        ctx: &Vec<Var>,
        t: usize,
        _z_prev: Var,
        z_tilde: Var,
        _gain: Var,
    ) -> Result<(Var, Var), VssmError> {
        model.residual_posterior(g, p, z_tilde, ctx[t])
    }
}
