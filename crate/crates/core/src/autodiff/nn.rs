//! Feed-forward and recurrent building blocks over a [`Graph`].

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Binding, Graph, ParamStore, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    Softsign,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Softplus => g.softplus(x),
            Activation::Softsign => g.softsign(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// Multi-layer perceptron with a linear output layer.
///
/// Parameters live at `{prefix}.layers.{i}.weight` (`[in, out]`) and
/// `{prefix}.layers.{i}.bias` (`[1, out]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
    /// One activation per hidden layer.
    activations: Vec<Activation>,
}

impl Mlp {
    /// `sizes` lists input width, hidden widths, output width.
    pub fn new(prefix: &str, sizes: Vec<usize>, activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let activations = vec![activation; sizes.len() - 2];
        Self {
            prefix: prefix.to_string(),
            sizes,
            activations,
        }
    }

    /// Hidden layers given as `(units, activation)` pairs.
    pub fn from_layers(prefix: &str, input: usize, hidden: &[(usize, Activation)], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(hidden.iter().map(|h| h.0));
        sizes.push(output);
        Self {
            prefix: prefix.to_string(),
            sizes,
            activations: hidden.iter().map(|h| h.1).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.layers.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.layers.{layer}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for (i, w) in self.sizes.windows(2).enumerate() {
            store.init_weight(&self.weight_name(i), w[0], w[1], rng);
            store.init_bias(&self.bias_name(i), w[1], 0.0);
        }
    }

    /// Initialise the last layer's weights to zero and its bias to `bias`.
    pub fn init_output_constant(&self, store: &mut ParamStore, bias: f64) {
        let last = self.n_layers() - 1;
        let (fan_in, out) = (self.sizes[last], self.sizes[last + 1]);
        store.insert(self.weight_name(last), super::Tensor::zeros(&[fan_in, out]));
        store.init_bias(&self.bias_name(last), out, bias);
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        for i in 0..self.n_layers() {
            let w = p.get(&self.weight_name(i))?;
            let b = p.get(&self.bias_name(i))?;
            h = g.linear(h, w, b)?;
            if i + 1 < self.n_layers() {
                h = self.activations[i].apply(g, h);
            }
        }
        Ok(h)
    }
}

/// Single-layer GRU cell, gate order (reset, update, candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    prefix: String,
    input: usize,
    hidden: usize,
}

impl Gru {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let h = self.hidden;
        store.init_weight(&self.name("weight_ih"), self.input, 3 * h, rng);
        store.init_weight(&self.name("weight_hh"), h, 3 * h, rng);
        store.init_bias(&self.name("bias_ih"), 3 * h, 0.0);
        store.init_bias(&self.name("bias_hh"), 3 * h, 0.0);
    }

    pub fn step(&self, g: &mut Graph, p: &Binding, x: Var, h: Var) -> Result<Var, AutodiffError> {
        let hd = self.hidden;
        let gi = g.linear(x, p.get(&self.name("weight_ih"))?, p.get(&self.name("bias_ih"))?)?;
        let gh = g.linear(h, p.get(&self.name("weight_hh"))?, p.get(&self.name("bias_hh"))?)?;
        let (gi_r, gi_z, gi_n) = (
            g.slice_cols(gi, 0, hd)?,
            g.slice_cols(gi, hd, 2 * hd)?,
            g.slice_cols(gi, 2 * hd, 3 * hd)?,
        );
        let (gh_r, gh_z, gh_n) = (
            g.slice_cols(gh, 0, hd)?,
            g.slice_cols(gh, hd, 2 * hd)?,
            g.slice_cols(gh, 2 * hd, 3 * hd)?,
        );
        let r = g.add(gi_r, gh_r)?;
        let r = g.sigmoid(r);
        let z = g.add(gi_z, gh_z)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, gh_n)?;
        let n = g.add(gi_n, rn)?;
        let n = g.tanh(n);
        let keep = g.mul(z, h)?;
        let one_minus_z = g.rsub_scalar(1.0, z);
        let fresh = g.mul(one_minus_z, n)?;
        g.add(fresh, keep)
    }

    /// Run over `xs` from a zero state, returning every hidden state.
    pub fn run(&self, g: &mut Graph, p: &Binding, xs: &[Var], reverse: bool) -> Result<Vec<Var>, AutodiffError> {
        let Some(first) = xs.first() else {
            return Ok(Vec::new());
        };
        let batch = g.value(*first).rows();
        let mut h = g.input(super::Tensor::zeros(&[batch, self.hidden]));
        let mut out = vec![h; xs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..xs.len()).rev())
        } else {
            Box::new(0..xs.len())
        };
        for t in order {
            h = self.step(g, p, xs[t], h)?;
            out[t] = h;
        }
        Ok(out)
    }
}
