//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every loss evaluation. Trainable tensors live
//! in a [`ParamStore`] keyed by dot-separated paths
//! (`transition.layers.0.weight`) and are bound into each graph as named
//! leaves; after `backward` the graph reports gradients by the same names,
//! which [`Adam`] consumes.

mod adam;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use params::{Binding, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs a different element count than {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows of unequal length")]
    RaggedRows,
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("column slice {start}..{end} out of range for shape {shape:?}")]
    Slice {
        shape: Vec<usize>,
        start: usize,
        end: usize,
    },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; reset gradients first")]
    BackwardTwice,
    #[error("no gradients: backward has not run")]
    NoGradients,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("optimizer state for `{name}` has shape {state:?}, parameter has {param:?}")]
    StateShape {
        name: String,
        state: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("invalid optimizer setting: {0}")]
    OptimizerConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
