//! Building blocks of the forecasting network.
//!
//! Layers own no tensor data directly; their parameters live in a
//! [`ParamStore`] and are referenced by [`ParamId`]. Before a forward pass
//! the store is bound into a fresh [`Graph`] (one
//! leaf per parameter), which lets gradients of a whole batch accumulate
//! on the shared leaves.

mod attention;
mod bilstm;
mod convlstm;
mod dense;
mod fusion;
mod fuzzy;

pub use attention::TemporalAttention;
pub use bilstm::BiLstm;
pub use convlstm::{ConvLstmCell, LstmState, StackedConvLstm};
pub use dense::DenseStack;
pub use fusion::{ConvFusion, Fusion, WeightedFusion};
pub use fuzzy::FuzzyLayer;

use rand::RngExt;

use crate::tensor::{Graph, Tensor, Var};

/// Handle to a trainable parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Flat, insertion-ordered store of every trainable parameter of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register every parameter as a gradient-tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.value.clone(), true))
                .collect(),
        }
    }

    /// Like [`ParamStore::bind`] but without gradient tracking, for
    /// inference-only passes.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.value.clone(), false))
                .collect(),
        }
    }
}

/// Graph variables for one binding of a [`ParamStore`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wrap externally created leaves, ordered like the store's parameters.
    /// Used by verification harnesses that need to substitute inputs (e.g.
    /// finite-difference checks over parameters).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Plain same-padding convolution layer (kernels + bias).
pub struct ConvLayer {
    kernels: ParamId,
    bias: ParamId,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl RngExt,
        prefix: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> crate::error::Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(crate::error::Error::Config(format!(
                "{prefix} kernel size must be odd, got {kernel}"
            )));
        }
        let fan_in = kernel * kernel * in_channels;
        Ok(ConvLayer {
            kernels: store.add(
                format!("{prefix}.kernels"),
                init_uniform_fan_in(&[kernel, kernel, in_channels, out_channels], fan_in, rng),
            ),
            bias: store.add(
                format!("{prefix}.bias"),
                init_uniform_fan_in(&[out_channels], fan_in, rng),
            ),
        })
    }

    pub fn apply(&self, g: &mut Graph, bound: &Bound, x: Var) -> crate::error::Result<Var> {
        g.conv2d(x, bound.var(self.kernels), bound.var(self.bias))
    }
}

/// Uniform init in `[-s, s]` with `s = 1/sqrt(fan_in)`.
pub fn init_uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl RngExt) -> Tensor {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    init_uniform(shape, -s, s, rng)
}

pub fn init_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl RngExt) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}
