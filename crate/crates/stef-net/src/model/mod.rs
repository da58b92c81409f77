//! Full model assembly: demand branch, external branch, fusion, temporal
//! head, and the dense output stack, plus ablation variants.

mod checkpoint;

pub use checkpoint::{load_bytes, load_file, save_bytes, save_file};

use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    BiLstm, Bound, ConvFusion, DenseStack, Fusion, FuzzyLayer, ParamStore, StackedConvLstm,
    TemporalAttention, WeightedFusion,
};
use crate::tensor::{Graph, Tensor, Var};

/// How the demand-branch and external-branch maps are combined per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// Channel concatenation followed by a one-filter convolution.
    Conv,
    /// Elementwise weight grid per branch.
    WeightedAddition,
}

/// Every architectural hyperparameter, with the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Grid cells along longitude.
    pub width: usize,
    /// Grid cells along latitude.
    pub height: usize,
    /// Number of past intervals fed to the model (T = k).
    pub history: usize,
    pub convlstm_layers: usize,
    pub convlstm_filters: usize,
    pub convlstm_kernel: usize,
    /// Give the last stacked ConvLSTM a single filter instead of adding a
    /// one-filter projection convolution after the stack.
    pub single_filter_last_layer: bool,
    /// Length of the external feature vector.
    pub fuzzy_inputs: usize,
    /// Rule count; must equal `width * height` so rule activations reshape
    /// onto the grid.
    pub fuzzy_rules: usize,
    /// Kernel size of the one-filter convolution after the fuzzy reshape.
    pub external_kernel: usize,
    pub fusion: FusionKind,
    pub fusion_kernel: usize,
    /// Temporal attention head; when disabled the temporal mean of the
    /// BiLSTM outputs is used instead.
    pub attention: bool,
    /// External branch; when disabled the model sees demand history only.
    pub external: bool,
    /// Dense head layer sizes; the last must equal `width * height`.
    pub dense_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 20,
            height: 20,
            history: 8,
            convlstm_layers: 3,
            convlstm_filters: 64,
            convlstm_kernel: 3,
            single_filter_last_layer: false,
            fuzzy_inputs: 24,
            fuzzy_rules: 400,
            external_kernel: 3,
            fusion: FusionKind::Conv,
            fusion_kernel: 3,
            attention: true,
            external: true,
            dense_sizes: vec![100, 200, 400],
        }
    }
}

impl ModelConfig {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must be at least 1x1".into()));
        }
        if self.history == 0 {
            return Err(Error::Config("history must be at least 1".into()));
        }
        if self.convlstm_layers == 0 {
            return Err(Error::Config("need at least one convlstm layer".into()));
        }
        if self.convlstm_filters == 0 {
            return Err(Error::Config("convlstm filter count must be positive".into()));
        }
        for (name, k) in [
            ("convlstm_kernel", self.convlstm_kernel),
            ("external_kernel", self.external_kernel),
            ("fusion_kernel", self.fusion_kernel),
        ] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.external {
            if self.fuzzy_inputs == 0 {
                return Err(Error::Config("fuzzy input size must be positive".into()));
            }
            if self.fuzzy_rules != self.cells() {
                return Err(Error::Config(format!(
                    "fuzzy_rules ({}) must equal width*height ({}) so rule \
                     activations reshape onto the grid",
                    self.fuzzy_rules,
                    self.cells()
                )));
            }
        }
        match self.dense_sizes.last() {
            None => return Err(Error::Config("dense_sizes must not be empty".into())),
            Some(&last) if last != self.cells() => {
                return Err(Error::Config(format!(
                    "last dense size ({last}) must equal width*height ({})",
                    self.cells()
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-component trainable parameter counts, derived from the config
    /// alone. Construction is checked against this in tests.
    pub fn parameter_census(&self) -> Vec<(String, usize)> {
        let mut census = Vec::new();
        let k2 = self.convlstm_kernel * self.convlstm_kernel;
        let mut in_ch = 1;
        for layer in 0..self.convlstm_layers {
            let out = if self.single_filter_last_layer && layer == self.convlstm_layers - 1 {
                1
            } else {
                self.convlstm_filters
            };
            census.push((
                format!("convlstm.{layer}"),
                4 * (k2 * (in_ch + out) * out + out),
            ));
            in_ch = out;
        }
        if !self.single_filter_last_layer {
            census.push((
                "convlstm.projection".into(),
                k2 * self.convlstm_filters + 1,
            ));
        }
        if self.external {
            census.push(("fuzzy".into(), 2 * self.fuzzy_inputs * self.fuzzy_rules));
            census.push((
                "external_conv".into(),
                self.external_kernel * self.external_kernel + 1,
            ));
            census.push((
                "fusion".into(),
                match self.fusion {
                    FusionKind::Conv => self.fusion_kernel * self.fusion_kernel * 2 + 1,
                    FusionKind::WeightedAddition => 2 * self.cells(),
                },
            ));
        }
        let g = self.cells();
        census.push(("bilstm".into(), 2 * 4 * (g * g + g * g + g)));
        if self.attention {
            census.push(("attention".into(), self.history));
        }
        let mut fan_in = g;
        let mut dense = 0;
        for &out in &self.dense_sizes {
            dense += fan_in * out + out;
            fan_in = out;
        }
        census.push(("dense".into(), dense));
        census
    }

    pub fn parameter_total(&self) -> usize {
        self.parameter_census().iter().map(|(_, c)| c).sum()
    }
}

/// Named ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    WeightedAddition,
    NoAttention,
    NoExternal,
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-addition" => Ok(AblationVariant::WeightedAddition),
            "no-attention" => Ok(AblationVariant::NoAttention),
            "no-external" => Ok(AblationVariant::NoExternal),
            other => Err(Error::Usage(format!(
                "unknown ablation variant '{other}' (expected weighted-addition, \
                 no-attention, or no-external)"
            ))),
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationVariant::WeightedAddition => "weighted-addition",
            AblationVariant::NoAttention => "no-attention",
            AblationVariant::NoExternal => "no-external",
        };
        f.write_str(s)
    }
}

/// Derive an ablated configuration.
pub fn ablate(config: &ModelConfig, variant: AblationVariant) -> ModelConfig {
    let mut out = config.clone();
    match variant {
        AblationVariant::WeightedAddition => out.fusion = FusionKind::WeightedAddition,
        AblationVariant::NoAttention => out.attention = false,
        AblationVariant::NoExternal => out.external = false,
    }
    out
}

struct ExternalBranch {
    fuzzy: FuzzyLayer,
    conv: crate::layers::ConvLayer,
    fusion: Fusion,
}

/// One forward pass's interesting nodes.
pub struct ForwardPass {
    /// Predicted grid, `[W, H]`, in scaled demand space.
    pub prediction: Var,
    /// BiLSTM outputs stacked over time, `[T, W*H]`.
    pub hidden: Var,
    /// Attended vector fed to the dense stack, `[W*H]`.
    pub context: Var,
    /// Attention weights `[T, W*H]`; `None` for the no-attention variant.
    pub attention: Option<Var>,
}

/// The assembled network.
pub struct StefNet {
    config: ModelConfig,
    params: ParamStore,
    demand: StackedConvLstm,
    external: Option<ExternalBranch>,
    bilstm: BiLstm,
    attention: Option<TemporalAttention>,
    dense: DenseStack,
}

impl StefNet {
    /// Build a fresh model. Parameter creation order (and with it the RNG
    /// draw order and checkpoint layout) is fixed: demand stack, external
    /// branch, BiLSTM, attention, dense.
    pub fn new(config: ModelConfig, rng: &mut impl RngExt) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let demand = StackedConvLstm::new(
            &mut params,
            rng,
            config.convlstm_layers,
            config.convlstm_filters,
            config.convlstm_kernel,
            config.single_filter_last_layer,
        )?;
        let external = if config.external {
            let fuzzy = FuzzyLayer::new(&mut params, rng, config.fuzzy_inputs, config.fuzzy_rules);
            let conv = crate::layers::ConvLayer::new(
                &mut params,
                rng,
                "external_conv",
                config.external_kernel,
                1,
                1,
            )?;
            let fusion = match config.fusion {
                FusionKind::Conv => {
                    Fusion::Conv(ConvFusion::new(&mut params, rng, config.fusion_kernel)?)
                }
                FusionKind::WeightedAddition => Fusion::Weighted(WeightedFusion::new(
                    &mut params,
                    rng,
                    config.width,
                    config.height,
                )),
            };
            Some(ExternalBranch { fuzzy, conv, fusion })
        } else {
            None
        };
        let bilstm = BiLstm::new(&mut params, rng, config.cells());
        let attention = if config.attention {
            Some(TemporalAttention::new(&mut params, rng, config.history))
        } else {
            None
        };
        let dense = DenseStack::new(&mut params, rng, config.cells(), &config.dense_sizes)?;
        Ok(StefNet {
            config,
            params,
            demand,
            external,
            bilstm,
            attention,
            dense,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.params.bind(g)
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        self.params.bind_frozen(g)
    }

    /// Forward pass inside an existing graph, with parameters already bound.
    ///
    /// `demands` is the scaled history `[T, W, H]`; `externals` the encoded
    /// feature rows `[T, fuzzy_inputs]` (ignored by the no-external
    /// variant).
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        demands: &Tensor,
        externals: &Tensor,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let t = cfg.history;
        let (w, h) = (cfg.width, cfg.height);
        if demands.shape() != [t, w, h] {
            return Err(Error::dim(format!(
                "demand history has shape {:?}, expected [{t}, {w}, {h}]",
                demands.shape()
            )));
        }
        if self.external.is_some() && externals.shape() != [t, cfg.fuzzy_inputs] {
            return Err(Error::dim(format!(
                "external history has shape {:?}, expected [{t}, {}]",
                externals.shape(),
                cfg.fuzzy_inputs
            )));
        }

        // Demand branch: per-step one-channel maps.
        let frames: Vec<Var> = (0..t)
            .map(|step| {
                let frame = slice_leading(demands, step, &[w, h, 1]);
                g.constant(frame)
            })
            .collect();
        let demand_maps = self.demand.forward(g, bound, &frames)?;

        // External branch and per-step fusion; fusion never mixes across t.
        let fused: Vec<Var> = match &self.external {
            None => demand_maps,
            Some(branch) => {
                let mut fused = Vec::with_capacity(t);
                for (step, &demand_map) in demand_maps.iter().enumerate() {
                    let row = slice_leading(externals, step, &[cfg.fuzzy_inputs]);
                    let row = g.constant(row);
                    let rules = branch.fuzzy.forward(g, bound, row)?;
                    let grid = g.reshape(rules, vec![w, h, 1])?;
                    let ext_map = branch.conv.apply(g, bound, grid)?;
                    let ext_map = g.reshape(ext_map, vec![w, h])?;
                    fused.push(branch.fusion.fuse(g, bound, demand_map, ext_map)?);
                }
                fused
            }
        };

        // Flatten and run the temporal head.
        let cells = cfg.cells();
        let mut flat_steps = Vec::with_capacity(t);
        for &f in &fused {
            flat_steps.push(g.reshape(f, vec![cells])?);
        }
        let hidden_steps = self.bilstm.forward(g, bound, &flat_steps)?;
        let hidden = g.stack(&hidden_steps)?;

        let (context, attention) = match &self.attention {
            Some(attn) => {
                let (ctx, weights) = attn.forward(g, bound, hidden)?;
                (ctx, Some(weights))
            }
            None => (g.reduce_mean(hidden, Some(0))?, None),
        };

        let out = self.dense.forward(g, bound, context)?;
        let prediction = g.reshape(out, vec![w, h])?;
        Ok(ForwardPass {
            prediction,
            hidden,
            context,
            attention,
        })
    }

    /// Inference-only forward pass on a fresh graph. Returns the predicted
    /// grid and, when attention is enabled, the `[T, W, H]` weight stack.
    pub fn predict(&self, demands: &Tensor, externals: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let pass = self.forward(&mut g, &bound, demands, externals)?;
        let pred = g.value(pass.prediction).clone();
        let attn = match pass.attention {
            Some(v) => Some(g.value(v).clone().reshape(vec![
                self.config.history,
                self.config.width,
                self.config.height,
            ])?),
            None => None,
        };
        Ok((pred, attn))
    }
}

/// Copy the `index`-th slice along the leading axis into a tensor of
/// `target_shape` (same element count as one slice).
fn slice_leading(t: &Tensor, index: usize, target_shape: &[usize]) -> Tensor {
    let chunk = t.numel() / t.shape()[0];
    let data = t.data()[index * chunk..(index + 1) * chunk].to_vec();
    Tensor::new(target_shape.to_vec(), data).expect("slice matches target shape")
}
