//! Convolutional LSTM cell and stack.
//!
//! The cell replaces the dense gate transformations of a standard LSTM with
//! same-padding convolutions over the channel concatenation of the input
//! frame and the previous hidden state, so hidden and cell states stay
//! spatial (`W×H×filters`) through time.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

use super::{init_uniform_fan_in, Bound, ParamId, ParamStore};

/// Hidden and cell state of one ConvLSTM layer, each `[W, H, filters]`.
#[derive(Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

struct Gate {
    kernels: ParamId,
    bias: ParamId,
}

/// Single ConvLSTM layer without peephole connections.
pub struct ConvLstmCell {
    in_channels: usize,
    out_channels: usize,
    // Gate order: input, forget, output, candidate.
    gates: [Gate; 4],
}

impl ConvLstmCell {
    /// The forget-gate bias starts at 1 so early training does not flush
    /// cell state.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl RngExt,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "convlstm kernel size must be odd, got {kernel}"
            )));
        }
        let cat = in_channels + out_channels;
        let fan_in = kernel * kernel * cat;
        let kshape = [kernel, kernel, cat, out_channels];
        let mut gate = |name: &str, forget: bool| {
            let kernels = store.add(
                format!("{prefix}.{name}.kernels"),
                init_uniform_fan_in(&kshape, fan_in, rng),
            );
            let bias_value = if forget {
                Tensor::full(&[out_channels], 1.0)
            } else {
                init_uniform_fan_in(&[out_channels], fan_in, rng)
            };
            let bias = store.add(format!("{prefix}.{name}.bias"), bias_value);
            Gate { kernels, bias }
        };
        let gates = [
            gate("gate_input", false),
            gate("gate_forget", true),
            gate("gate_output", false),
            gate("gate_candidate", false),
        ];
        Ok(ConvLstmCell {
            in_channels,
            out_channels,
            gates,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn zero_state(&self, g: &mut Graph, width: usize, height: usize) -> LstmState {
        let zeros = Tensor::zeros(&[width, height, self.out_channels]);
        LstmState {
            hidden: g.constant(zeros.clone()),
            cell: g.constant(zeros),
        }
    }

    /// One recurrence step: gates from a convolution over `[x, h]`, then
    /// `c' = f∘c + i∘tanh(candidate)` and `h' = o∘tanh(c')`.
    pub fn step(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let xsh = g.value(x).shape();
        if xsh.len() != 3 || xsh[2] != self.in_channels {
            return Err(Error::dim(format!(
                "convlstm step input {:?}, expected [W, H, {}]",
                xsh, self.in_channels
            )));
        }
        let joint = g.concat_last(x, state.hidden)?;
        let mut pre = [None; 4];
        for (slot, gate) in pre.iter_mut().zip(&self.gates) {
            *slot = Some(g.conv2d(joint, bound.var(gate.kernels), bound.var(gate.bias))?);
        }
        let input_gate = g.sigmoid(pre[0].unwrap());
        let forget_gate = g.sigmoid(pre[1].unwrap());
        let output_gate = g.sigmoid(pre[2].unwrap());
        let candidate = g.tanh(pre[3].unwrap());

        let kept = g.mul(forget_gate, state.cell)?;
        let written = g.mul(input_gate, candidate)?;
        let cell = g.add(kept, written)?;
        let cell_act = g.tanh(cell);
        let hidden = g.mul(output_gate, cell_act)?;
        Ok(LstmState { hidden, cell })
    }
}

/// Stacked ConvLSTM over a demand sequence, with a per-step single-filter
/// convolution projecting the top hidden state back to one channel.
///
/// When `single_filter_last_layer` is set the last stacked cell itself has
/// one filter and the projection is dropped.
pub struct StackedConvLstm {
    cells: Vec<ConvLstmCell>,
    projection: Option<Gate>,
}

impl StackedConvLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl RngExt,
        layers: usize,
        filters: usize,
        kernel: usize,
        single_filter_last_layer: bool,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("convlstm stack needs at least 1 layer".into()));
        }
        let mut cells = Vec::with_capacity(layers);
        let mut in_channels = 1;
        for layer in 0..layers {
            let out = if single_filter_last_layer && layer == layers - 1 {
                1
            } else {
                filters
            };
            cells.push(ConvLstmCell::new(
                store,
                rng,
                &format!("convlstm.{layer}"),
                in_channels,
                out,
                kernel,
            )?);
            in_channels = out;
        }
        let projection = if single_filter_last_layer {
            None
        } else {
            let fan_in = kernel * kernel * filters;
            Some(Gate {
                kernels: store.add(
                    "convlstm.projection.kernels",
                    init_uniform_fan_in(&[kernel, kernel, filters, 1], fan_in, rng),
                ),
                bias: store.add(
                    "convlstm.projection.bias",
                    init_uniform_fan_in(&[1], fan_in, rng),
                ),
            })
        };
        Ok(StackedConvLstm { cells, projection })
    }

    /// Run the stack over `frames` (each `[W, H, 1]`), returning the
    /// one-channel output map `[W, H]` for every step. Initial states are
    /// zero; layer `k` feeds layer `k+1` at every step.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, frames: &[Var]) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::Usage("convlstm stack on an empty sequence".into()));
        }
        let fsh = g.value(frames[0]).shape().to_vec();
        if fsh.len() != 3 || fsh[2] != 1 {
            return Err(Error::dim(format!(
                "convlstm stack expects frames [W, H, 1], got {fsh:?}"
            )));
        }
        let (w, h) = (fsh[0], fsh[1]);
        let mut states: Vec<LstmState> = self
            .cells
            .iter()
            .map(|c| c.zero_state(g, w, h))
            .collect();
        let mut outputs = Vec::with_capacity(frames.len());
        for &frame in frames {
            let mut x = frame;
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                *state = cell.step(g, bound, x, *state)?;
                x = state.hidden;
            }
            let top = match &self.projection {
                Some(p) => g.conv2d(x, bound.var(p.kernels), bound.var(p.bias))?,
                None => x,
            };
            outputs.push(g.reshape(top, vec![w, h])?);
        }
        Ok(outputs)
    }
}
