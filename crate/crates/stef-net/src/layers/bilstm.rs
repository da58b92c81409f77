//! Bidirectional LSTM over the fused per-step maps.
//!
//! Both directions consume the same flattened sequence, one in step order
//! and one reversed, and their hidden states are added elementwise. The
//! unit count equals the number of grid cells so each hidden element keeps
//! a per-cell meaning for the attention layer.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

use super::{init_uniform_fan_in, Bound, ParamId, ParamStore};

struct DenseGate {
    input_weights: ParamId,
    hidden_weights: ParamId,
    bias: ParamId,
}

struct Direction {
    // Gate order: input, forget, output, candidate.
    gates: [DenseGate; 4],
}

pub struct BiLstm {
    units: usize,
    forward_dir: Direction,
    backward_dir: Direction,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, rng: &mut impl RngExt, units: usize) -> Self {
        let mut direction = |dir: &str| {
            let mut gate = |name: &str| DenseGate {
                input_weights: store.add(
                    format!("bilstm.{dir}.{name}.input_weights"),
                    init_uniform_fan_in(&[units, units], units, rng),
                ),
                hidden_weights: store.add(
                    format!("bilstm.{dir}.{name}.hidden_weights"),
                    init_uniform_fan_in(&[units, units], units, rng),
                ),
                bias: store.add(
                    format!("bilstm.{dir}.{name}.bias"),
                    init_uniform_fan_in(&[units], units, rng),
                ),
            };
            Direction {
                gates: [
                    gate("gate_input"),
                    gate("gate_forget"),
                    gate("gate_output"),
                    gate("gate_candidate"),
                ],
            }
        };
        let forward_dir = direction("forward");
        let backward_dir = direction("backward");
        BiLstm {
            units,
            forward_dir,
            backward_dir,
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    fn run_direction(
        &self,
        g: &mut Graph,
        bound: &Bound,
        dir: &Direction,
        steps: &[Var],
    ) -> Result<Vec<Var>> {
        let mut hidden = g.constant(Tensor::zeros(&[1, self.units]));
        let mut cell = g.constant(Tensor::zeros(&[1, self.units]));
        let mut outputs = Vec::with_capacity(steps.len());
        for &x in steps {
            let row = g.reshape(x, vec![1, self.units])?;
            let mut pre = [None; 4];
            for (slot, gp) in pre.iter_mut().zip(&dir.gates) {
                let from_input = g.matmul(row, bound.var(gp.input_weights))?;
                let from_hidden = g.matmul(hidden, bound.var(gp.hidden_weights))?;
                let summed = g.add(from_input, from_hidden)?;
                *slot = Some(g.add(summed, bound.var(gp.bias))?);
            }
            let input_gate = g.sigmoid(pre[0].unwrap());
            let forget_gate = g.sigmoid(pre[1].unwrap());
            let output_gate = g.sigmoid(pre[2].unwrap());
            let candidate = g.tanh(pre[3].unwrap());
            let kept = g.mul(forget_gate, cell)?;
            let written = g.mul(input_gate, candidate)?;
            cell = g.add(kept, written)?;
            let cell_act = g.tanh(cell);
            hidden = g.mul(output_gate, cell_act)?;
            outputs.push(hidden);
        }
        Ok(outputs)
    }

    /// Per-step summed hidden states, each reshaped back to `[units]`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, steps: &[Var]) -> Result<Vec<Var>> {
        if steps.is_empty() {
            return Err(Error::Usage("bilstm on an empty sequence".into()));
        }
        for &s in steps {
            if g.value(s).numel() != self.units {
                return Err(Error::dim(format!(
                    "bilstm step has {} elements, expected {}",
                    g.value(s).numel(),
                    self.units
                )));
            }
        }
        let fwd = self.run_direction(g, bound, &self.forward_dir, steps)?;
        let reversed: Vec<Var> = steps.iter().rev().copied().collect();
        let mut bwd = self.run_direction(g, bound, &self.backward_dir, &reversed)?;
        bwd.reverse();

        let mut combined = Vec::with_capacity(steps.len());
        for (f, b) in fwd.into_iter().zip(bwd) {
            let summed = g.add(f, b)?;
            combined.push(g.reshape(summed, vec![self.units])?);
        }
        Ok(combined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_uniform;
    use crate::tensor::gradcheck_multi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn output_count_and_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, &mut rng, 9);
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let steps: Vec<Var> = (0..4)
            .map(|_| {
                let t = init_uniform(&[9], -1.0, 1.0, &mut rng);
                g.constant(t)
            })
            .collect();
        let outs = lstm.forward(&mut g, &bound, &steps).unwrap();
        assert_eq!(outs.len(), 4);
        for o in outs {
            assert_eq!(g.value(o).shape(), &[9]);
        }
    }

    #[test]
    fn direction_order_matters() {
        // A middle step must see influence from both ends of the sequence.
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, &mut rng, 4);
        let steps: Vec<Tensor> = (0..3).map(|_| init_uniform(&[4], -1.0, 1.0, &mut rng)).collect();

        let run = |steps: &[Tensor]| {
            let mut g = Graph::new();
            let bound = store.bind_frozen(&mut g);
            let vars: Vec<Var> = steps.iter().map(|t| g.constant(t.clone())).collect();
            let outs = lstm.forward(&mut g, &bound, &vars).unwrap();
            g.value(outs[1]).data().to_vec()
        };

        let base = run(&steps);
        let mut bump_last = steps.clone();
        bump_last[2].data_mut()[0] += 0.5;
        let with_later_change = run(&bump_last);
        assert!(
            base.iter()
                .zip(&with_later_change)
                .any(|(a, b)| (a - b).abs() > 1e-9),
            "middle output must depend on a later step via the backward pass"
        );
    }

    #[test]
    fn bilstm_gradcheck() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, &mut rng, 3);
        let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        inputs.push(init_uniform(&[3], -1.0, 1.0, &mut rng));
        inputs.push(init_uniform(&[3], -1.0, 1.0, &mut rng));

        let rel = gradcheck_multi(
            |g, vars| {
                let bound = Bound::from_vars(vars[..n_params].to_vec());
                let outs = lstm.forward(g, &bound, &vars[n_params..])?;
                let stacked = g.stack(&outs)?;
                let sq = g.square(stacked);
                g.reduce_sum(sq, None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-4, "rel err {rel}");
    }
}
