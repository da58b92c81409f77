//! Fully connected head mapping the attended vector back to a grid.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

use super::{init_uniform_fan_in, Bound, ParamId, ParamStore};

struct DenseLayer {
    weights: ParamId,
    bias: ParamId,
    output: usize,
}

/// Affine layers with rectifier activations on all but the last layer;
/// the last layer is linear so scaled targets near the range edges stay
/// reachable.
pub struct DenseStack {
    input: usize,
    layers: Vec<DenseLayer>,
}

impl DenseStack {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl RngExt,
        input: usize,
        sizes: &[usize],
    ) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("dense stack needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len());
        let mut fan_in = input;
        for (idx, &out) in sizes.iter().enumerate() {
            layers.push(DenseLayer {
                weights: store.add(
                    format!("dense.{idx}.weights"),
                    init_uniform_fan_in(&[fan_in, out], fan_in, rng),
                ),
                bias: store.add(
                    format!("dense.{idx}.bias"),
                    init_uniform_fan_in(&[out], fan_in, rng),
                ),
                output: out,
            });
            fan_in = out;
        }
        Ok(DenseStack { input, layers })
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    /// Map a `[input]` vector to a `[output]` vector.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        if g.value(x).numel() != self.input {
            return Err(Error::dim(format!(
                "dense stack input has {} elements, expected {}",
                g.value(x).numel(),
                self.input
            )));
        }
        let mut cur = g.reshape(x, vec![1, self.input])?;
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let lin = g.matmul(cur, bound.var(layer.weights))?;
            let affine = g.add(lin, bound.var(layer.bias))?;
            cur = if idx == last { affine } else { g.relu(affine) };
        }
        g.reshape(cur, vec![self.output_size()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_uniform;
    use crate::tensor::{gradcheck_multi, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_parameters_map_to_zero_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let mut store = ParamStore::new();
        let stack = DenseStack::new(&mut store, &mut rng, 6, &[4, 6]).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let x = g.constant(init_uniform(&[6], -1.0, 1.0, &mut rng));
        let out = stack.forward(&mut g, &bound, x).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_sizes_produce_a_400_vector() {
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        let mut store = ParamStore::new();
        let stack = DenseStack::new(&mut store, &mut rng, 400, &[100, 200, 400]).unwrap();
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let x = g.constant(Tensor::zeros(&[400]));
        let out = stack.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(out).numel(), 400);
        let grid = g.reshape(out, vec![20, 20]).unwrap();
        assert_eq!(g.value(grid).shape(), &[20, 20]);
    }

    #[test]
    fn dense_stack_gradcheck() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let mut store = ParamStore::new();
        let stack = DenseStack::new(&mut store, &mut rng, 5, &[4, 3, 5]).unwrap();
        let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        let n_params = inputs.len();
        inputs.push(init_uniform(&[5], -1.0, 1.0, &mut rng));

        let rel = gradcheck_multi(
            |g, vars| {
                let bound = Bound::from_vars(vars[..n_params].to_vec());
                let out = stack.forward(g, &bound, vars[n_params])?;
                let sq = g.square(out);
                g.reduce_sum(sq, None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-4, "rel err {rel}");
    }
}
