//! Per-grid-cell attention over time steps.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

use super::{init_uniform_fan_in, Bound, ParamId, ParamStore};

/// Scores the `T` hidden values of every grid cell with one trainable
/// length-`T` vector (shared across cells), normalizes the scores with a
/// softmax over the time axis, and returns the weighted sum of hidden
/// states per cell.
pub struct TemporalAttention {
    horizon: usize,
    score: ParamId,
}

impl TemporalAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl RngExt, horizon: usize) -> Self {
        let score = store.add(
            "attention.score",
            init_uniform_fan_in(&[horizon], horizon, rng),
        );
        TemporalAttention { horizon, score }
    }

    /// `hidden` is `[T, cells]`. Returns the attended `[cells]` output and
    /// the attention weights `[T, cells]`, which sum to 1 over `T` for
    /// every cell.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, hidden: Var) -> Result<(Var, Var)> {
        let hsh = g.value(hidden).shape();
        if hsh.len() != 2 || hsh[0] != self.horizon {
            return Err(Error::dim(format!(
                "attention input {:?}, expected [{}, cells]",
                hsh, self.horizon
            )));
        }
        let score_col = g.reshape(bound.var(self.score), vec![self.horizon, 1])?;
        let scores = g.mul(score_col, hidden)?;
        let weights = g.softmax(scores, 0)?;
        let weighted = g.mul(weights, hidden)?;
        let context = g.reduce_sum(weighted, Some(0))?;
        Ok((context, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_uniform;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn run(horizon: usize, cells: usize, seed: u64, hidden: Tensor) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let attn = TemporalAttention::new(&mut store, &mut rng, horizon);
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let h = g.constant(hidden);
        let (ctx, w) = attn.forward(&mut g, &bound, h).unwrap();
        let _ = cells;
        (g.value(ctx).data().to_vec(), g.value(w).data().to_vec())
    }

    #[test]
    fn single_step_gets_weight_one() {
        let hidden = init_uniform(&[1, 6], -1.0, 1.0, &mut ChaCha20Rng::seed_from_u64(31));
        let (ctx, w) = run(1, 6, 32, hidden.clone());
        assert!(w.iter().all(|&v| v == 1.0));
        assert_eq!(ctx, hidden.data());
    }

    #[test]
    fn zero_scores_give_uniform_weights() {
        // Constant hidden states and a zeroed score vector: every step
        // weighs 1/T.
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let mut store = ParamStore::new();
        let attn = TemporalAttention::new(&mut store, &mut rng, 4);
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let h = g.constant(Tensor::full(&[4, 5], 0.7));
        let (_, w) = attn.forward(&mut g, &bound, h).unwrap();
        for &v in g.value(w).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_one_per_cell() {
        let hidden = init_uniform(&[5, 12], -2.0, 2.0, &mut ChaCha20Rng::seed_from_u64(34));
        let (_, w) = run(5, 12, 35, hidden);
        for cell in 0..12 {
            let sum: f64 = (0..5).map(|t| w[t * 12 + cell]).sum();
            assert!((sum - 1.0).abs() < 1e-9, "cell {cell} sums to {sum}");
        }
    }

    #[test]
    fn context_stays_in_per_cell_hull() {
        // The attended value is a convex combination over time steps.
        let hidden = init_uniform(&[6, 8], -3.0, 3.0, &mut ChaCha20Rng::seed_from_u64(36));
        let (ctx, _) = run(6, 8, 37, hidden.clone());
        for (cell, &value) in ctx.iter().enumerate() {
            let column: Vec<f64> = (0..6).map(|t| hidden.at(&[t, cell])).collect();
            let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                value >= lo - 1e-12 && value <= hi + 1e-12,
                "cell {cell}: {value} outside [{lo}, {hi}]"
            );
        }
    }
}
