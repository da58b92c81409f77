//! Gaussian fuzzy network: membership layer plus product rule layer.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

use super::{init_uniform, Bound, ParamId, ParamStore};

/// Smallest squared width used in the membership exponent.
const WIDTH_SQ_FLOOR: f64 = 1e-6;

/// Post-init floor on widths; a product over many near-zero memberships
/// would underflow its gradients.
const WIDTH_INIT_FLOOR: f64 = 0.05;

/// Fuzzy layer with `n` inputs and `m` rules.
///
/// Each input element is split by `m` Gaussian memberships
/// `h[i][j] = exp(-(x[i] - center[i][j])^2 / width[i][j]^2)` and each rule
/// output is the fuzzy AND, the product of its memberships over `i`, so
/// every rule activation lies in `(0, 1]`. One layer is shared across all
/// time steps of a sample.
pub struct FuzzyLayer {
    inputs: usize,
    rules: usize,
    centers: ParamId,
    widths: ParamId,
}

impl FuzzyLayer {
    /// Centers and widths start uniform in `[0, 1]`; widths are then floored
    /// at 0.05.
    pub fn new(store: &mut ParamStore, rng: &mut impl RngExt, inputs: usize, rules: usize) -> Self {
        let centers = store.add(
            "fuzzy.centers",
            init_uniform(&[inputs, rules], 0.0, 1.0, rng),
        );
        let mut width_init = init_uniform(&[inputs, rules], 0.0, 1.0, rng);
        for w in width_init.data_mut() {
            *w = w.max(WIDTH_INIT_FLOOR);
        }
        let widths = store.add("fuzzy.widths", width_init);
        FuzzyLayer {
            inputs,
            rules,
            centers,
            widths,
        }
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    /// Rule activations `[m]` for one external-feature vector `[n]`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let xsh = g.value(x).shape();
        if xsh != [self.inputs] {
            return Err(Error::dim(format!(
                "fuzzy input {:?}, expected [{}]",
                xsh, self.inputs
            )));
        }
        let column = g.reshape(x, vec![self.inputs, 1])?;
        let deviation = g.sub(column, bound.var(self.centers))?;
        let dev_sq = g.square(deviation);
        let width_sq = g.square(bound.var(self.widths));
        let width_sq = g.clamp_min(width_sq, WIDTH_SQ_FLOOR);
        let scaled = g.div(dev_sq, width_sq)?;
        let neg = g.neg(scaled);
        let membership = g.exp(neg);
        g.reduce_prod(membership, Some(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_multi, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn forward_values(layer: &FuzzyLayer, store: &ParamStore, x: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = layer.forward(&mut g, &bound, xv).unwrap();
        g.value(out).data().to_vec()
    }

    #[test]
    fn input_at_centers_gives_unit_rule_output() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let layer = FuzzyLayer::new(&mut store, &mut rng, 3, 5);

        // x_i = center[i][2] for all i: rule 2 fires at exactly 1.
        let centers = store.get(layer.centers).value.clone();
        let x = Tensor::new(
            vec![3],
            (0..3).map(|i| centers.at(&[i, 2])).collect(),
        )
        .unwrap();
        let out = forward_values(&layer, &store, &x);
        assert_eq!(out[2], 1.0);
        for (j, &v) in out.iter().enumerate() {
            assert!(v > 0.0 && v <= 1.0, "rule {j} out of (0,1]: {v}");
        }
    }

    #[test]
    fn one_width_offset_gives_e_minus_two() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let layer = FuzzyLayer::new(&mut store, &mut rng, 2, 3);

        let centers = store.get(layer.centers).value.clone();
        let widths = store.get(layer.widths).value.clone();
        let j = 1;
        let x = Tensor::new(
            vec![2],
            (0..2)
                .map(|i| centers.at(&[i, j]) + widths.at(&[i, j]))
                .collect(),
        )
        .unwrap();
        let out = forward_values(&layer, &store, &x);
        assert!((out[j] - (-2.0f64).exp()).abs() < 1e-12, "got {}", out[j]);
    }

    #[test]
    fn full_size_layer_gradcheck() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let layer = FuzzyLayer::new(&mut store, &mut rng, 24, 400);
        let x = init_uniform(&[24], 0.0, 1.0, &mut rng);
        let inputs = vec![
            store.get(layer.centers).value.clone(),
            store.get(layer.widths).value.clone(),
            x,
        ];
        let rel = gradcheck_multi(
            |g, vars| {
                let bound = Bound::from_vars(vars[..2].to_vec());
                let out = layer.forward(g, &bound, vars[2])?;
                let sq = g.square(out);
                g.reduce_sum(sq, None)
            },
            &inputs,
            // Floored widths make the memberships sharp; a smaller step
            // keeps finite-difference truncation below the tolerance.
            3e-5,
        )
        .unwrap();
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn rule_permutation_equivariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let layer = FuzzyLayer::new(&mut store, &mut rng, 4, 6);
        let x = init_uniform(&[4], 0.0, 1.0, &mut rng);
        let base = forward_values(&layer, &store, &x);

        // Swap rule columns 1 and 4 in both parameter matrices.
        let mut permuted = store.clone();
        for p in permuted.iter_mut() {
            for i in 0..4 {
                let a = p.value.at(&[i, 1]);
                let b = p.value.at(&[i, 4]);
                p.value.set(&[i, 1], b);
                p.value.set(&[i, 4], a);
            }
        }
        let swapped = forward_values(&layer, &permuted, &x);
        assert_eq!(base[1], swapped[4]);
        assert_eq!(base[4], swapped[1]);
        assert_eq!(base[0], swapped[0]);
    }

    #[test]
    fn moving_away_from_a_center_never_raises_activation() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let mut store = ParamStore::new();
        let layer = FuzzyLayer::new(&mut store, &mut rng, 3, 4);
        let centers = store.get(layer.centers).value.clone();

        let j = 2;
        let mut x: Vec<f64> = (0..3).map(|i| centers.at(&[i, j])).collect();
        let mut last = f64::INFINITY;
        for step in 0..6 {
            let out = forward_values(
                &layer,
                &store,
                &Tensor::new(vec![3], x.clone()).unwrap(),
            );
            assert!(
                out[j] <= last + 1e-15,
                "activation rose at step {step}: {} -> {}",
                last,
                out[j]
            );
            last = out[j];
            x[0] += 0.2; // widen |x_0 - center| monotonically
        }
    }
}
