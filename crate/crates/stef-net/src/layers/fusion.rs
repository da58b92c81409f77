//! Per-step fusion of the demand-branch and external-branch maps.
//!
//! The default fuses by channel concatenation plus a small same-padding
//! convolution with one filter, needing `w·h·2 + 1` parameters. The
//! weighted-addition alternative (one weight grid per branch, `2·W·H`
//! parameters) is kept for ablation.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

use super::{init_uniform_fan_in, Bound, ParamId, ParamStore};

pub struct ConvFusion {
    kernel: usize,
    kernels: ParamId,
    bias: ParamId,
}

impl ConvFusion {
    pub fn new(store: &mut ParamStore, rng: &mut impl RngExt, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fusion kernel size must be odd, got {kernel}"
            )));
        }
        let fan_in = kernel * kernel * 2;
        Ok(ConvFusion {
            kernel,
            kernels: store.add(
                "fusion.kernels",
                init_uniform_fan_in(&[kernel, kernel, 2, 1], fan_in, rng),
            ),
            bias: store.add("fusion.bias", init_uniform_fan_in(&[1], fan_in, rng)),
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn fuse(&self, g: &mut Graph, bound: &Bound, demand: Var, external: Var) -> Result<Var> {
        let shape = check_pair(g, demand, external)?;
        let (w, h) = (shape[0], shape[1]);
        let a = g.reshape(demand, vec![w, h, 1])?;
        let b = g.reshape(external, vec![w, h, 1])?;
        let joint = g.concat_last(a, b)?;
        let fused = g.conv2d(joint, bound.var(self.kernels), bound.var(self.bias))?;
        g.reshape(fused, vec![w, h])
    }
}

pub struct WeightedFusion {
    demand_weights: ParamId,
    external_weights: ParamId,
}

impl WeightedFusion {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl RngExt,
        width: usize,
        height: usize,
    ) -> Self {
        WeightedFusion {
            demand_weights: store.add(
                "fusion.demand_weights",
                init_uniform_fan_in(&[width, height], 2, rng),
            ),
            external_weights: store.add(
                "fusion.external_weights",
                init_uniform_fan_in(&[width, height], 2, rng),
            ),
        }
    }

    pub fn fuse(&self, g: &mut Graph, bound: &Bound, demand: Var, external: Var) -> Result<Var> {
        check_pair(g, demand, external)?;
        let weighted_demand = g.mul(bound.var(self.demand_weights), demand)?;
        let weighted_external = g.mul(bound.var(self.external_weights), external)?;
        g.add(weighted_demand, weighted_external)
    }
}

pub enum Fusion {
    Conv(ConvFusion),
    Weighted(WeightedFusion),
}

impl Fusion {
    pub fn fuse(&self, g: &mut Graph, bound: &Bound, demand: Var, external: Var) -> Result<Var> {
        match self {
            Fusion::Conv(f) => f.fuse(g, bound, demand, external),
            Fusion::Weighted(f) => f.fuse(g, bound, demand, external),
        }
    }
}

fn check_pair(g: &Graph, demand: Var, external: Var) -> Result<Vec<usize>> {
    let dsh = g.value(demand).shape().to_vec();
    let esh = g.value(external).shape();
    if dsh.len() != 2 || dsh != esh {
        return Err(Error::dim(format!(
            "fusion inputs must be equal W×H maps, got {dsh:?} and {esh:?}"
        )));
    }
    Ok(dsh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_uniform;
    use crate::tensor::{gradcheck_multi, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn conv_fused(store: &ParamStore, fusion: &ConvFusion, a: &Tensor, b: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let out = fusion.fuse(&mut g, &bound, av, bv).unwrap();
        g.value(out).data().to_vec()
    }

    /// Kernel with a single 1 at the center of the given channel.
    fn center_one(store: &mut ParamStore, fusion: &ConvFusion, channels: &[usize]) {
        let k = fusion.kernel;
        let center = k / 2;
        let mut kernels = Tensor::zeros(&[k, k, 2, 1]);
        for &c in channels {
            kernels.set(&[center, center, c, 0], 1.0);
        }
        let params: Vec<_> = store.iter_mut().collect();
        for p in params {
            if p.name == "fusion.kernels" {
                p.value = kernels.clone();
            } else if p.name == "fusion.bias" {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    #[test]
    fn center_one_selects_a_channel() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let mut store = ParamStore::new();
        let fusion = ConvFusion::new(&mut store, &mut rng, 3).unwrap();
        center_one(&mut store, &fusion, &[0]);

        let a = init_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let b = init_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        assert_eq!(conv_fused(&store, &fusion, &a, &b), a.data());
    }

    #[test]
    fn center_one_on_both_channels_adds() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let fusion = ConvFusion::new(&mut store, &mut rng, 3).unwrap();
        center_one(&mut store, &fusion, &[0, 1]);

        let a = init_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let b = init_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let out = conv_fused(&store, &fusion, &a, &b);
        for (i, &v) in out.iter().enumerate() {
            assert!((v - (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn parameter_counts_at_default_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let mut conv_store = ParamStore::new();
        ConvFusion::new(&mut conv_store, &mut rng, 3).unwrap();
        assert_eq!(conv_store.scalar_count(), 19);

        let mut weighted_store = ParamStore::new();
        WeightedFusion::new(&mut weighted_store, &mut rng, 20, 20);
        assert_eq!(weighted_store.scalar_count(), 800);
    }

    #[test]
    fn weighted_selection_and_averaging() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let mut store = ParamStore::new();
        let fusion = WeightedFusion::new(&mut store, &mut rng, 3, 3);
        let a = init_uniform(&[3, 3], -1.0, 1.0, &mut rng);
        let b = init_uniform(&[3, 3], -1.0, 1.0, &mut rng);

        let run = |wp: f64, we: f64, store: &mut ParamStore| {
            for p in store.iter_mut() {
                if p.name == "fusion.demand_weights" {
                    p.value.data_mut().fill(wp);
                } else {
                    p.value.data_mut().fill(we);
                }
            }
            let mut g = Graph::new();
            let bound = store.bind_frozen(&mut g);
            let av = g.constant(a.clone());
            let bv = g.constant(b.clone());
            let out = fusion.fuse(&mut g, &bound, av, bv).unwrap();
            g.value(out).data().to_vec()
        };

        assert_eq!(run(1.0, 0.0, &mut store), a.data());
        let mean = run(0.5, 0.5, &mut store);
        for (i, &v) in mean.iter().enumerate() {
            assert!((v - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_fusion_gradcheck() {
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        let mut store = ParamStore::new();
        let fusion = WeightedFusion::new(&mut store, &mut rng, 4, 4);
        let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        inputs.push(init_uniform(&[4, 4], -1.0, 1.0, &mut rng));
        inputs.push(init_uniform(&[4, 4], -1.0, 1.0, &mut rng));

        let rel = gradcheck_multi(
            |g, vars| {
                let bound = Bound::from_vars(vars[..2].to_vec());
                let out = fusion.fuse(g, &bound, vars[2], vars[3])?;
                let sq = g.square(out);
                g.reduce_sum(sq, None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-6, "rel err {rel}");
    }

    #[test]
    fn conv_fusion_gradcheck() {
        let mut rng = ChaCha20Rng::seed_from_u64(46);
        let mut store = ParamStore::new();
        let fusion = ConvFusion::new(&mut store, &mut rng, 3).unwrap();
        let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
        inputs.push(init_uniform(&[4, 4], -1.0, 1.0, &mut rng));
        inputs.push(init_uniform(&[4, 4], -1.0, 1.0, &mut rng));

        let rel = gradcheck_multi(
            |g, vars| {
                let bound = Bound::from_vars(vars[..2].to_vec());
                let out = fusion.fuse(g, &bound, vars[2], vars[3])?;
                let sq = g.square(out);
                g.reduce_sum(sq, None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn one_by_one_conv_fusion_matches_constant_weighted_addition() {
        // A 1×1 conv kernel [a, b] with zero bias is exactly weighted
        // addition with spatially constant weights a and b.
        let mut rng = ChaCha20Rng::seed_from_u64(47);
        let mut store = ParamStore::new();
        let fusion = ConvFusion::new(&mut store, &mut rng, 1).unwrap();
        let (wa, wb) = (0.3, -1.2);
        for p in store.iter_mut() {
            if p.name == "fusion.kernels" {
                p.value = Tensor::new(vec![1, 1, 2, 1], vec![wa, wb]).unwrap();
            } else {
                p.value.data_mut().fill(0.0);
            }
        }
        let a = init_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let b = init_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let fused = conv_fused(&store, &fusion, &a, &b);
        for (i, &v) in fused.iter().enumerate() {
            let expected = wa * a.data()[i] + wb * b.data()[i];
            assert!((v - expected).abs() < 1e-15);
        }
    }
}
