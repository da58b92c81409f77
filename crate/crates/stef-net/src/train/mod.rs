//! Mini-batch Adam training loop, MSE objective, and evaluation.

mod adam;
mod metrics;

pub use adam::AdamState;
pub use metrics::{evaluate, persistence_baseline, Metrics};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::StefNet;
use crate::tensor::{Graph, Tensor, Var};

/// Optimization hyperparameters, with the published defaults (16-sample
/// mini-batches, 50 epochs) and Adam's canonical constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds parameter init and the per-epoch batch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let rate_ok = self.learning_rate > 0.0; // false for NaN as well
        if !rate_ok {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        let epsilon_ok = self.epsilon > 0.0;
        if !epsilon_ok {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Mean squared error of a stacked batch: `(1/m) Σ_i ‖pred_i − target_i‖²`
/// with `m` the leading dimension.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let psh = g.value(pred).shape().to_vec();
    if psh != g.value(target).shape() {
        return Err(Error::dim(format!(
            "mse operands differ: {:?} vs {:?}",
            psh,
            g.value(target).shape()
        )));
    }
    if psh.is_empty() {
        return Err(Error::dim("mse needs at least a batch dimension"));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let total = g.reduce_sum(sq, None)?;
    Ok(g.mul_scalar(total, 1.0 / psh[0] as f64))
}

/// One epoch's record in the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the epoch's batch losses.
    pub loss: f64,
    pub wall_seconds: f64,
}

/// Train in place: per epoch, the sample order is reshuffled with the run
/// seed and each batch does forward / MSE / backward / Adam. Returns the
/// per-epoch loss history; `on_epoch` fires after each epoch for logging.
pub fn train(
    net: &mut StefNet,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Usage("training on an empty dataset".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = train_batch(net, samples, chunk, cfg, &mut adam).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!(
                    "epoch {epoch}, batch {batches}: {msg}"
                )),
                other => other,
            })?;
            loss_sum += loss;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(history)
}

fn train_batch(
    net: &mut StefNet,
    samples: &[Sample],
    chunk: &[usize],
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let mut preds = Vec::with_capacity(chunk.len());
    let mut target_data = Vec::new();
    let mut grid_shape = Vec::new();
    for &idx in chunk {
        let s = &samples[idx];
        let pass = net.forward(&mut g, &bound, &s.demands, &s.externals)?;
        preds.push(pass.prediction);
        target_data.extend_from_slice(s.target_scaled.data());
        grid_shape = s.target_scaled.shape().to_vec();
    }
    let pred = g.stack(&preds)?;
    let mut target_shape = vec![chunk.len()];
    target_shape.extend_from_slice(&grid_shape);
    let target = g.constant(Tensor::new(target_shape, target_data)?);
    let loss = mse_loss(&mut g, pred, target)?;
    let loss_value = g.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!(
            "loss is {loss_value}; parameter norm {:.6e}",
            param_norm(net)
        )));
    }
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = net
        .params()
        .iter()
        .zip(bound.vars())
        .map(|(p, &v)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.numel()])
        })
        .collect();
    adam.step(net.params_mut(), &grads, cfg);
    Ok(loss_value)
}

fn param_norm(net: &StefNet) -> f64 {
    net.params()
        .iter()
        .flat_map(|p| p.value.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FEATURE_COUNT;
    use crate::layers::init_uniform;
    use crate::model::{ModelConfig, FusionKind};
    use rand_chacha::ChaCha20Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            width: 3,
            height: 3,
            history: 2,
            convlstm_layers: 1,
            convlstm_filters: 2,
            convlstm_kernel: 3,
            single_filter_last_layer: false,
            fuzzy_inputs: FEATURE_COUNT,
            fuzzy_rules: 9,
            external_kernel: 3,
            fusion: FusionKind::Conv,
            fusion_kernel: 3,
            attention: true,
            external: true,
            dense_sizes: vec![6, 9],
        }
    }

    fn tiny_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let demands = init_uniform(&[2, 3, 3], 0.0, 1.0, &mut rng);
                let externals = init_uniform(&[2, FEATURE_COUNT], 0.0, 1.0, &mut rng);
                let target_scaled = init_uniform(&[3, 3], 0.0, 1.0, &mut rng);
                let target_raw = target_scaled
                    .data()
                    .iter()
                    .map(|v| (v * 10.0) as u32)
                    .collect();
                Sample {
                    demands,
                    externals,
                    target_scaled,
                    target_raw,
                    last_input_raw: vec![0; 9],
                    target_interval: k as i64,
                }
            })
            .collect()
    }

    fn tiny_net(seed: u64) -> StefNet {
        StefNet::new(tiny_config(), &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[1, 2, 2], 1.0));
        let b = g.constant(Tensor::zeros(&[1, 2, 2]));
        let loss = mse_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(loss).data(), &[4.0]);

        let same = mse_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).data(), &[0.0]);
    }

    #[test]
    fn mse_gradient_is_two_over_m_times_residual() {
        let mut g = Graph::new();
        let pred = g.leaf(
            Tensor::new(vec![2, 2], vec![0.5, 1.0, -0.5, 2.0]).unwrap(),
            true,
        );
        let target = g.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.5, 1.0]).unwrap());
        let loss = mse_loss(&mut g, pred, target).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(pred).unwrap();
        let residual = [0.5, 0.0, -1.0, 1.0];
        for (gv, r) in grad.iter().zip(residual) {
            assert!((gv - 2.0 / 2.0 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_loss_is_mean_of_per_sample_losses() {
        let net = tiny_net(91);
        let samples = tiny_samples(3, 92);

        let loss_of = |subset: &[&Sample]| -> f64 {
            let mut g = Graph::new();
            let bound = net.bind_frozen(&mut g);
            let preds: Vec<Var> = subset
                .iter()
                .map(|s| {
                    net.forward(&mut g, &bound, &s.demands, &s.externals)
                        .unwrap()
                        .prediction
                })
                .collect();
            let pred = g.stack(&preds).unwrap();
            let mut tdata = Vec::new();
            for s in subset {
                tdata.extend_from_slice(s.target_scaled.data());
            }
            let target = g
                .constant(Tensor::new(vec![subset.len(), 3, 3], tdata).unwrap());
            let loss = mse_loss(&mut g, pred, target).unwrap();
            g.value(loss).item().unwrap()
        };

        let batch = loss_of(&samples.iter().collect::<Vec<_>>());
        let mean_of_singles: f64 = samples.iter().map(|s| loss_of(&[s])).sum::<f64>() / 3.0;
        assert!((batch - mean_of_singles).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_leaves_the_model_unchanged() {
        let mut net = tiny_net(93);
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.data().to_vec()).collect();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut net, &tiny_samples(2, 94), &cfg, |_| {}).unwrap();
        assert!(history.is_empty());
        for (p, b) in net.params().iter().zip(before) {
            assert_eq!(p.value.data(), b.as_slice());
        }
    }

    #[test]
    fn repeated_small_steps_do_not_increase_the_loss() {
        let mut net = tiny_net(95);
        let samples = tiny_samples(1, 96);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            learning_rate: 1e-4,
            ..TrainConfig::default()
        };
        let history = train(&mut net, &samples, &cfg, |_| {}).unwrap();
        for w in history.windows(2) {
            assert!(
                w[1].loss <= w[0].loss + 1e-12,
                "loss rose: {} -> {}",
                w[0].loss,
                w[1].loss
            );
        }
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let run = || {
            let mut net = tiny_net(97);
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 2,
                ..TrainConfig::default()
            };
            let history = train(&mut net, &tiny_samples(5, 98), &cfg, |_| {}).unwrap();
            let losses: Vec<f64> = history.iter().map(|l| l.loss).collect();
            let params: Vec<Vec<f64>> =
                net.params().iter().map(|p| p.value.data().to_vec()).collect();
            (losses, params)
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut net = tiny_net(102);
        // Poison one parameter so the first forward produces NaN.
        for p in net.params_mut().iter_mut() {
            if p.name == "dense.1.bias" {
                p.value.data_mut()[0] = f64::NAN;
            }
        }
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match train(&mut net, &tiny_samples(2, 103), &cfg, |_| {}) {
            Err(Error::Numeric(msg)) => {
                assert!(msg.contains("epoch 0"), "diagnostics missing: {msg}");
                assert!(msg.contains("batch"), "diagnostics missing: {msg}");
            }
            other => panic!("expected a numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = tiny_net(99);
        assert!(matches!(
            train(&mut net, &[], &TrainConfig::default(), |_| {}),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn evaluation_is_order_insensitive() {
        let net = tiny_net(100);
        let samples = tiny_samples(4, 101);
        let scaling = crate::data::ScalingParams {
            demand_min: 0.0,
            demand_max: 10.0,
            numeric_min: vec![0.0; 5],
            numeric_max: vec![1.0; 5],
        };
        let forward = evaluate(&net, &samples, &scaling).unwrap();
        let mut reversed = samples;
        reversed.reverse();
        let backward = evaluate(&net, &reversed, &scaling).unwrap();
        assert!((forward.mae - backward.mae).abs() < 1e-10);
        assert!((forward.rmse - backward.rmse).abs() < 1e-10);
    }
}
