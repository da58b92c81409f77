//! End-to-end training on a synthetic city.
//!
//! Builds a small dataset, trains the full model (ConvLSTM branch, fuzzy
//! external branch, conv fusion, BiLSTM + attention, dense head), and
//! compares the test error against the persistence baseline.
//!
//! ```bash
//! cargo run --release -p stef-net --example train_forecaster
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stef_net::data::{synth_generate, Dataset, GridSpec, SynthConfig, FEATURE_COUNT};
use stef_net::model::{FusionKind, ModelConfig, StefNet};
use stef_net::train::{evaluate, persistence_baseline, train, TrainConfig};

fn main() -> stef_net::Result<()> {
    let grid = GridSpec {
        min_lon: 0.0,
        max_lon: 1.0,
        min_lat: 0.0,
        max_lat: 1.0,
        width: 8,
        height: 8,
        interval_seconds: 1800,
    };
    let synth = SynthConfig {
        days: 4,
        amplitude: 6.0,
        ..SynthConfig::default()
    };
    let (requests, externals) = synth_generate(20_260_810, &grid, &synth)?;
    let dataset = Dataset::build(requests, &externals, &grid, 0.75)?;
    let (train_samples, test_samples) = dataset.windows(8)?;
    println!(
        "dataset: {} train / {} test samples on an 8x8 grid",
        train_samples.len(),
        test_samples.len()
    );

    let model_cfg = ModelConfig {
        width: 8,
        height: 8,
        history: 8,
        convlstm_layers: 3,
        convlstm_filters: 6,
        convlstm_kernel: 3,
        single_filter_last_layer: false,
        fuzzy_inputs: FEATURE_COUNT,
        fuzzy_rules: 64,
        external_kernel: 3,
        fusion: FusionKind::Conv,
        fusion_kernel: 3,
        attention: true,
        external: true,
        dense_sizes: vec![64, 128, 64],
    };
    let train_cfg = TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    };

    let mut net = StefNet::new(model_cfg, &mut ChaCha20Rng::seed_from_u64(train_cfg.seed))?;
    println!("model: {} trainable parameters", net.params().scalar_count());

    let history = train(&mut net, &train_samples, &train_cfg, |e| {
        println!("  epoch {:>2}  loss {:.5}  ({:.1}s)", e.epoch, e.loss, e.wall_seconds);
    })?;
    println!(
        "loss: {:.5} -> {:.5}",
        history.first().unwrap().loss,
        history.last().unwrap().loss
    );

    let model_metrics = evaluate(&net, &test_samples, &dataset.manifest.scaling)?;
    let baseline = persistence_baseline(&test_samples)?;
    println!(
        "test  model:       MAE {:.4}  RMSE {:.4}",
        model_metrics.mae, model_metrics.rmse
    );
    println!(
        "test  persistence: MAE {:.4}  RMSE {:.4}",
        baseline.mae, baseline.rmse
    );
    Ok(())
}
