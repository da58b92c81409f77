//! Compare the full model against its ablation variants.
//!
//! Trains four configurations on the same synthetic dataset (the full
//! model, weighted-addition fusion, no attention, no external branch)
//! and prints a metric table plus each variant's parameter budget.
//!
//! ```bash
//! cargo run --release -p stef-net --example ablation_compare
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stef_net::data::{synth_generate, Dataset, GridSpec, SynthConfig, FEATURE_COUNT};
use stef_net::model::{ablate, AblationVariant, FusionKind, ModelConfig, StefNet};
use stef_net::train::{evaluate, persistence_baseline, train, TrainConfig};

fn main() -> stef_net::Result<()> {
    let grid = GridSpec {
        min_lon: 0.0,
        max_lon: 1.0,
        min_lat: 0.0,
        max_lat: 1.0,
        width: 6,
        height: 6,
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

    let base = ModelConfig {
        width: 6,
        height: 6,
        history: 8,
        convlstm_layers: 2,
        convlstm_filters: 4,
        convlstm_kernel: 3,
        single_filter_last_layer: false,
        fuzzy_inputs: FEATURE_COUNT,
        fuzzy_rules: 36,
        external_kernel: 3,
        fusion: FusionKind::Conv,
        fusion_kernel: 3,
        attention: true,
        external: true,
        dense_sizes: vec![36, 72, 36],
    };
    let train_cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };

    let variants: Vec<(String, ModelConfig)> = vec![
        ("full model".into(), base.clone()),
        (
            AblationVariant::WeightedAddition.to_string(),
            ablate(&base, AblationVariant::WeightedAddition),
        ),
        (
            AblationVariant::NoAttention.to_string(),
            ablate(&base, AblationVariant::NoAttention),
        ),
        (
            AblationVariant::NoExternal.to_string(),
            ablate(&base, AblationVariant::NoExternal),
        ),
    ];

    println!("{:<18} {:>10} {:>9} {:>9}", "variant", "params", "MAE", "RMSE");
    for (name, cfg) in variants {
        let mut net = StefNet::new(cfg, &mut ChaCha20Rng::seed_from_u64(train_cfg.seed))?;
        train(&mut net, &train_samples, &train_cfg, |_| {})?;
        let m = evaluate(&net, &test_samples, &dataset.manifest.scaling)?;
        println!(
            "{:<18} {:>10} {:>9.4} {:>9.4}",
            name,
            net.params().scalar_count(),
            m.mae,
            m.rmse
        );
    }
    let baseline = persistence_baseline(&test_samples)?;
    println!(
        "{:<18} {:>10} {:>9.4} {:>9.4}",
        "persistence", "-", baseline.mae, baseline.rmse
    );
    Ok(())
}
