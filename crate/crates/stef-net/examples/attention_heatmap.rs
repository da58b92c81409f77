//! Export per-grid-cell attention weights for heatmap rendering.
//!
//! Trains briefly on synthetic data, then writes the attention stack of
//! one test sample as CSV rows and per-step portable graymaps, and prints
//! which time steps each region of the city listens to.
//!
//! ```bash
//! cargo run --release -p stef-net --example attention_heatmap
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stef_net::cli::{write_attention_csv, write_attention_pgm};
use stef_net::data::{synth_generate, Dataset, GridSpec, SynthConfig, FEATURE_COUNT};
use stef_net::model::{FusionKind, ModelConfig, StefNet};
use stef_net::train::{train, TrainConfig};

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
        days: 3,
        amplitude: 5.0,
        ..SynthConfig::default()
    };
    let (requests, externals) = synth_generate(7, &grid, &synth)?;
    let dataset = Dataset::build(requests, &externals, &grid, 0.75)?;
    let (train_samples, test_samples) = dataset.windows(6)?;

    let cfg = ModelConfig {
        width: 6,
        height: 6,
        history: 6,
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
        dense_sizes: vec![36, 36],
    };
    let train_cfg = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let mut net = StefNet::new(cfg.clone(), &mut ChaCha20Rng::seed_from_u64(train_cfg.seed))?;
    train(&mut net, &train_samples, &train_cfg, |_| {})?;

    let sample = &test_samples[0];
    let (_, attention) = net.predict(&sample.demands, &sample.externals)?;
    let attention = attention.expect("attention head enabled");

    let out = std::env::temp_dir().join("stef-attention-example");
    std::fs::create_dir_all(&out)?;
    write_attention_csv(&out.join("attention.csv"), &attention)?;
    for t in 0..cfg.history {
        write_attention_pgm(&out.join(format!("attention_t{t}.pgm")), &attention, t)?;
    }
    println!("attention maps written to {}", out.display());

    // Mean attention per step and which step each cell favors.
    println!("mean attention weight per time step (t = oldest .. newest):");
    for t in 0..cfg.history {
        let mean: f64 = (0..36).map(|g| attention.at(&[t, g / 6, g % 6])).sum::<f64>() / 36.0;
        let bar = "#".repeat((mean * 120.0).round() as usize);
        println!("  t-{:<2} {:.4} {bar}", cfg.history - t, mean);
    }
    println!("favored step per grid cell (index into the history window):");
    for j in (0..6).rev() {
        let row: String = (0..6)
            .map(|i| {
                let best = (0..cfg.history)
                    .max_by(|&a, &b| {
                        attention
                            .at(&[a, i, j])
                            .partial_cmp(&attention.at(&[b, i, j]))
                            .unwrap()
                    })
                    .unwrap();
                char::from_digit(best as u32, 10).unwrap()
            })
            .collect();
        println!("  |{row}|");
    }
    Ok(())
}
