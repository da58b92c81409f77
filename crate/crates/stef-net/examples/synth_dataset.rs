//! Generate a seeded synthetic dataset and inspect it.
//!
//! Writes a full dataset directory (raw request/weather CSVs, demand
//! frames, encoded features, manifest) and prints one interval's demand
//! grid as a text heatmap.
//!
//! ```bash
//! cargo run --release -p stef-net --example synth_dataset
//! ```

use stef_net::data::{is_rain_code, synth_generate, Dataset, GridSpec, SynthConfig};

fn main() -> stef_net::Result<()> {
    let grid = GridSpec {
        min_lon: 0.0,
        max_lon: 0.2,
        min_lat: 30.0,
        max_lat: 30.2,
        width: 12,
        height: 12,
        interval_seconds: 1800,
    };
    let synth = SynthConfig {
        days: 3,
        amplitude: 7.0,
        ..SynthConfig::default()
    };

    let (requests, externals) = synth_generate(11, &grid, &synth)?;
    let rainy = externals
        .iter()
        .filter(|r| is_rain_code(r.condition_code))
        .count();
    println!(
        "generated {} requests over {} intervals ({rainy} rainy)",
        requests.len(),
        externals.len()
    );

    let dataset = Dataset::build(requests, &externals, &grid, 0.8)?;
    let out = std::env::temp_dir().join("stef-synth-example");
    dataset.save(&out)?;
    println!("dataset written to {}", out.display());
    println!(
        "scaling: demand [{}, {}]",
        dataset.manifest.scaling.demand_min, dataset.manifest.scaling.demand_max
    );

    // Evening rush frame as a text heatmap.
    let frame_idx = 36; // 18:00 on day one
    let frame = &dataset.frames[frame_idx];
    let shades = [' ', '.', ':', '+', '*', '#', '@'];
    let peak = *frame.iter().max().unwrap() as f64;
    println!("demand snapshot at interval {frame_idx} (peak {peak}):");
    for j in (0..grid.height).rev() {
        let row: String = (0..grid.width)
            .map(|i| {
                let c = frame[i * grid.height + j] as f64;
                let shade = ((c / peak.max(1.0)) * (shades.len() - 1) as f64).round() as usize;
                shades[shade.min(shades.len() - 1)]
            })
            .collect();
        println!("  |{row}|");
    }

    let (train, test) = dataset.windows(8)?;
    println!("windows at k=8: {} train, {} test", train.len(), test.len());
    Ok(())
}
