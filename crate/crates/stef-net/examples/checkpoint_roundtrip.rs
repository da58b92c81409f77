//! Save and restore a model, bit for bit.
//!
//! The checkpoint embeds the model configuration, so loading needs no
//! external description; the restored model predicts identically.
//!
//! ```bash
//! cargo run --release -p stef-net --example checkpoint_roundtrip
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stef_net::layers::init_uniform;
use stef_net::model::{load_bytes, save_bytes, FusionKind, ModelConfig, StefNet};

fn main() -> stef_net::Result<()> {
    let cfg = ModelConfig {
        width: 5,
        height: 5,
        history: 4,
        convlstm_layers: 2,
        convlstm_filters: 4,
        convlstm_kernel: 3,
        single_filter_last_layer: false,
        fuzzy_inputs: 24,
        fuzzy_rules: 25,
        external_kernel: 3,
        fusion: FusionKind::Conv,
        fusion_kernel: 3,
        attention: true,
        external: true,
        dense_sizes: vec![25, 25],
    };
    let net = StefNet::new(cfg.clone(), &mut ChaCha20Rng::seed_from_u64(99))?;

    println!("parameter budget by component:");
    for (name, count) in cfg.parameter_census() {
        println!("  {name:<24} {count:>8}");
    }
    println!("  {:<24} {:>8}", "total", cfg.parameter_total());

    let bytes = save_bytes(&net);
    println!("checkpoint: {} bytes", bytes.len());
    let restored = load_bytes(&bytes)?;

    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let demands = init_uniform(&[4, 5, 5], 0.0, 1.0, &mut rng);
    let externals = init_uniform(&[4, 24], 0.0, 1.0, &mut rng);
    let (a, _) = net.predict(&demands, &externals)?;
    let (b, _) = restored.predict(&demands, &externals)?;
    assert_eq!(a.data(), b.data());
    println!("restored model predicts bit-identically");

    // Corruption is refused outright, never partially applied.
    let err = load_bytes(&bytes[..bytes.len() / 3]).err().expect("must fail");
    println!("truncated checkpoint rejected: {err}");
    Ok(())
}
