//! Verify reverse-mode gradients against central finite differences.
//!
//! Every building block runs through the same harness: build the layer on
//! random parameters, differentiate a scalar loss with the graph, and
//! compare against numeric derivatives.
//!
//! ```bash
//! cargo run --release -p stef-net --example autodiff_gradcheck
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stef_net::layers::{
    init_uniform, BiLstm, Bound, ConvFusion, ConvLstmCell, DenseStack, FuzzyLayer, ParamStore,
    TemporalAttention,
};
use stef_net::tensor::{gradcheck, gradcheck_multi, Tensor};

fn main() -> stef_net::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(7);

    // A bare primitive first: d/dx sum(x^2) against 2x.
    let x = init_uniform(&[16], -1.0, 1.0, &mut rng);
    let rel = gradcheck(
        |g, v| {
            let sq = g.square(v);
            g.reduce_sum(sq, None)
        },
        &x,
        1e-4,
    )?;
    println!("sum of squares        rel err {rel:.2e}");

    // ConvLSTM step: gradients through gates, cell, and hidden state.
    let mut store = ParamStore::new();
    let cell = ConvLstmCell::new(&mut store, &mut rng, "cell", 1, 2, 3)?;
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    let n = inputs.len();
    inputs.push(init_uniform(&[5, 5, 1], 0.0, 1.0, &mut rng));
    let rel = gradcheck_multi(
        |g, vars| {
            let bound = Bound::from_vars(vars[..n].to_vec());
            let state = cell.zero_state(g, 5, 5);
            let next = cell.step(g, &bound, vars[n], state)?;
            let sq = g.square(next.hidden);
            g.reduce_sum(sq, None)
        },
        &inputs,
        1e-4,
    )?;
    println!("convlstm step         rel err {rel:.2e}");

    // Fuzzy membership + rule layer (sharp Gaussians want a finer step).
    let mut store = ParamStore::new();
    let fuzzy = FuzzyLayer::new(&mut store, &mut rng, 8, 12);
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    inputs.push(init_uniform(&[8], 0.0, 1.0, &mut rng));
    let rel = gradcheck_multi(
        |g, vars| {
            let bound = Bound::from_vars(vars[..2].to_vec());
            let out = fuzzy.forward(g, &bound, vars[2])?;
            let sq = g.square(out);
            g.reduce_sum(sq, None)
        },
        &inputs,
        3e-5,
    )?;
    println!("fuzzy layer           rel err {rel:.2e}");

    // Fusion by concatenation + convolution.
    let mut store = ParamStore::new();
    let fusion = ConvFusion::new(&mut store, &mut rng, 3)?;
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    inputs.push(init_uniform(&[5, 5], -1.0, 1.0, &mut rng));
    inputs.push(init_uniform(&[5, 5], -1.0, 1.0, &mut rng));
    let rel = gradcheck_multi(
        |g, vars| {
            let bound = Bound::from_vars(vars[..2].to_vec());
            let out = fusion.fuse(g, &bound, vars[2], vars[3])?;
            let sq = g.square(out);
            g.reduce_sum(sq, None)
        },
        &inputs,
        1e-4,
    )?;
    println!("conv fusion           rel err {rel:.2e}");

    // BiLSTM with per-cell temporal attention.
    let mut store = ParamStore::new();
    let bilstm = BiLstm::new(&mut store, &mut rng, 6);
    let attention = TemporalAttention::new(&mut store, &mut rng, 4);
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    let n = inputs.len();
    for _ in 0..4 {
        inputs.push(init_uniform(&[6], -1.0, 1.0, &mut rng));
    }
    let rel = gradcheck_multi(
        |g, vars| {
            let bound = Bound::from_vars(vars[..n].to_vec());
            let steps = bilstm.forward(g, &bound, &vars[n..])?;
            let hidden = g.stack(&steps)?;
            let (context, _) = attention.forward(g, &bound, hidden)?;
            let sq = g.square(context);
            g.reduce_sum(sq, None)
        },
        &inputs,
        1e-4,
    )?;
    println!("bilstm + attention    rel err {rel:.2e}");

    // Dense head.
    let mut store = ParamStore::new();
    let dense = DenseStack::new(&mut store, &mut rng, 9, &[6, 9])?;
    let mut inputs: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
    let n = inputs.len();
    inputs.push(init_uniform(&[9], -1.0, 1.0, &mut rng));
    let rel = gradcheck_multi(
        |g, vars| {
            let bound = Bound::from_vars(vars[..n].to_vec());
            let out = dense.forward(g, &bound, vars[n])?;
            let sq = g.square(out);
            g.reduce_sum(sq, None)
        },
        &inputs,
        1e-4,
    )?;
    println!("dense stack           rel err {rel:.2e}");

    println!("all gradients verified against central differences");
    Ok(())
}
