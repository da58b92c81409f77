//! MAE/RMSE evaluation in original demand units, and the persistence
//! baseline.

use serde::{Deserialize, Serialize};

use crate::data::{Sample, ScalingParams};
use crate::error::{Error, Result};
use crate::model::StefNet;

/// Errors over a dataset, averaged per grid cell across all samples, in
/// original (inverse-scaled) demand units. RMSE ≥ MAE always (power-mean
/// inequality over the same error set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub samples: usize,
}

/// Accumulate MAE/RMSE over (prediction, truth) grid pairs.
fn metrics_from_pairs<'a>(pairs: impl Iterator<Item = (Vec<f64>, &'a [u32])>) -> Result<Metrics> {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut cells = 0usize;
    let mut samples = 0usize;
    for (pred, truth) in pairs {
        debug_assert_eq!(pred.len(), truth.len());
        for (p, &t) in pred.iter().zip(truth) {
            let err = p - t as f64;
            abs_sum += err.abs();
            sq_sum += err * err;
        }
        cells += pred.len();
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::Usage("evaluation over an empty dataset".into()));
    }
    Ok(Metrics {
        mae: abs_sum / cells as f64,
        rmse: (sq_sum / cells as f64).sqrt(),
        samples,
    })
}

/// Evaluate a model: predictions are inverse-scaled with the training-split
/// parameters (clamped at zero demand) and compared against raw counts.
pub fn evaluate(net: &StefNet, samples: &[Sample], scaling: &ScalingParams) -> Result<Metrics> {
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let (pred, _) = net.predict(&s.demands, &s.externals)?;
        let restored: Vec<f64> = pred
            .data()
            .iter()
            .map(|&v| scaling.inverse_demand(v))
            .collect();
        pairs.push((restored, s.target_raw.as_slice()));
    }
    metrics_from_pairs(pairs.into_iter())
}

/// The naive forecaster: the next frame equals the current frame. Evaluated
/// exactly like the model.
pub fn persistence_baseline(samples: &[Sample]) -> Result<Metrics> {
    metrics_from_pairs(samples.iter().map(|s| {
        (
            s.last_input_raw.iter().map(|&c| c as f64).collect(),
            s.target_raw.as_slice(),
        )
    }))
}
