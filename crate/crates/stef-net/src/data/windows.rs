//! Sliding-window samples and the chronological train/test split.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{DemandSeries, ExternalFeatures, ScalingParams, FEATURE_COUNT};

/// One training/evaluation sample: `k` past frames and external vectors as
/// inputs, the following frame as target.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Scaled demand history `[k, W, H]`.
    pub demands: Tensor,
    /// Encoded external history `[k, 24]`.
    pub externals: Tensor,
    /// Scaled target frame `[W, H]`.
    pub target_scaled: Tensor,
    /// Raw target counts, for metrics in original demand units.
    pub target_raw: Vec<u32>,
    /// Raw counts of the last input frame, for the persistence baseline.
    pub last_input_raw: Vec<u32>,
    /// Absolute interval index of the target frame.
    pub target_interval: i64,
}

/// Build all `len - k` windows over a series. Sample `t` takes frames
/// `t-k+1 ..= t` (and the aligned external rows) as input and frame `t+1`
/// as target, so targets never appear among their own inputs.
pub fn make_windows(
    series: &DemandSeries,
    externals: &[ExternalFeatures],
    k: usize,
    scaling: &ScalingParams,
) -> Result<Vec<Sample>> {
    if k == 0 {
        return Err(Error::Config("history length k must be at least 1".into()));
    }
    let len = series.frames.len();
    if externals.len() != len {
        return Err(Error::Input(format!(
            "external sequence has {} rows but the demand series has {} frames",
            externals.len(),
            len
        )));
    }
    if len < k + 1 {
        return Err(Error::Input(format!(
            "series of {len} frames is too short for history {k} (need at least {})",
            k + 1
        )));
    }
    let (w, h) = (series.spec.width, series.spec.height);
    let cells = w * h;
    let mut samples = Vec::with_capacity(len - k);
    for t in (k - 1)..(len - 1) {
        let first = t + 1 - k;
        let mut demand_data = Vec::with_capacity(k * cells);
        for frame in &series.frames[first..=t] {
            demand_data.extend(frame.iter().map(|&c| scaling.scale_demand(c as f64)));
        }
        let mut external_data = Vec::with_capacity(k * FEATURE_COUNT);
        for row in &externals[first..=t] {
            external_data.extend_from_slice(row);
        }
        let target_raw = series.frames[t + 1].clone();
        let target_data: Vec<f64> = target_raw
            .iter()
            .map(|&c| scaling.scale_demand(c as f64))
            .collect();
        samples.push(Sample {
            demands: Tensor::new(vec![k, w, h], demand_data)?,
            externals: Tensor::new(vec![k, FEATURE_COUNT], external_data)?,
            target_scaled: Tensor::new(vec![w, h], target_data)?,
            target_raw,
            last_input_raw: series.frames[t].clone(),
            target_interval: series.start_interval + (t + 1) as i64,
        });
    }
    Ok(samples)
}

/// Chronological split: samples whose target interval is before `boundary`
/// are training samples, the rest test samples.
pub fn split_samples(samples: Vec<Sample>, boundary: i64) -> (Vec<Sample>, Vec<Sample>) {
    samples
        .into_iter()
        .partition(|s| s.target_interval < boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GridSpec;

    fn tiny_series(frames: usize) -> (DemandSeries, Vec<ExternalFeatures>) {
        let spec = GridSpec {
            min_lon: 0.0,
            max_lon: 1.0,
            min_lat: 0.0,
            max_lat: 1.0,
            width: 2,
            height: 2,
            interval_seconds: 1800,
        };
        let series = DemandSeries {
            spec,
            start_interval: 100,
            frames: (0..frames)
                .map(|t| vec![t as u32, 0, 1, 2 * t as u32])
                .collect(),
        };
        let externals = vec![[0.5; FEATURE_COUNT]; frames];
        (series, externals)
    }

    fn unit_scaling() -> ScalingParams {
        ScalingParams {
            demand_min: 0.0,
            demand_max: 1.0,
            numeric_min: vec![0.0; 5],
            numeric_max: vec![1.0; 5],
        }
    }

    #[test]
    fn ten_frames_with_k8_give_two_samples() {
        let (series, externals) = tiny_series(10);
        let samples = make_windows(&series, &externals, 8, &unit_scaling()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].target_interval, 108);
        assert_eq!(samples[1].target_interval, 109);
    }

    #[test]
    fn target_follows_last_input() {
        let (series, externals) = tiny_series(6);
        let samples = make_windows(&series, &externals, 3, &unit_scaling()).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            // Last input frame is the one just before the target.
            let t = (s.target_interval - series.start_interval) as usize;
            assert_eq!(s.last_input_raw, series.frames[t - 1]);
            assert_eq!(s.target_raw, series.frames[t]);
            // And the target frame is not among the inputs.
            let k = s.demands.shape()[0];
            for step in 0..k {
                let input_interval = s.target_interval - (k - step) as i64;
                assert!(input_interval < s.target_interval);
            }
        }
    }

    #[test]
    fn misaligned_externals_are_rejected() {
        let (series, mut externals) = tiny_series(6);
        externals.pop();
        assert!(matches!(
            make_windows(&series, &externals, 3, &unit_scaling()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn too_short_series_is_rejected() {
        let (series, externals) = tiny_series(8);
        assert!(matches!(
            make_windows(&series, &externals, 8, &unit_scaling()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn split_is_chronological_on_target() {
        let (series, externals) = tiny_series(10);
        let samples = make_windows(&series, &externals, 2, &unit_scaling()).unwrap();
        let total = samples.len();
        let (train, test) = split_samples(samples, 106);
        assert_eq!(train.len() + test.len(), total);
        assert!(train.iter().all(|s| s.target_interval < 106));
        assert!(test.iter().all(|s| s.target_interval >= 106));
        assert!(!train.is_empty() && !test.is_empty());
    }
}
