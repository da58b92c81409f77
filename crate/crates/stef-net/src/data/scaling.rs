//! Max-min scaling fitted on the training split only.

use serde::{Deserialize, Serialize};

/// Per-feature extrema from the training split. Demand values scale into
/// [0, 1]; degenerate ranges (max == min) map to a constant 0 and invert
/// back to the minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub demand_min: f64,
    pub demand_max: f64,
    /// Extrema of the numeric external fields, in row order
    /// (temperature, dew point, humidity, pressure, wind speed).
    pub numeric_min: Vec<f64>,
    pub numeric_max: Vec<f64>,
}

impl ScalingParams {
    pub fn fit_demand(frames: &[Vec<u32>]) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for frame in frames {
            for &c in frame {
                min = min.min(c as f64);
                max = max.max(c as f64);
            }
        }
        if !min.is_finite() {
            (0.0, 0.0)
        } else {
            (min, max)
        }
    }

    pub fn scale_demand(&self, v: f64) -> f64 {
        scale(v, self.demand_min, self.demand_max)
    }

    /// Invert [`ScalingParams::scale_demand`], clamping predictions below
    /// zero demand to zero.
    pub fn inverse_demand(&self, s: f64) -> f64 {
        (self.demand_min + s * (self.demand_max - self.demand_min)).max(0.0)
    }

    pub fn scale_numeric(&self, feature: usize, v: f64) -> f64 {
        scale(v, self.numeric_min[feature], self.numeric_max[feature])
    }
}

fn scale(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (v - min) / (max - min)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn params(min: f64, max: f64) -> ScalingParams {
        ScalingParams {
            demand_min: min,
            demand_max: max,
            numeric_min: vec![],
            numeric_max: vec![],
        }
    }

    #[test]
    fn midpoint_scales_to_half() {
        assert_eq!(params(0.0, 10.0).scale_demand(5.0), 0.5);
    }

    #[test]
    fn round_trip_within_1e12() {
        let p = params(0.0, 37.0);
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        for _ in 0..1000 {
            let x = rng.random_range(0.0..37.0);
            let back = p.inverse_demand(p.scale_demand(x));
            assert!((back - x).abs() < 1e-12, "{x} -> {back}");
        }
    }

    #[test]
    fn degenerate_range_maps_to_zero_and_back_to_min() {
        let p = params(4.0, 4.0);
        assert_eq!(p.scale_demand(4.0), 0.0);
        assert_eq!(p.inverse_demand(0.0), 4.0);
    }

    #[test]
    fn inverse_clamps_negative_predictions() {
        let p = params(0.0, 10.0);
        assert_eq!(p.inverse_demand(-0.25), 0.0);
    }
}
