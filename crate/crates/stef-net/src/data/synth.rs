//! Seeded synthetic dataset generator for desk-scale runs.
//!
//! Demand intensity per (interval, cell) is a sum of spatial Gaussian
//! bumps whose centers drift sinusoidally over the day, scaled by a
//! time-of-day activity curve, a day-of-week multiplier, and a
//! rain-depression factor tied to the generated weather script. Request
//! counts are Poisson draws from that intensity, so the whole dataset is a
//! deterministic function of (seed, spec, config).

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{day_of_week, GridSpec, RawExternalRow, ServiceRequest};

/// Knobs of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of generated days.
    pub days: u32,
    /// Peak expected requests per cell and interval; zero silences the
    /// whole process.
    pub amplitude: f64,
    /// Multiplier on intensity while it rains (strictly below 1 keeps the
    /// rainy-day depression observable).
    pub rain_factor: f64,
    /// Multiplier on weekend intensity.
    pub weekend_factor: f64,
    /// Probability that a given day has a rain spell.
    pub rain_probability: f64,
    /// Epoch of the first generated interval; the default is a Monday
    /// midnight (UTC).
    pub start_epoch: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 6,
            amplitude: 6.0,
            rain_factor: 0.55,
            weekend_factor: 0.75,
            rain_probability: 0.3,
            start_epoch: 1_478_476_800, // 2016-11-07 00:00:00 UTC, a Monday
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config(
                "synth.days must be at least 1 (an empty dataset has no samples)".into(),
            ));
        }
        let amplitude_ok = self.amplitude >= 0.0; // false for NaN as well
        if !amplitude_ok {
            return Err(Error::Config("synth.amplitude must be nonnegative".into()));
        }
        if !(self.rain_factor > 0.0 && self.rain_factor < 1.0) {
            return Err(Error::Config(
                "synth.rain_factor must lie strictly between 0 and 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rain_probability) {
            return Err(Error::Config(
                "synth.rain_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Expected demand in one cell for one interval, before weather effects.
///
/// Two Gaussian bumps drift across the grid over the day in antiphase; a
/// smooth activity curve damps the night hours.
fn base_rate(spec: &GridSpec, cfg: &SynthConfig, epoch: i64, i: usize, j: usize) -> f64 {
    let hour = (epoch.rem_euclid(86_400)) as f64 / 3600.0;
    let phase = 2.0 * std::f64::consts::PI * hour / 24.0;
    let (w, h) = (spec.width as f64, spec.height as f64);

    let centers = [
        (
            w * (0.5 + 0.25 * phase.sin()),
            h * (0.5 + 0.25 * phase.cos()),
        ),
        (
            w * (0.5 - 0.25 * phase.sin()),
            h * (0.5 - 0.25 * phase.cos()),
        ),
    ];
    let sigma_sq = (w.min(h) / 5.0).powi(2);
    let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
    let bumps: f64 = centers
        .iter()
        .map(|(cx, cy)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma_sq)).exp())
        .sum();

    // Activity dips at night, peaks late afternoon.
    let activity = 0.3 + 0.7 * (0.5 - 0.5 * (phase + 0.8).cos());
    cfg.amplitude * activity * (0.05 + bumps)
}

/// Expected demand in one cell for one interval under the given weather.
pub fn demand_rate(
    spec: &GridSpec,
    cfg: &SynthConfig,
    epoch: i64,
    raining: bool,
    i: usize,
    j: usize,
) -> f64 {
    let dow = day_of_week(epoch);
    let dow_factor = if dow >= 5 { cfg.weekend_factor } else { 1.0 };
    let rain = if raining { cfg.rain_factor } else { 1.0 };
    base_rate(spec, cfg, epoch, i, j) * dow_factor * rain
}

/// Rain condition codes (light rain and shower).
pub fn is_rain_code(code: u8) -> bool {
    code == 6 || code == 7
}

/// Generate a request stream and the matching per-interval weather rows.
pub fn synth_generate(
    seed: u64,
    spec: &GridSpec,
    cfg: &SynthConfig,
) -> Result<(Vec<ServiceRequest>, Vec<RawExternalRow>)> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let per_day = (86_400 / spec.interval_seconds) as usize;
    let intervals = cfg.days as usize * per_day;

    // Weather script first, day by day, so demand can react to it.
    let mut conditions = Vec::with_capacity(intervals);
    let mut day_temp_offset = Vec::with_capacity(cfg.days as usize);
    for _ in 0..cfg.days {
        let rainy_day = rng.random_range(0.0..1.0) < cfg.rain_probability;
        let (rain_from, rain_len) = if rainy_day {
            (
                rng.random_range(per_day / 3..2 * per_day / 3),
                rng.random_range(per_day / 6..per_day / 3),
            )
        } else {
            (0, 0)
        };
        let dry_code = *[1u8, 1, 2, 2, 3, 4, 5]
            .get(rng.random_range(0..7usize))
            .unwrap();
        for t in 0..per_day {
            let raining = rainy_day && t >= rain_from && t < rain_from + rain_len;
            let code = if raining {
                if rng.random_range(0.0..1.0) < 0.7 {
                    6
                } else {
                    7
                }
            } else {
                dry_code
            };
            conditions.push(code);
        }
        day_temp_offset.push(rng.random_range(-2.0..2.0));
    }

    let mut externals = Vec::with_capacity(intervals);
    for (t, &condition) in conditions.iter().enumerate() {
        let epoch = cfg.start_epoch + t as i64 * spec.interval_seconds;
        let hour = (epoch.rem_euclid(86_400)) as f64 / 3600.0;
        let day = t / per_day;
        let raining = is_rain_code(condition);
        let diurnal = (2.0 * std::f64::consts::PI * (hour - 15.0) / 24.0).cos();
        let temperature =
            12.0 + day_temp_offset[day] + 6.0 * diurnal - if raining { 3.0 } else { 0.0 };
        let humidity = (0.55 + if raining { 0.3 } else { 0.0 } - 0.1 * diurnal).clamp(0.0, 1.0);
        externals.push(RawExternalRow {
            interval_epoch: epoch,
            condition_code: condition,
            temperature,
            dew_point: temperature - (1.0 - humidity) * 15.0,
            humidity,
            pressure: 1013.0 + 2.0 * day_temp_offset[day] - if raining { 4.0 } else { 0.0 },
            wind_speed: 2.5 + if raining { 2.0 } else { 0.0 } + 0.5 * diurnal.abs(),
            sunrise_hour: 6.4 + 0.015 * day as f64,
            sunset_hour: 17.6 - 0.015 * day as f64,
        });
    }

    // Demand draws, in fixed (interval, i, j) order.
    let cell_lon = (spec.max_lon - spec.min_lon) / spec.width as f64;
    let cell_lat = (spec.max_lat - spec.min_lat) / spec.height as f64;
    let mut requests = Vec::new();
    let mut id = 0u64;
    for (t, &condition) in conditions.iter().enumerate() {
        let epoch = cfg.start_epoch + t as i64 * spec.interval_seconds;
        let raining = is_rain_code(condition);
        for i in 0..spec.width {
            for j in 0..spec.height {
                let rate = demand_rate(spec, cfg, epoch, raining, i, j);
                if rate <= 0.0 {
                    continue;
                }
                let count = Poisson::new(rate)
                    .map_err(|e| Error::Numeric(format!("poisson rate {rate}: {e}")))?
                    .sample(&mut rng) as u64;
                for _ in 0..count {
                    let lon = spec.min_lon + (i as f64 + rng.random_range(0.0..1.0)) * cell_lon;
                    let lat = spec.min_lat + (j as f64 + rng.random_range(0.0..1.0)) * cell_lat;
                    let offset = rng.random_range(0.0..1.0) * spec.interval_seconds as f64;
                    requests.push(ServiceRequest {
                        id: format!("r{id}"),
                        pickup_epoch: epoch + (offset as i64).min(spec.interval_seconds - 1),
                        lon,
                        lat,
                    });
                    id += 1;
                }
            }
        }
    }
    Ok((requests, externals))
}
