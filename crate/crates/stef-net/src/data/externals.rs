//! External-information encoding: weather, day of week, daylight.

use chrono::{DateTime, Datelike};

use crate::error::{Error, Result};

use super::ScalingParams;

/// Number of encoded external variables per interval.
pub const FEATURE_COUNT: usize = 24;

/// Weather condition categories, indexed 1..=10.
pub const CONDITION_NAMES: [&str; 10] = [
    "clear",
    "partly cloudy",
    "scattered cloud",
    "mostly cloudy",
    "haze",
    "light rain",
    "shower",
    "mist",
    "patches of fog",
    "fog",
];

/// Number of numeric weather fields (temperature, dew point, humidity,
/// pressure, wind speed).
pub const NUMERIC_FIELD_COUNT: usize = 5;

/// One raw weather record per interval, as read from the externals file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExternalRow {
    /// Epoch of the interval this row describes.
    pub interval_epoch: i64,
    /// Category index in 1..=10.
    pub condition_code: u8,
    pub temperature: f64,
    pub dew_point: f64,
    pub humidity: f64,
    pub pressure: f64,
    pub wind_speed: f64,
    /// Local sunrise/sunset as fractional hours in [0, 24).
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
}

impl RawExternalRow {
    pub fn numeric_fields(&self) -> [f64; NUMERIC_FIELD_COUNT] {
        [
            self.temperature,
            self.dew_point,
            self.humidity,
            self.pressure,
            self.wind_speed,
        ]
    }
}

/// Encoded 24-component external vector `e^t`:
/// 10-way condition one-hot, 7-way day-of-week one-hot, five min-max
/// normalized numerics, and sunrise/sunset as fraction of day.
pub type ExternalFeatures = [f64; FEATURE_COUNT];

/// Day of week with Monday = 0, derived from an epoch timestamp (UTC).
pub fn day_of_week(epoch: i64) -> usize {
    DateTime::from_timestamp(epoch, 0)
        .map(|dt| dt.weekday().num_days_from_monday() as usize)
        .unwrap_or(0)
}

/// Encode one raw row. The numeric fields are normalized with
/// training-split extrema; values outside the training range stay finite
/// but may leave [0, 1].
pub fn encode_row(row: &RawExternalRow, scaling: &ScalingParams) -> Result<ExternalFeatures> {
    if row.condition_code < 1 || row.condition_code > 10 {
        return Err(Error::Input(format!(
            "condition code {} out of range 1..=10 (interval epoch {})",
            row.condition_code, row.interval_epoch
        )));
    }
    let mut out = [0.0; FEATURE_COUNT];
    out[row.condition_code as usize - 1] = 1.0;
    out[10 + day_of_week(row.interval_epoch)] = 1.0;
    for (k, v) in row.numeric_fields().into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Input(format!(
                "non-finite numeric field {k} at interval epoch {}",
                row.interval_epoch
            )));
        }
        out[17 + k] = scaling.scale_numeric(k, v);
    }
    out[22] = row.sunrise_hour / 24.0;
    out[23] = row.sunset_hour / 24.0;
    Ok(out)
}

/// Encode rows for a contiguous interval range `[start, start + count)`.
///
/// Rows are matched to intervals by `interval_epoch`; a missing interval is
/// a gap error that lists the missing indices.
pub fn encode_externals(
    rows: &[RawExternalRow],
    interval_seconds: i64,
    start_interval: i64,
    count: usize,
    scaling: &ScalingParams,
) -> Result<Vec<ExternalFeatures>> {
    let mut by_interval: Vec<Option<&RawExternalRow>> = vec![None; count];
    for row in rows {
        let idx = row.interval_epoch.div_euclid(interval_seconds) - start_interval;
        if idx >= 0 && (idx as usize) < count {
            let slot = &mut by_interval[idx as usize];
            if slot.is_some() {
                return Err(Error::Input(format!(
                    "duplicate external row for interval {}",
                    idx + start_interval
                )));
            }
            *slot = Some(row);
        }
    }
    let missing: Vec<i64> = by_interval
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| start_interval + i as i64)
        .collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(10).map(|i| i.to_string()).collect();
        let suffix = if missing.len() > 10 { ", ..." } else { "" };
        return Err(Error::Input(format!(
            "externals have {} missing interval(s): {}{suffix}",
            missing.len(),
            shown.join(", ")
        )));
    }
    by_interval
        .into_iter()
        .map(|r| encode_row(r.expect("gaps rejected above"), scaling))
        .collect()
}

/// Training-split extrema of the numeric fields.
pub fn fit_numeric_scaling(rows: &[&RawExternalRow]) -> (Vec<f64>, Vec<f64>) {
    let mut min = vec![f64::INFINITY; NUMERIC_FIELD_COUNT];
    let mut max = vec![f64::NEG_INFINITY; NUMERIC_FIELD_COUNT];
    for row in rows {
        for (k, v) in row.numeric_fields().into_iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    for k in 0..NUMERIC_FIELD_COUNT {
        if !min[k].is_finite() {
            min[k] = 0.0;
            max[k] = 0.0;
        }
    }
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaling() -> ScalingParams {
        ScalingParams {
            demand_min: 0.0,
            demand_max: 1.0,
            numeric_min: vec![-5.0, -10.0, 0.2, 990.0, 0.0],
            numeric_max: vec![25.0, 15.0, 1.0, 1030.0, 12.0],
        }
    }

    fn row(epoch: i64, code: u8) -> RawExternalRow {
        RawExternalRow {
            interval_epoch: epoch,
            condition_code: code,
            temperature: 10.0,
            dew_point: 2.5,
            humidity: 0.6,
            pressure: 1010.0,
            wind_speed: 3.0,
            sunrise_hour: 6.5,
            sunset_hour: 18.0,
        }
    }

    #[test]
    fn clear_condition_sets_first_slot() {
        let f = encode_row(&row(0, 1), &scaling()).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1..10].iter().sum::<f64>(), 0.0);
        assert_eq!(CONDITION_NAMES[0], "clear");
    }

    #[test]
    fn monday_sets_the_monday_slot() {
        // 2016-11-07 was a Monday.
        let monday = 1_478_476_800;
        let f = encode_row(&row(monday, 3), &scaling()).unwrap();
        assert_eq!(f[10], 1.0);
        assert_eq!(f[10..17].iter().sum::<f64>(), 1.0);
        assert_eq!(day_of_week(monday), 0);
        assert_eq!(day_of_week(monday + 4 * 86_400), 4); // Friday
    }

    #[test]
    fn one_hot_blocks_have_exactly_one_hot() {
        for code in 1..=10u8 {
            let f = encode_row(&row(86_400 * (code as i64), code), &scaling()).unwrap();
            assert_eq!(f[..10].iter().sum::<f64>(), 1.0, "condition block");
            assert_eq!(f[10..17].iter().sum::<f64>(), 1.0, "day block");
        }
    }

    #[test]
    fn training_max_normalizes_to_one() {
        let mut r = row(0, 2);
        r.temperature = 25.0;
        let f = encode_row(&r, &scaling()).unwrap();
        assert_eq!(f[17], 1.0);
    }

    #[test]
    fn sunrise_and_sunset_become_day_fractions() {
        let f = encode_row(&row(0, 2), &scaling()).unwrap();
        assert!((f[22] - 6.5 / 24.0).abs() < 1e-15);
        assert!((f[23] - 18.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_condition_code_is_rejected() {
        assert!(matches!(
            encode_row(&row(0, 0), &scaling()),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            encode_row(&row(0, 11), &scaling()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn gaps_are_reported_with_missing_indices() {
        let rows = vec![row(0, 1), row(3600, 1)]; // missing interval 1 at 1800s
        let err = encode_externals(&rows, 1800, 0, 3, &scaling()).unwrap_err();
        match err {
            Error::Input(msg) => assert!(msg.contains('1'), "message: {msg}"),
            other => panic!("wrong error class: {other}"),
        }
    }

    #[test]
    fn complete_rows_encode_in_interval_order() {
        let rows = vec![row(1800, 2), row(0, 1)];
        let fs = encode_externals(&rows, 1800, 0, 2, &scaling()).unwrap();
        assert_eq!(fs[0][0], 1.0);
        assert_eq!(fs[1][1], 1.0);
    }
}
