//! City grid, service requests, and demand aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-size grid over a bounding box, in longitude/latitude degrees,
/// plus the time-interval span.
///
/// Cell assignment is half-open on both axes: a point on a cell's max edge
/// belongs to the next cell, and a point on the box's outer max edge is
/// outside the box. Every in-box point therefore maps to exactly one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
    pub width: usize,
    pub height: usize,
    /// Interval span C in seconds.
    pub interval_seconds: i64,
}

impl Default for GridSpec {
    fn default() -> Self {
        // A ~14.4 km square over central Chengdu cut into 20×20 cells of
        // roughly 700 m, half-hour intervals.
        GridSpec {
            min_lon: 103.96,
            max_lon: 104.11,
            min_lat: 30.59,
            max_lat: 30.72,
            width: 20,
            height: 20,
            interval_seconds: 1800,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must be at least 1x1".into()));
        }
        let lon_ok = self.min_lon < self.max_lon;
        let lat_ok = self.min_lat < self.max_lat;
        if !lon_ok || !lat_ok {
            return Err(Error::Config(format!(
                "degenerate bounding box: lon [{}, {}], lat [{}, {}]",
                self.min_lon, self.max_lon, self.min_lat, self.max_lat
            )));
        }
        if self.interval_seconds <= 0 {
            return Err(Error::Config("interval span must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Cell coordinates of a point, or `None` when it is outside the box.
    pub fn cell_of(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let i = axis_cell(lon, self.min_lon, self.max_lon, self.width)?;
        let j = axis_cell(lat, self.min_lat, self.max_lat, self.height)?;
        Some((i, j))
    }

    /// Absolute interval index containing an epoch timestamp.
    pub fn interval_of(&self, epoch: i64) -> i64 {
        epoch.div_euclid(self.interval_seconds)
    }

    /// Epoch of an interval's start.
    pub fn interval_start(&self, interval: i64) -> i64 {
        interval * self.interval_seconds
    }
}

fn axis_cell(v: f64, min: f64, max: f64, cells: usize) -> Option<usize> {
    if !v.is_finite() || v < min || v >= max {
        return None;
    }
    let u = (v - min) / (max - min);
    let cell = (u * cells as f64) as usize;
    // Rounding at a cell boundary can spill one past the end even though
    // v < max held above.
    Some(cell.min(cells - 1))
}

/// One pickup request. Only the pickup side matters for demand counting.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRequest {
    pub id: String,
    pub pickup_epoch: i64,
    pub lon: f64,
    pub lat: f64,
}

/// Time-ordered stack of demand snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    pub spec: GridSpec,
    /// Absolute index of the first frame's interval.
    pub start_interval: i64,
    /// One `width*height` count grid per interval, row-major in (i, j).
    pub frames: Vec<Vec<u32>>,
}

impl DemandSeries {
    pub fn count(&self, frame: usize, i: usize, j: usize) -> u32 {
        self.frames[frame][i * self.spec.height + j]
    }

    pub fn total(&self) -> u64 {
        self.frames
            .iter()
            .flat_map(|f| f.iter())
            .map(|&c| c as u64)
            .sum()
    }
}

/// Result of aggregating a request stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub series: DemandSeries,
    /// Requests outside the box or the interval range.
    pub discarded: u64,
    /// Every request seen, valid or not.
    pub total: u64,
}

/// Count requests into per-interval demand snapshots.
///
/// Each valid request increments exactly one `(t, i, j)` cell; out-of-box
/// and out-of-range requests land in the discard tally, so
/// `series.total() + discarded == total` always holds.
pub fn grid_demands(
    requests: impl IntoIterator<Item = ServiceRequest>,
    spec: &GridSpec,
    start_interval: i64,
    interval_count: usize,
) -> Result<GridOutcome> {
    spec.validate()?;
    if interval_count == 0 {
        return Err(Error::Usage("interval range must be nonempty".into()));
    }
    let mut frames = vec![vec![0u32; spec.cells()]; interval_count];
    let mut discarded = 0u64;
    let mut total = 0u64;
    for req in requests {
        total += 1;
        let t = spec.interval_of(req.pickup_epoch) - start_interval;
        if t < 0 || t >= interval_count as i64 {
            discarded += 1;
            continue;
        }
        match spec.cell_of(req.lon, req.lat) {
            Some((i, j)) => frames[t as usize][i * spec.height + j] += 1,
            None => discarded += 1,
        }
    }
    Ok(GridOutcome {
        series: DemandSeries {
            spec: spec.clone(),
            start_interval,
            frames,
        },
        discarded,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn spec() -> GridSpec {
        GridSpec {
            min_lon: 0.0,
            max_lon: 1.0,
            min_lat: 0.0,
            max_lat: 1.0,
            width: 4,
            height: 5,
            interval_seconds: 1800,
        }
    }

    fn request(epoch: i64, lon: f64, lat: f64) -> ServiceRequest {
        ServiceRequest {
            id: format!("r{epoch}"),
            pickup_epoch: epoch,
            lon,
            lat,
        }
    }

    #[test]
    fn empty_stream_gives_zero_frames() {
        let out = grid_demands([], &spec(), 0, 3).unwrap();
        assert_eq!(out.total, 0);
        assert_eq!(out.discarded, 0);
        assert_eq!(out.series.total(), 0);
        assert_eq!(out.series.frames.len(), 3);
    }

    #[test]
    fn single_request_lands_in_one_cell() {
        let out = grid_demands([request(10, 0.5, 0.5)], &spec(), 0, 2).unwrap();
        assert_eq!(out.series.total(), 1);
        assert_eq!(out.series.count(0, 2, 2), 1);
        assert_eq!(out.discarded, 0);
    }

    #[test]
    fn boundary_convention_is_half_open() {
        let s = spec();
        assert_eq!(s.cell_of(0.0, 0.0), Some((0, 0)));
        // A point on a cell's max edge belongs to the next cell.
        assert_eq!(s.cell_of(0.25, 0.0), Some((1, 0)));
        // The box's outer max edge is outside.
        assert_eq!(s.cell_of(1.0, 0.5), None);
        assert_eq!(s.cell_of(0.5, 1.0), None);
        assert_eq!(s.cell_of(-0.001, 0.5), None);
    }

    #[test]
    fn out_of_range_requests_are_discarded_not_counted() {
        let reqs = vec![
            request(10, 0.5, 0.5),           // valid, t = 0
            request(-5, 0.5, 0.5),           // before range
            request(2 * 1800, 0.5, 0.5),     // after range
            request(20, 1.5, 0.5),           // out of box
        ];
        let out = grid_demands(reqs, &spec(), 0, 2).unwrap();
        assert_eq!(out.total, 4);
        assert_eq!(out.discarded, 3);
        assert_eq!(out.series.total(), 1);
    }

    #[test]
    fn matches_brute_force_count_and_conserves_requests() {
        let s = spec();
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let intervals = 6usize;
        let reqs: Vec<ServiceRequest> = (0..1000)
            .map(|k| ServiceRequest {
                id: format!("r{k}"),
                // Slightly wider than the box/range so some get discarded.
                pickup_epoch: rng.random_range(-1800..(intervals as i64 + 1) * 1800),
                lon: rng.random_range(-0.1..1.1),
                lat: rng.random_range(-0.1..1.1),
            })
            .collect();

        let out = grid_demands(reqs.clone(), &s, 0, intervals).unwrap();

        // Independent recount straight from the definitions.
        let mut expected = vec![vec![0u32; s.cells()]; intervals];
        let mut expected_discards = 0u64;
        for r in &reqs {
            let t = r.pickup_epoch.div_euclid(1800);
            let in_range = t >= 0 && (t as usize) < intervals;
            let in_box = r.lon >= 0.0 && r.lon < 1.0 && r.lat >= 0.0 && r.lat < 1.0;
            if in_range && in_box {
                let i = ((r.lon * 4.0) as usize).min(3);
                let j = ((r.lat * 5.0) as usize).min(4);
                expected[t as usize][i * 5 + j] += 1;
            } else {
                expected_discards += 1;
            }
        }
        assert_eq!(out.series.frames, expected);
        assert_eq!(out.discarded, expected_discards);
        assert_eq!(out.series.total() + out.discarded, out.total);
        assert_eq!(out.total, 1000);
    }

    #[test]
    fn order_of_requests_does_not_matter() {
        let mut rng = ChaCha20Rng::seed_from_u64(62);
        let reqs: Vec<ServiceRequest> = (0..200)
            .map(|k| ServiceRequest {
                id: format!("r{k}"),
                pickup_epoch: rng.random_range(0..3 * 1800),
                lon: rng.random_range(0.0..1.0),
                lat: rng.random_range(0.0..1.0),
            })
            .collect();
        let forward = grid_demands(reqs.clone(), &spec(), 0, 3).unwrap();
        let mut reversed = reqs;
        reversed.reverse();
        let backward = grid_demands(reversed, &spec(), 0, 3).unwrap();
        assert_eq!(forward, backward);
    }
}
