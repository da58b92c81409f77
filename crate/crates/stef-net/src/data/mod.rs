//! Data pipeline: gridding raw service requests, encoding external
//! information, max-min scaling, sliding-window samples, and a seeded
//! synthetic generator for desk-scale verification.

mod externals;
mod grid;
mod io;
mod scaling;
mod synth;
mod windows;

pub use externals::{
    day_of_week, encode_externals, encode_row, fit_numeric_scaling, ExternalFeatures,
    RawExternalRow, CONDITION_NAMES, FEATURE_COUNT, NUMERIC_FIELD_COUNT,
};
pub use grid::{grid_demands, DemandSeries, GridOutcome, GridSpec, ServiceRequest};
pub use io::{
    read_externals_csv, read_features_csv, read_frames_csv, read_manifest, read_requests_csv,
    write_externals_csv, write_features_csv, write_frames_csv, write_manifest,
    write_requests_csv, Manifest, ParsedRows, RowError,
};
pub use scaling::ScalingParams;
pub use synth::{demand_rate, is_rain_code, synth_generate, SynthConfig};
pub use windows::{make_windows, split_samples, Sample};

use std::path::Path;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_FILE: &str = "frames.csv";
pub const FEATURES_FILE: &str = "features.csv";

/// A materialized dataset directory: raw demand frames, encoded external
/// features, and the manifest tying them together.
///
/// Windowing happens at load time so one stored dataset can serve models
/// with different history lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub frames: Vec<Vec<u32>>,
    pub features: Vec<ExternalFeatures>,
}

impl Dataset {
    /// Assemble a dataset from parsed requests and external rows.
    ///
    /// The externals define the covered interval range (they must be
    /// gap-free); scaling parameters come from the training portion only,
    /// with the boundary at `train_fraction` of the intervals.
    pub fn build(
        requests: impl IntoIterator<Item = ServiceRequest>,
        external_rows: &[RawExternalRow],
        spec: &GridSpec,
        train_fraction: f64,
    ) -> Result<Dataset> {
        spec.validate()?;
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1], got {train_fraction}"
            )));
        }
        if external_rows.is_empty() {
            return Err(Error::Input(
                "no external rows; cannot determine the interval range".into(),
            ));
        }
        let indices: Vec<i64> = external_rows
            .iter()
            .map(|r| spec.interval_of(r.interval_epoch))
            .collect();
        let start_interval = *indices.iter().min().expect("nonempty");
        let end_interval = *indices.iter().max().expect("nonempty");
        let interval_count = (end_interval - start_interval + 1) as usize;

        let outcome = grid_demands(requests, spec, start_interval, interval_count)?;

        let train_intervals =
            ((interval_count as f64 * train_fraction).round() as usize).clamp(1, interval_count);
        let boundary_interval = start_interval + train_intervals as i64;

        let (demand_min, demand_max) =
            ScalingParams::fit_demand(&outcome.series.frames[..train_intervals]);
        let train_rows: Vec<&RawExternalRow> = external_rows
            .iter()
            .filter(|r| spec.interval_of(r.interval_epoch) < boundary_interval)
            .collect();
        let (numeric_min, numeric_max) = fit_numeric_scaling(&train_rows);
        let scaling = ScalingParams {
            demand_min,
            demand_max,
            numeric_min,
            numeric_max,
        };

        let features = encode_externals(
            external_rows,
            spec.interval_seconds,
            start_interval,
            interval_count,
            &scaling,
        )?;

        Ok(Dataset {
            manifest: Manifest {
                grid: spec.clone(),
                start_interval,
                interval_count,
                boundary_interval,
                scaling,
                total_requests: outcome.total,
                discarded_requests: outcome.discarded,
            },
            frames: outcome.series.frames,
            features,
        })
    }

    /// Scaled, windowed (train, test) samples for history length `k`.
    pub fn windows(&self, k: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let series = DemandSeries {
            spec: self.manifest.grid.clone(),
            start_interval: self.manifest.start_interval,
            frames: self.frames.clone(),
        };
        let samples = make_windows(&series, &self.features, k, &self.manifest.scaling)?;
        Ok(split_samples(samples, self.manifest.boundary_interval))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_manifest(&dir.join(MANIFEST_FILE), &self.manifest)?;
        write_frames_csv(
            &dir.join(FRAMES_FILE),
            &self.frames,
            self.manifest.grid.height,
        )?;
        write_features_csv(&dir.join(FEATURES_FILE), &self.features)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
        let frames = read_frames_csv(
            &dir.join(FRAMES_FILE),
            manifest.interval_count,
            manifest.grid.width,
            manifest.grid.height,
        )?;
        let features = read_features_csv(&dir.join(FEATURES_FILE), manifest.interval_count)?;
        Ok(Dataset {
            manifest,
            frames,
            features,
        })
    }
}
