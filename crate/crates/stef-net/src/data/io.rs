//! File formats: request/externals CSV, demand frames, encoded features,
//! and the dataset manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    ExternalFeatures, GridSpec, RawExternalRow, ScalingParams, ServiceRequest, FEATURE_COUNT,
};

/// A row that could not be parsed; processing continues past it.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Parsed file plus the rows that failed.
pub struct ParsedRows<T> {
    pub rows: Vec<T>,
    pub errors: Vec<RowError>,
}

const REQUEST_HEADER: [&str; 4] = ["id", "pickup_epoch", "lon", "lat"];
const EXTERNAL_HEADER: [&str; 9] = [
    "interval_epoch",
    "condition_code",
    "temperature",
    "dew_point",
    "humidity",
    "pressure",
    "wind_speed",
    "sunrise_hour",
    "sunset_hour",
];

fn check_header(actual: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let got: Vec<&str> = actual.iter().collect();
    if got != expected {
        return Err(Error::Input(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            got,
            expected
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> std::result::Result<T, String> {
    let raw = record
        .get(idx)
        .ok_or_else(|| format!("missing field '{name}'"))?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| format!("field '{name}' has unparseable value '{raw}'"))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Read a requests CSV (`id,pickup_epoch,lon,lat`). Malformed rows are
/// collected with their line numbers; a bad header or unreadable file is
/// an input error.
pub fn read_requests_csv(path: &Path) -> Result<ParsedRows<ServiceRequest>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    check_header(
        reader
            .headers()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?,
        &REQUEST_HEADER,
        path,
    )?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record_line(&record);
        let parsed = (|| -> std::result::Result<ServiceRequest, String> {
            Ok(ServiceRequest {
                id: record.get(0).unwrap_or("").to_string(),
                pickup_epoch: parse_field(&record, 1, "pickup_epoch")?,
                lon: parse_field(&record, 2, "lon")?,
                lat: parse_field(&record, 3, "lat")?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok(ParsedRows { rows, errors })
}

/// Read an externals CSV (one row per interval).
pub fn read_externals_csv(path: &Path) -> Result<ParsedRows<RawExternalRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    check_header(
        reader
            .headers()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?,
        &EXTERNAL_HEADER,
        path,
    )?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line: e.position().map(|p| p.line()).unwrap_or(0),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record_line(&record);
        let parsed = (|| -> std::result::Result<RawExternalRow, String> {
            Ok(RawExternalRow {
                interval_epoch: parse_field(&record, 0, "interval_epoch")?,
                condition_code: parse_field(&record, 1, "condition_code")?,
                temperature: parse_field(&record, 2, "temperature")?,
                dew_point: parse_field(&record, 3, "dew_point")?,
                humidity: parse_field(&record, 4, "humidity")?,
                pressure: parse_field(&record, 5, "pressure")?,
                wind_speed: parse_field(&record, 6, "wind_speed")?,
                sunrise_hour: parse_field(&record, 7, "sunrise_hour")?,
                sunset_hour: parse_field(&record, 8, "sunset_hour")?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok(ParsedRows { rows, errors })
}

pub fn write_requests_csv(path: &Path, requests: &[ServiceRequest]) -> Result<()> {
    let mut out = String::from("id,pickup_epoch,lon,lat\n");
    for r in requests {
        writeln!(out, "{},{},{},{}", r.id, r.pickup_epoch, r.lon, r.lat)
            .expect("string write cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_externals_csv(path: &Path, rows: &[RawExternalRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&EXTERNAL_HEADER.join(","));
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.interval_epoch,
            r.condition_code,
            r.temperature,
            r.dew_point,
            r.humidity,
            r.pressure,
            r.wind_speed,
            r.sunrise_hour,
            r.sunset_hour
        )
        .expect("string write cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Dataset manifest, written next to the generated tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub grid: GridSpec,
    pub start_interval: i64,
    pub interval_count: usize,
    /// First test interval; everything before it is training data.
    pub boundary_interval: i64,
    pub scaling: ScalingParams,
    pub total_requests: u64,
    pub discarded_requests: u64,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)
        .map_err(|e| Error::Input(format!("manifest serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Write demand frames as sparse CSV rows `interval,i,j,count` (zero cells
/// omitted), ordered by (interval, i, j).
pub fn write_frames_csv(path: &Path, frames: &[Vec<u32>], height: usize) -> Result<()> {
    let mut out = String::from("interval,i,j,count\n");
    for (t, frame) in frames.iter().enumerate() {
        for (flat, &count) in frame.iter().enumerate() {
            if count > 0 {
                writeln!(out, "{t},{},{},{count}", flat / height, flat % height)
                    .expect("string write cannot fail");
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_frames_csv(
    path: &Path,
    interval_count: usize,
    width: usize,
    height: usize,
) -> Result<Vec<Vec<u32>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    check_header(
        reader
            .headers()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?,
        &["interval", "i", "j", "count"],
        path,
    )?;
    let mut frames = vec![vec![0u32; width * height]; interval_count];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        let bad = |msg: String| Error::Input(format!("{}:{line}: {msg}", path.display()));
        let t: usize = parse_field(&record, 0, "interval").map_err(bad)?;
        let i: usize = parse_field(&record, 1, "i").map_err(bad)?;
        let j: usize = parse_field(&record, 2, "j").map_err(bad)?;
        let count: u32 = parse_field(&record, 3, "count").map_err(bad)?;
        if t >= interval_count || i >= width || j >= height {
            return Err(Error::Input(format!(
                "{}:{line}: cell ({t},{i},{j}) outside {interval_count}x{width}x{height}",
                path.display()
            )));
        }
        frames[t][i * height + j] = count;
    }
    Ok(frames)
}

/// Write encoded feature rows as `interval,f00..f23`.
pub fn write_features_csv(path: &Path, features: &[ExternalFeatures]) -> Result<()> {
    let mut out = String::from("interval");
    for k in 0..FEATURE_COUNT {
        write!(out, ",f{k:02}").expect("string write cannot fail");
    }
    out.push('\n');
    for (t, row) in features.iter().enumerate() {
        write!(out, "{t}").expect("string write cannot fail");
        for v in row {
            write!(out, ",{v}").expect("string write cannot fail");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_features_csv(path: &Path, interval_count: usize) -> Result<Vec<ExternalFeatures>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    if headers.len() != FEATURE_COUNT + 1 || headers.get(0) != Some("interval") {
        return Err(Error::Input(format!(
            "{}: expected 'interval' plus {FEATURE_COUNT} feature columns",
            path.display()
        )));
    }
    let mut rows = vec![[0.0; FEATURE_COUNT]; interval_count];
    let mut seen = vec![false; interval_count];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        let bad = |msg: String| Error::Input(format!("{}:{line}: {msg}", path.display()));
        let t: usize = parse_field(&record, 0, "interval").map_err(bad)?;
        if t >= interval_count {
            return Err(Error::Input(format!(
                "{}:{line}: interval {t} outside 0..{interval_count}",
                path.display()
            )));
        }
        for (k, slot) in rows[t].iter_mut().enumerate() {
            *slot = parse_field(&record, k + 1, &format!("f{k:02}")).map_err(bad)?;
        }
        seen[t] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Input(format!(
            "{}: missing feature row for interval {missing}",
            path.display()
        )));
    }
    Ok(rows)
}
