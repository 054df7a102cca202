//! Speed matrices, distance tables, chronological splits and z-score
//! normalization.
//!
//! A reading of exactly `0.0` is the missing-data sentinel. The validity mask
//! is derived once when a matrix is constructed from raw readings and then
//! carried through slicing and normalization unchanged.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor readings, one row per sensor and one column per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesMatrix {
    values: Array2<f64>,
    valid: Array2<bool>,
    sensor_ids: Vec<String>,
    sampling_interval: f64,
    start_time: Option<String>,
}

impl TimeSeriesMatrix {
    /// Builds a matrix from raw readings. `values` is `[sensors, timesteps]`
    /// and `sampling_interval` is in minutes.
    pub fn new(values: Array2<f64>, sensor_ids: Vec<String>, sampling_interval: f64) -> Result<Self> {
        let valid = values.mapv(|v| v > 0.0);
        Self::with_mask(values, valid, sensor_ids, sampling_interval)
    }

    fn with_mask(
        values: Array2<f64>,
        valid: Array2<bool>,
        sensor_ids: Vec<String>,
        sampling_interval: f64,
    ) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 || t < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 sensors and 2 timesteps, got {n}x{t}"
            )));
        }
        if sensor_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} sensor ids for {n} rows",
                sensor_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &sensor_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate sensor id '{id}'")));
            }
        }
        if !(sampling_interval > 0.0 && sampling_interval.is_finite()) {
            return Err(Error::invalid(format!(
                "sampling interval must be positive, got {sampling_interval}"
            )));
        }
        Ok(Self {
            values,
            valid,
            sensor_ids,
            sampling_interval,
            start_time: None,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn valid(&self) -> &Array2<bool> {
        &self.valid
    }

    pub fn row(&self, sensor: usize) -> ArrayView1<'_, f64> {
        self.values.row(sensor)
    }

    /// Contiguous slice of one sensor's series. Rows are stored in standard
    /// layout, so this never copies.
    pub fn series(&self, sensor: usize) -> &[f64] {
        self.values
            .row(sensor)
            .to_slice()
            .expect("time series rows are contiguous")
    }

    pub fn is_valid(&self, sensor: usize, step: usize) -> bool {
        self.valid[[sensor, step]]
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    /// Sampling interval in minutes.
    pub fn sampling_interval(&self) -> f64 {
        self.sampling_interval
    }

    pub fn start_time(&self) -> Option<&str> {
        self.start_time.as_deref()
    }

    pub fn set_start_time(&mut self, start: Option<String>) {
        self.start_time = start;
    }

    /// Index of `id` in the sensor ordering.
    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Timesteps `range` of every sensor, keeping the mask.
    pub fn slice_steps(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.n_steps() || range.start >= range.end {
            return Err(Error::invalid(format!(
                "step range {range:?} outside 0..{}",
                self.n_steps()
            )));
        }
        let values = self.values.slice(s![.., range.clone()]).to_owned();
        let valid = self.valid.slice(s![.., range]).to_owned();
        // bypass the N, T >= 2 check for short slices
        Ok(Self {
            values,
            valid,
            sensor_ids: self.sensor_ids.clone(),
            sampling_interval: self.sampling_interval,
            start_time: None,
        })
    }

    /// Writes the matrix in the speed CSV layout (header of sensor ids, one
    /// row per timestep). Values use the shortest round-trip representation so
    /// that reloading is bit-identical.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", self.sensor_ids.join(",")).map_err(io)?;
        let mut line = String::new();
        for t in 0..self.n_steps() {
            line.clear();
            for i in 0..self.n_sensors() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&self.values[[i, t]].to_string());
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn looks_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

/// Reads a speed CSV: a header row of sensor ids and one row per timestep.
/// A leading timestamp column is detected when the header's first cell is
/// empty or the first data row's first cell is not a number; it is kept only
/// as [`TimeSeriesMatrix::start_time`].
pub fn load_speed_matrix(path: impl AsRef<Path>, sampling_interval: f64) -> Result<TimeSeriesMatrix> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: shown.clone(),
        line,
        msg,
    };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let header: Vec<String> = header.iter().map(|c| c.trim().to_string()).collect();

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }

    let has_timestamp = header.first().is_some_and(|c| c.is_empty())
        || rows[0].get(0).is_some_and(|c| !looks_numeric(c));
    let skip = usize::from(has_timestamp);
    let sensor_ids: Vec<String> = header[skip..].to_vec();
    let n = sensor_ids.len();
    if n == 0 {
        return Err(parse_err(1, "header names no sensors".into()));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for id in &sensor_ids {
            if id.is_empty() {
                return Err(parse_err(1, "empty sensor id in header".into()));
            }
            if !seen.insert(id.as_str()) {
                return Err(parse_err(1, format!("duplicate sensor id '{id}'")));
            }
        }
    }

    let t = rows.len();
    let mut values = Array2::<f64>::zeros((n, t));
    for (step, rec) in rows.iter().enumerate() {
        let line = rec.position().map_or(step + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!(
                    "data row {} has {} fields, header has {}",
                    step + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        for (i, cell) in rec.iter().skip(skip).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!("data row {}: non-numeric value '{cell}' for sensor {}", step + 1, sensor_ids[i]),
                )
            })?;
            values[[i, step]] = v;
        }
    }

    let start = if has_timestamp {
        rows[0].get(0).map(|c| c.trim().to_string())
    } else {
        None
    };
    let mut matrix = TimeSeriesMatrix::new(values, sensor_ids, sampling_interval)?;
    matrix.set_start_time(start);
    Ok(matrix)
}

/// One directed road record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub from: String,
    pub to: String,
    pub cost: f64,
}

/// Directed road costs between sensor pairs, deduplicated to the minimum
/// cost per ordered pair and free of self-records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistanceTable {
    edges: BTreeMap<(String, String), f64>,
}

impl DistanceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record. Self-records are ignored; a repeated pair keeps the
    /// smaller cost.
    pub fn insert(&mut self, from: &str, to: &str, cost: f64) -> Result<()> {
        if !(cost >= 0.0) || cost.is_nan() {
            return Err(Error::invalid(format!(
                "negative or NaN cost {cost} on {from}->{to}"
            )));
        }
        if from == to {
            return Ok(());
        }
        self.edges
            .entry((from.to_string(), to.to_string()))
            .and_modify(|c| *c = c.min(cost))
            .or_insert(cost);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn cost(&self, from: &str, to: &str) -> Option<f64> {
        self.edges.get(&(from.to_string(), to.to_string())).copied()
    }

    /// Records in `(from, to)` order.
    pub fn records(&self) -> impl Iterator<Item = DistanceRecord> + '_ {
        self.edges.iter().map(|((f, t), c)| DistanceRecord {
            from: f.clone(),
            to: t.clone(),
            cost: *c,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["from", "to", "cost"])?;
        for r in self.records() {
            w.write_record([r.from.as_str(), r.to.as_str(), &r.cost.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `from,to,cost` CSV.
pub fn load_distance_table(path: impl AsRef<Path>) -> Result<DistanceTable> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: shown.clone(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["from", "to", "cost"] {
        return Err(parse_err(
            1,
            format!("expected header 'from,to,cost', found '{}'", cols.join(",")),
        ));
    }

    let mut table = DistanceTable::new();
    for (k, rec) in records.enumerate() {
        let rec = rec.map_err(|e| parse_err(k + 2, e.to_string()))?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let from = rec[0].trim();
        let to = rec[1].trim();
        let cost: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric cost '{}'", &rec[2])))?;
        if cost < 0.0 || cost.is_nan() {
            return Err(Error::invalid(format!(
                "{shown}: line {line}: negative cost {cost} on {from}->{to}"
            )));
        }
        table.insert(from, to, cost)?;
    }
    Ok(table)
}

/// Chronological train/validation/test partition.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: TimeSeriesMatrix,
    pub val: TimeSeriesMatrix,
    pub test: TimeSeriesMatrix,
    pub ratios: [f64; 3],
}

/// Split boundaries `(train_end, val_end)` for `t` steps.
///
/// Boundaries are `floor(cumulative_ratio * t)`; a 1e-9 guard absorbs
/// representation error such as `(0.7 + 0.1) * 10 = 7.999...`.
pub fn split_boundaries(t: usize, ratios: [f64; 3]) -> Result<(usize, usize)> {
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
    }
    let tf = t as f64;
    let b1 = ((ratios[0] * tf + 1e-9).floor() as usize).min(t);
    let b2 = (((ratios[0] + ratios[1]) * tf + 1e-9).floor() as usize).min(t);
    if b1 == 0 || b2 == b1 || b2 == t {
        return Err(Error::invalid(format!(
            "degenerate split of {t} steps with ratios {ratios:?}: lengths {}, {}, {}",
            b1,
            b2 - b1,
            t - b2
        )));
    }
    Ok((b1, b2))
}

pub fn chronological_split(matrix: &TimeSeriesMatrix, ratios: [f64; 3]) -> Result<DatasetSplit> {
    let t = matrix.n_steps();
    let (b1, b2) = split_boundaries(t, ratios)?;
    Ok(DatasetSplit {
        train: matrix.slice_steps(0..b1)?,
        val: matrix.slice_steps(b1..b2)?,
        test: matrix.slice_steps(b2..t)?,
        ratios,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerSensor,
    Global,
}

/// Z-score statistics, stored per sensor (global statistics are repeated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub scope: NormScope,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, scope: NormScope) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape(format!("{} means, {} stds", mean.len(), std.len())));
        }
        check_std(&std)?;
        Ok(Self { mean, std, scope })
    }

    /// Population mean and standard deviation over valid readings of the
    /// training matrix.
    pub fn fit(train: &TimeSeriesMatrix, scope: NormScope) -> Result<Self> {
        let n = train.n_sensors();
        let valid_of = |i: usize| {
            train
                .row(i)
                .iter()
                .zip(train.valid().row(i))
                .filter(|(_, ok)| **ok)
                .map(|(v, _)| *v)
                .collect::<Vec<f64>>()
        };
        let (mean, std) = match scope {
            NormScope::PerSensor => (0..n).map(|i| moments(&valid_of(i))).unzip(),
            NormScope::Global => {
                let all: Vec<f64> = (0..n).flat_map(valid_of).collect();
                let (m, s) = moments(&all);
                (vec![m; n], vec![s; n])
            }
        };
        Self::new(mean, std, scope)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn normalize_value(&self, sensor: usize, v: f64) -> f64 {
        (v - self.mean[sensor]) / self.std[sensor]
    }

    pub fn denormalize_value(&self, sensor: usize, z: f64) -> f64 {
        z * self.std[sensor] + self.mean[sensor]
    }
}

fn moments(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_std(std: &[f64]) -> Result<()> {
    if let Some(i) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "sensor {i} has zero or undefined variance (std = {}); exclude constant series",
            std[i]
        )));
    }
    Ok(())
}

/// `(x - mean) / std` on valid entries. Missing entries become `0.0`, the
/// normalized mean, and stay flagged invalid.
pub fn zscore(matrix: &TimeSeriesMatrix, stats: &NormStats) -> Result<TimeSeriesMatrix> {
    if stats.len() != matrix.n_sensors() {
        return Err(Error::Shape(format!(
            "{} normalization entries for {} sensors",
            stats.len(),
            matrix.n_sensors()
        )));
    }
    check_std(&stats.std)?;
    let mut values = matrix.values.clone();
    for ((i, t), v) in values.indexed_iter_mut() {
        *v = if matrix.valid[[i, t]] {
            stats.normalize_value(i, *v)
        } else {
            0.0
        };
    }
    Ok(TimeSeriesMatrix {
        values,
        valid: matrix.valid.clone(),
        sensor_ids: matrix.sensor_ids.clone(),
        sampling_interval: matrix.sampling_interval,
        start_time: matrix.start_time.clone(),
    })
}

/// Inverse of [`zscore`]; missing entries return to the `0.0` sentinel.
pub fn inverse_zscore(matrix: &TimeSeriesMatrix, stats: &NormStats) -> Result<TimeSeriesMatrix> {
    if stats.len() != matrix.n_sensors() {
        return Err(Error::Shape(format!(
            "{} normalization entries for {} sensors",
            stats.len(),
            matrix.n_sensors()
        )));
    }
    check_std(&stats.std)?;
    let mut values = matrix.values.clone();
    for ((i, t), v) in values.indexed_iter_mut() {
        *v = if matrix.valid[[i, t]] {
            stats.denormalize_value(i, *v)
        } else {
            0.0
        };
    }
    Ok(TimeSeriesMatrix {
        values,
        valid: matrix.valid.clone(),
        sensor_ids: matrix.sensor_ids.clone(),
        sampling_interval: matrix.sampling_interval,
        start_time: matrix.start_time.clone(),
    })
}
