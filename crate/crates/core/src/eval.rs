//! Forecast error metrics and graph-vs-graph comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictionBatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Fraction, not percent; zero-truth entries are excluded.
    pub mape: f64,
    pub rmse: f64,
    pub n: usize,
    pub n_mape: usize,
}

/// MAE and RMSE over entries where `mask` is set; MAPE over those that also
/// have nonzero truth. MAPE is 0 with `n_mape == 0` when no such entry exists.
pub fn compute_metrics(truth: &[f64], predicted: &[f64], mask: &[bool]) -> Result<Metrics> {
    if truth.len() != predicted.len() || truth.len() != mask.len() {
        return Err(Error::Shape(format!(
            "truth {}, predicted {}, mask {}",
            truth.len(),
            predicted.len(),
            mask.len()
        )));
    }
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    let (mut n, mut n_mape) = (0usize, 0usize);
    for ((y, p), ok) in truth.iter().zip(predicted).zip(mask) {
        if !ok {
            continue;
        }
        let e = y - p;
        abs += e.abs();
        sq += e * e;
        n += 1;
        if *y != 0.0 {
            pct += (e / y).abs();
            n_mape += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no valid points to evaluate"));
    }
    Ok(Metrics {
        mae: abs / n as f64,
        mape: if n_mape > 0 { pct / n_mape as f64 } else { 0.0 },
        rmse: (sq / n as f64).sqrt(),
        n,
        n_mape,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRecord {
    pub horizon_steps: usize,
    pub horizon_minutes: f64,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub n_evaluated: usize,
    pub n_mape: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub graph_label: String,
    /// Set for reports that belong to a family averaged by [`compare`],
    /// e.g. one random graph per seed.
    #[serde(default)]
    pub replicate: Option<u64>,
    pub records: Vec<HorizonRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub version: String,
}

impl MetricsReport {
    pub fn from_predictions(
        graph_label: &str,
        batch: &PredictionBatch,
        sampling_interval: f64,
        config: serde_json::Value,
    ) -> Result<Self> {
        let mut records = Vec::with_capacity(batch.horizons.len());
        for (k, &h) in batch.horizons.iter().enumerate() {
            let (t, p, m) = (&batch.truth[k], &batch.predicted[k], &batch.mask[k]);
            let t: Vec<f64> = t.iter().copied().collect();
            let p: Vec<f64> = p.iter().copied().collect();
            let m: Vec<bool> = m.iter().copied().collect();
            let met = compute_metrics(&t, &p, &m)?;
            records.push(HorizonRecord {
                horizon_steps: h,
                horizon_minutes: h as f64 * sampling_interval,
                mae: met.mae,
                mape: met.mape,
                rmse: met.rmse,
                n_evaluated: met.n,
                n_mape: met.n_mape,
            });
        }
        Ok(Self {
            graph_label: graph_label.to_string(),
            replicate: None,
            records,
            config,
            version: crate::VERSION.to_string(),
        })
    }

    pub fn record(&self, horizon_steps: usize) -> Option<&HorizonRecord> {
        self.records.iter().find(|r| r.horizon_steps == horizon_steps)
    }

    /// `rmse >= mae >= 0` and `mape >= 0` on every record.
    pub fn check_invariants(&self) -> Result<()> {
        for r in &self.records {
            let ok = r.mae >= 0.0 && r.rmse >= r.mae * (1.0 - 1e-12) && r.mape >= 0.0;
            if !ok {
                return Err(Error::invalid(format!(
                    "report '{}' horizon {}: mae {} rmse {} mape {}",
                    self.graph_label, r.horizon_steps, r.mae, r.rmse, r.mape
                )));
            }
        }
        Ok(())
    }

    fn horizons(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.horizon_steps).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::graph::write_json(self, path)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeMetric {
    pub id: String,
    pub horizon: usize,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
}

/// Per-sensor metrics for every horizon. Sensors without any valid target
/// are omitted.
pub fn per_node_metrics(batch: &PredictionBatch) -> Vec<NodeMetric> {
    let mut out = Vec::new();
    for (k, &h) in batch.horizons.iter().enumerate() {
        for (i, id) in batch.sensor_ids.iter().enumerate() {
            let t: Vec<f64> = batch.truth[k].row(i).to_vec();
            let p: Vec<f64> = batch.predicted[k].row(i).to_vec();
            let m: Vec<bool> = batch.mask[k].row(i).to_vec();
            if let Ok(met) = compute_metrics(&t, &p, &m) {
                out.push(NodeMetric {
                    id: id.clone(),
                    horizon: h,
                    mae: met.mae,
                    mape: met.mape,
                    rmse: met.rmse,
                });
            }
        }
    }
    out
}

pub fn write_node_metrics_csv(rows: &[NodeMetric], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub graph_label: String,
    pub horizon_steps: usize,
    pub horizon_minutes: f64,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    /// Number of reports averaged into this row.
    pub replicates: usize,
    pub best_mae: bool,
    pub best_mape: bool,
    pub best_rmse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub horizons: Vec<usize>,
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

struct Group<'a> {
    label: &'a str,
    reports: Vec<&'a MetricsReport>,
}

/// Aligns reports by horizon and marks the strict minimum of each metric per
/// horizon. Reports sharing a label are averaged when all carry distinct
/// replicate numbers.
pub fn compare(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    let Some(first) = reports.first() else {
        return Err(Error::invalid("no reports to compare"));
    };
    let horizons = first.horizons();
    for r in reports {
        if r.horizons() != horizons {
            return Err(Error::invalid(format!(
                "report '{}' has horizons {:?}, expected {:?}",
                r.graph_label,
                r.horizons(),
                horizons
            )));
        }
    }

    let mut groups: Vec<Group> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|g| g.label == r.graph_label) {
            Some(g) => g.reports.push(r),
            None => groups.push(Group {
                label: &r.graph_label,
                reports: vec![r],
            }),
        }
    }
    for g in &groups {
        if g.reports.len() < 2 {
            continue;
        }
        let mut seen = BTreeMap::new();
        for r in &g.reports {
            let Some(rep) = r.replicate else {
                return Err(Error::invalid(format!(
                    "label '{}' appears {} times without replicate numbers",
                    g.label,
                    g.reports.len()
                )));
            };
            if seen.insert(rep, ()).is_some() {
                return Err(Error::invalid(format!(
                    "label '{}' has replicate {rep} twice",
                    g.label
                )));
            }
        }
    }

    let mut rows = Vec::new();
    for g in &groups {
        let c = g.reports.len() as f64;
        for (k, &h) in horizons.iter().enumerate() {
            let recs = g.reports.iter().map(|r| &r.records[k]);
            let mean = |f: fn(&HorizonRecord) -> f64| recs.clone().map(f).sum::<f64>() / c;
            rows.push(ComparisonRow {
                graph_label: g.label.to_string(),
                horizon_steps: h,
                horizon_minutes: g.reports[0].records[k].horizon_minutes,
                mae: mean(|r| r.mae),
                mape: mean(|r| r.mape),
                rmse: mean(|r| r.rmse),
                replicates: g.reports.len(),
                best_mae: false,
                best_mape: false,
                best_rmse: false,
            });
        }
    }

    type Metric = (fn(&ComparisonRow) -> f64, fn(&mut ComparisonRow));
    let metric_fns: [Metric; 3] = [
        (|r| r.mae, |r| r.best_mae = true),
        (|r| r.mape, |r| r.best_mape = true),
        (|r| r.rmse, |r| r.best_rmse = true),
    ];
    for &h in &horizons {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].horizon_steps == h).collect();
        for (get, mark) in &metric_fns {
            let min = idx.iter().map(|&i| get(&rows[i])).fold(f64::INFINITY, f64::min);
            let at_min: Vec<usize> = idx.iter().copied().filter(|&i| get(&rows[i]) == min).collect();
            if let [only] = at_min[..] {
                mark(&mut rows[only]);
            }
        }
    }

    Ok(ComparisonTable {
        horizons,
        labels: groups.iter().map(|g| g.label.to_string()).collect(),
        rows,
    })
}

impl ComparisonTable {
    pub fn row(&self, label: &str, horizon_steps: usize) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.graph_label == label && r.horizon_steps == horizon_steps)
    }

    /// Fixed-width text table; `*` marks the best value of a column within a
    /// horizon.
    pub fn render_text(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>10}  {:>10}  {:>10}  {:>4}",
            "graph", "horizon", "MAE", "MAPE", "RMSE", "reps"
        );
        for &h in &self.horizons {
            for r in self.rows.iter().filter(|r| r.horizon_steps == h) {
                let cell = |v: f64, best: bool| format!("{:.4}{}", v, if best { "*" } else { " " });
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>7}  {:>10}  {:>10}  {:>10}  {:>4}",
                    r.graph_label,
                    format!("{}min", r.horizon_minutes),
                    cell(r.mae, r.best_mae),
                    cell(r.mape, r.best_mape),
                    cell(r.rmse, r.best_rmse),
                    r.replicates
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
