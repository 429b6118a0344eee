//! CSV and JSON outputs of runs.

use std::path::Path;

use serde::Serialize;

use crate::config::TrainConfig;
use crate::dataio::CorpusStats;
use crate::error::{Error, Result};

use super::metrics::RankingReport;
use super::train::StepLog;

pub const LOSS_COLUMNS: [&str; 8] = ["epoch", "step", "l_p", "l_c_item", "l_c_factor", "l_c", "l_d", "total"];

/// Header of the metrics table for cut-offs `ks`.
pub fn metrics_header(ks: &[usize]) -> Vec<String> {
    let mut h: Vec<String> = ["dataset", "variant", "seed", "epoch"].map(String::from).to_vec();
    for k in ks {
        h.push(format!("P@{k}"));
        h.push(format!("M@{k}"));
    }
    h.push("bucket".into());
    h
}

/// One metrics row before formatting. `seed` is a seed number or a
/// summary label such as `mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub variant: String,
    pub seed: String,
    pub epoch: usize,
    pub bucket: String,
    /// `(P@k, M@k)` per cut-off.
    pub values: Vec<(f64, f64)>,
}

impl MetricsRow {
    pub fn from_report(dataset: &str, variant: &str, seed: &str, r: &RankingReport) -> Vec<Self> {
        r.buckets
            .iter()
            .map(|b| MetricsRow {
                dataset: dataset.into(),
                variant: variant.into(),
                seed: seed.into(),
                epoch: r.epoch,
                bucket: b.bucket.name().into(),
                values: b.precision.iter().copied().zip(b.mrr.iter().copied()).collect(),
            })
            .collect()
    }

    fn record(&self) -> Vec<String> {
        let mut rec = vec![
            self.dataset.clone(),
            self.variant.clone(),
            self.seed.clone(),
            self.epoch.to_string(),
        ];
        for (p, m) in &self.values {
            rec.push(format!("{p:.6}"));
            rec.push(format!("{m:.6}"));
        }
        rec.push(self.bucket.clone());
        rec
    }
}

/// Mean and sample standard deviation rows over `rows` sharing dataset,
/// variant, epoch and bucket.
pub fn summary_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut keys: Vec<(String, String, usize, String)> = Vec::new();
    for r in rows {
        let key = (r.dataset.clone(), r.variant.clone(), r.epoch, r.bucket.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (dataset, variant, epoch, bucket) in keys {
        let group: Vec<&MetricsRow> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.variant == variant && r.epoch == epoch && r.bucket == bucket)
            .collect();
        let n = group.len() as f64;
        let width = group[0].values.len();
        let stat = |f: &dyn Fn(&MetricsRow, usize) -> f64, i: usize| {
            let mean = group.iter().map(|r| f(r, i)).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group.iter().map(|r| (f(r, i) - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (mean, var.sqrt())
        };
        let p = |r: &MetricsRow, i: usize| r.values[i].0;
        let m = |r: &MetricsRow, i: usize| r.values[i].1;
        let stats: Vec<((f64, f64), (f64, f64))> = (0..width).map(|i| (stat(&p, i), stat(&m, i))).collect();
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            out.push(MetricsRow {
                dataset: dataset.clone(),
                variant: variant.clone(),
                seed: label.into(),
                epoch,
                bucket: bucket.clone(),
                values: stats
                    .iter()
                    .map(|(ps, ms)| if pick == 0 { (ps.0, ms.0) } else { (ps.1, ms.1) })
                    .collect(),
            });
        }
    }
    out
}

pub fn write_metrics<W: std::io::Write>(out: W, ks: &[usize], rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header(ks))?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

pub fn write_metrics_csv(path: &Path, ks: &[usize], rows: &[MetricsRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(f, ks, rows)
}

pub fn write_loss_csv(path: &Path, steps: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOSS_COLUMNS)?;
    for s in steps {
        let l = &s.loss;
        let mut rec = vec![s.epoch.to_string(), s.step.to_string()];
        rec.extend([l.l_p, l.l_c_item, l.l_c_factor, l.l_c, l.l_d, l.total].map(|v| format!("{v:.12e}")));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub dataset: String,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub corpus: Option<CorpusStats>,
    pub wall_time_seconds: f64,
    pub version: String,
    pub created: String,
}

impl RunManifest {
    pub fn new(command: &str, dataset: &str, config: &TrainConfig, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.into(),
            dataset: dataset.into(),
            config: config.clone(),
            seeds,
            corpus: None,
            wall_time_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
            created: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
