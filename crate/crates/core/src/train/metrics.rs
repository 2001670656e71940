use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRIC_HEADER: &str = "epoch,train_loss,train_acc,val_metric,mean_node_distance";

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "prediction/label count mismatch");
    if labels.is_empty() {
        return f64::NAN;
    }
    predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Average precision of one class: ranks by descending score, ties broken by
/// ascending sample index, and averages precision at each positive.
/// `None` when the class has no positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Mean of per-class average precision over classes with at least one
/// positive. `scores` and `labels` are `V × K` row-major.
pub fn mean_average_precision(scores: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    if k == 0 || scores.len() != labels.len() || !scores.len().is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "scores ({}) and labels ({}) must both be V x {k}",
            scores.len(),
            labels.len()
        )));
    }
    let v = scores.len() / k;
    let aps: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = (0..v).map(|i| scores[i * k + c]).collect();
            let l: Vec<u8> = (0..v).map(|i| labels[i * k + c]).collect();
            average_precision(&s, &l)
        })
        .collect();
    if aps.is_empty() {
        return Err(Error::InvalidArgument("no class has a positive label".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Validation accuracy (single-label) or mAP (multi-label).
    pub val_metric: f64,
    pub mean_node_distance: f64,
}

/// Per-epoch training metrics. `initial_node_distance` is the latent-node
/// spread before the first update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
    pub initial_node_distance: Option<f64>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "metric rows must increase in epoch: {} after {}",
                    row.epoch, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRIC_HEADER}\n");
        for r in &self.rows {
            let _ =
                writeln!(s, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_metric, r.mean_node_distance);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(METRIC_HEADER) {
            return Err(Error::InvalidArgument(format!("metric log must start with `{METRIC_HEADER}`")));
        }
        let mut log = MetricLog::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidArgument(format!("malformed metric row {}: `{line}`", i + 1));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            log.push(MetricRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_metric: num(f[3])?,
                mean_node_distance: num(f[4])?,
            })?;
        }
        Ok(log)
    }
}
