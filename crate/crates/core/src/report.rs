//! Flat `experiment_id,metric,value` metric tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textfmt::parse_f64;

pub const REPORT_HEADER: &str = "experiment_id,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub experiment_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<MetricRow>,
}

/// Metrics that are accuracies and must lie in `[0, 1]`.
fn is_accuracy(metric: &str) -> bool {
    metric.starts_with("a_")
}

impl ExperimentReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, experiment_id: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            experiment_id: experiment_id.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    pub fn get(&self, experiment_id: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.experiment_id == experiment_id && r.metric == metric)
            .map(|r| r.value)
    }

    /// Checks value ranges: accuracies in `[0, 1]`, `e_gen` in `[-1, 1]`,
    /// everything finite.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let ok = r.value.is_finite()
                && (!is_accuracy(&r.metric) || (0.0..=1.0).contains(&r.value))
                && (r.metric != "e_gen" || (-1.0..=1.0).contains(&r.value));
            if !ok {
                return Err(Error::Numerical(format!(
                    "metric {}/{} has out-of-range value {}",
                    r.experiment_id, r.metric, r.value
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?}", r.experiment_id, r.metric, r.value);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(REPORT_HEADER) {
            return Err(Error::parse(1, format!("expected header `{REPORT_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.splitn(3, ',');
            let (Some(id), Some(metric), Some(value)) = (it.next(), it.next(), it.next()) else {
                return Err(Error::parse(k + 2, "expected `experiment_id,metric,value`"));
            };
            rows.push(MetricRow {
                experiment_id: id.to_string(),
                metric: metric.to_string(),
                value: parse_f64(value, k + 2)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}
