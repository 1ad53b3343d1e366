//! Desk-scale studies on synthetic models. Every study returns a
//! [`StudyReport`] holding its config, metric tables and named verdicts.

mod chaos;
mod fixed_point;
mod histograms;
mod regime;
mod sweep;

pub use chaos::{chaos_rate_study, ChaosRateConfig};
pub use fixed_point::{stationary_study, StationaryConfig};
pub use histograms::{histogram_convergence_study, sgd_sde_consistency_study, ConsistencyConfig, HistogramConfig};
pub use regime::{two_regime_study, RegimeConfig, RegimeEngine, Statistic};
pub use sweep::{batch_sweep, gamma_sweep, SweepConfig};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataDistribution, ModelSpec};

/// Model and data a study runs on.
#[derive(Clone)]
pub struct Setup {
    pub model: ModelSpec,
    pub pi: DataDistribution,
}

impl Setup {
    /// `tanh-dot` features, square loss, `V = 0.01 |w|^2 / 2` and a
    /// four-atom data law with a nondegenerate gradient-noise covariance.
    pub fn synthetic(dim: usize) -> Result<Self> {
        let points = match dim {
            1 => vec![(vec![-1.0], 0.8), (vec![-0.4], -0.6), (vec![0.3], 0.5), (vec![1.2], -0.2)],
            2 => vec![
                (vec![1.0, 0.0], 0.8),
                (vec![0.0, 1.0], -0.6),
                (vec![-0.7, 0.5], 0.5),
                (vec![0.4, -0.9], -0.2),
            ],
            _ => return Err(Error::Domain(format!("synthetic data exists for dimension 1 or 2, not {dim}"))),
        };
        Ok(Self {
            model: ModelSpec::builtin("tanh-dot", "square", 0.01, dim)?,
            pi: DataDistribution::uniform(points)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

/// A named check `measured <= threshold` (or `>=`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    /// `"<="` or `">="`.
    pub relation: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Self::compare(name, measured, threshold, "<=", measured <= threshold)
    }

    pub fn at_least(name: &str, measured: f64, threshold: f64) -> Self {
        Self::compare(name, measured, threshold, ">=", measured >= threshold)
    }

    fn compare(name: &str, measured: f64, threshold: f64, relation: &str, holds: bool) -> Self {
        let finite = measured.is_finite() || measured == f64::NEG_INFINITY;
        Self {
            name: name.into(),
            measured: measured.is_finite().then_some(measured),
            threshold: Some(threshold),
            relation: relation.into(),
            status: if holds && finite { Status::Pass } else { Status::Fail },
            note: (!measured.is_finite()).then(|| format!("measured value is {measured}")),
        }
    }

    pub fn not_applicable(name: &str, reason: &str) -> Self {
        Self {
            name: name.into(),
            measured: None,
            threshold: None,
            relation: String::new(),
            status: Status::NotApplicable,
            note: Some(reason.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Numeric table with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV with shortest round-trip decimal formatting.
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

impl StudyReport {
    pub(crate) fn new(id: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            seed,
            config: serde_json::to_value(config)?,
            tables: Vec::new(),
            verdicts: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// No verdict failed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    /// Writes `report.json` and one CSV per table into `dir`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.tables.len() + 1);
        for table in &self.tables {
            let path = dir.join(format!("{}.csv", table.name));
            table.write_csv(std::fs::File::create(&path)?)?;
            files.push(path);
        }
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        files.push(path);
        Ok(files)
    }
}

/// Wall-clock budget; overruns become report warnings.
pub(crate) struct Budget {
    start: Instant,
    limit: Option<f64>,
}

impl Budget {
    pub(crate) fn start(limit: Option<f64>) -> Self {
        Self {
            start: Instant::now(),
            limit,
        }
    }

    pub(crate) fn finish(self, report: &mut StudyReport) {
        if let Some(limit) = self.limit {
            let elapsed = self.start.elapsed().as_secs_f64();
            if elapsed > limit {
                report.warnings.push(format!(
                    "study took {elapsed:.1} s, over its {limit:.1} s budget; results are complete"
                ));
            }
        }
    }
}

pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let (mean, _) = mean_stderr(values);
    let n = values.len() as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub(crate) fn require_grid(name: &str, grid: &[usize], min_len: usize) -> Result<()> {
    if grid.len() < min_len {
        return Err(Error::Config {
            field: name.into(),
            message: format!("needs at least {min_len} sizes, got {}", grid.len()),
        });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] == 0 {
        return Err(Error::Config {
            field: name.into(),
            message: "sizes must be positive and strictly increasing".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_status_and_nan() {
        assert_eq!(Verdict::at_most("a", 1.0, 2.0).status, Status::Pass);
        assert_eq!(Verdict::at_least("a", 1.0, 2.0).status, Status::Fail);
        let v = Verdict::at_most("a", f64::NAN, 2.0);
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.measured, None);
        assert!(Verdict::not_applicable("a", "single point").passed());
    }

    #[test]
    fn table_csv_round_trips_values() {
        let mut t = Table::new("t", &["n", "x"]);
        t.push(vec![1.0, 0.1 + 0.2]);
        t.push(vec![2.0, 1e-300]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<Vec<f64>> = reader
            .records()
            .map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows, t.rows);
    }
}
