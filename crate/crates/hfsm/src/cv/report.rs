use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentPlan, GridPoint};
use crate::data::SplitPlan;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::solver::{ModelDocument, Variant};

/// Validation AUROC of one grid point; `auroc` is `None` when the fit or the metric failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerScore {
    pub grid_index: usize,
    pub point: GridPoint,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

/// Outcome for one (model, outer fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub variant: Variant,
    pub fold: usize,
    pub selected: Option<GridPoint>,
    pub inner_auroc: Option<f64>,
    pub inner: Vec<InnerScore>,
    pub metrics: Option<MetricReport>,
    /// Set when the cell failed; the experiment continues.
    pub failure: Option<String>,
    pub train_seconds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_representatives: usize,
    pub document: Option<ModelDocument>,
}

/// Fold-averaged metrics for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_cells: usize,
    pub n_failed: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub calibration_intercept: Option<f64>,
    pub calibration_slope: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Unweighted mean of each metric over successful cells (`None` marks a failed cell).
pub fn aggregate(cells: &[Option<MetricReport>]) -> Aggregate {
    let ok: Vec<&MetricReport> = cells.iter().flatten().collect();
    Aggregate {
        n_cells: cells.len(),
        n_failed: cells.len() - ok.len(),
        auroc: mean(ok.iter().map(|m| m.auroc)),
        auprc: mean(ok.iter().map(|m| m.auprc)),
        calibration_intercept: mean(ok.iter().map(|m| m.calibration_intercept)),
        calibration_slope: mean(ok.iter().map(|m| m.calibration_slope)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub plan: ExperimentPlan,
    pub splits: SplitPlan,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<(String, Aggregate)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

impl CvReport {
    pub fn new(plan: ExperimentPlan, splits: SplitPlan, cells: Vec<CellResult>) -> Self {
        let aggregates = plan
            .models
            .iter()
            .map(|m| {
                let name = m.label();
                let metrics: Vec<Option<MetricReport>> = cells
                    .iter()
                    .filter(|c| c.model == name)
                    .map(|c| if c.failure.is_some() { None } else { c.metrics.clone() })
                    .collect();
                (name, aggregate(&metrics))
            })
            .collect();
        CvReport {
            plan,
            splits,
            cells,
            aggregates,
        }
    }

    pub fn aggregate_for(&self, model: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|(n, _)| n == model).map(|(_, a)| a)
    }

    pub fn has_failures(&self) -> bool {
        self.cells.iter().any(|c| c.failure.is_some())
    }

    /// One row per (model, fold) plus a `mean` row per model.
    pub fn results_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "fold",
            "n",
            "n_positive",
            "auroc",
            "auprc",
            "calibration_intercept",
            "calibration_slope",
            "status",
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            let m = c.metrics.as_ref();
            w.write_record([
                c.model.clone(),
                c.fold.to_string(),
                m.map(|m| m.n.to_string()).unwrap_or_default(),
                m.map(|m| m.n_positive.to_string()).unwrap_or_default(),
                opt(m.and_then(|m| m.auroc)),
                opt(m.and_then(|m| m.auprc)),
                opt(m.and_then(|m| m.calibration_intercept)),
                opt(m.and_then(|m| m.calibration_slope)),
                c.failure.as_ref().map(|f| format!("failed: {f}")).unwrap_or_else(|| "ok".into()),
            ])
            .map_err(csv_err)?;
        }
        for (name, a) in &self.aggregates {
            w.write_record([
                name.clone(),
                "mean".into(),
                String::new(),
                String::new(),
                opt(a.auroc),
                opt(a.auprc),
                opt(a.calibration_intercept),
                opt(a.calibration_slope),
                if a.n_failed == 0 {
                    "ok".into()
                } else {
                    format!("failed_cells={}", a.n_failed)
                },
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Selected hyperparameters per (model, fold).
    pub fn selected_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "fold", "lambda", "kernel", "sigma", "input", "inner_auroc"])
            .map_err(csv_err)?;
        for c in &self.cells {
            let p = c.selected.as_ref();
            let k = p.and_then(|p| p.kernel.as_ref());
            w.write_record([
                c.model.clone(),
                c.fold.to_string(),
                opt(p.and_then(|p| p.lambda)),
                k.map(|k| k.kind.label()).unwrap_or_default(),
                opt(p.and_then(GridPoint::sigma)),
                k.map(|k| k.input.label()).unwrap_or_default(),
                opt(c.inner_auroc),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Every inner grid point with its validation AUROC.
    pub fn inner_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "fold", "grid_index", "lambda", "kernel", "input", "auroc", "error"])
            .map_err(csv_err)?;
        for c in &self.cells {
            for s in &c.inner {
                let k = s.point.kernel.as_ref();
                w.write_record([
                    c.model.clone(),
                    c.fold.to_string(),
                    s.grid_index.to_string(),
                    opt(s.point.lambda),
                    k.map(|k| k.kind.label()).unwrap_or_default(),
                    k.map(|k| k.input.label()).unwrap_or_default(),
                    opt(s.auroc),
                    s.error.clone().unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish(w)
    }

    /// Refit wall times and solver diagnostics; kept apart so the other tables are reproducible byte for byte.
    pub fn timings_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "fold", "train_seconds", "iterations", "converged", "representatives"])
            .map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.model.clone(),
                c.fold.to_string(),
                format!("{:.6}", c.train_seconds),
                c.iterations.to_string(),
                c.converged.to_string(),
                c.n_representatives.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Writes the tables and per-fit model documents into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |path: PathBuf, text: String| -> Result<()> {
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        put(dir.join("results.csv"), self.results_csv()?)?;
        put(dir.join("selected.csv"), self.selected_csv()?)?;
        put(dir.join("inner.csv"), self.inner_csv()?)?;
        put(dir.join("timings.csv"), self.timings_csv()?)?;
        put(dir.join("splits.json"), self.splits.to_json()?)?;
        let fits = dir.join("fits");
        fs::create_dir_all(&fits).map_err(|e| Error::io(&fits, e))?;
        for c in &self.cells {
            if let Some(doc) = &c.document {
                put(
                    fits.join(format!("{}_fold{}.json", file_stem(&c.model), c.fold)),
                    doc.to_json()?,
                )?;
            }
        }
        Ok(written)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}
