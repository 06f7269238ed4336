use std::cmp::Ordering;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{CellResult, CvReport, InnerScore};
use super::{grid_points, kernel_candidates, ExperimentPlan, GridPoint, ModelTemplate};
use crate::data::{make_splits, ObservationTable, SplitPlan, INTERCEPT};
use crate::error::{Error, Result};
use crate::kernels::{FittedKernel, KernelSpec};
use crate::metrics::{auroc, MetricReport};
use crate::scalar::Scalar;
use crate::solver::{fit, fit_warm, predict, FitResult, ModelDocument, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStage {
    Inner,
    Refit,
}

/// Ids seen by one fit: its training rows, the rows its kernel (encoders,
/// prevalence weights) was learned from, and the rows it was scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAudit {
    pub fold: usize,
    pub model: String,
    pub stage: FitStage,
    pub kernel: Option<String>,
    pub train_ids: Vec<String>,
    pub kernel_fit_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

type Audit<'a> = Option<&'a Mutex<Vec<FitAudit>>>;

fn record(audit: Audit<'_>, entry: impl FnOnce() -> FitAudit) {
    if let Some(log) = audit {
        log.lock().expect("audit log poisoned").push(entry());
    }
}

/// Runs the plan in double precision.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<CvReport> {
    run_experiment_audited::<f64>(plan, None)
}

struct Context<'a, T> {
    plan: &'a ExperimentPlan,
    table: &'a ObservationTable<T>,
    splits: &'a SplitPlan,
    audit: Audit<'a>,
}

impl<T: Scalar> Context<'_, T> {
    fn slice(&self, model: &ModelTemplate, rows: &[usize]) -> Result<ObservationTable<T>> {
        let sub = self.table.subset(rows);
        match &model.features {
            Some(names) => {
                let mut keep: Vec<&str> = vec![INTERCEPT];
                keep.extend(names.iter().map(String::as_str).filter(|n| *n != INTERCEPT));
                sub.select_features(&keep)
            }
            None => Ok(sub),
        }
    }

    /// Validation AUROC along the λ path (largest first, warm-started) for one kernel.
    fn inner_path(&self, fold: usize, model: &ModelTemplate, kernel: &KernelSpec) -> Result<Vec<InnerScore>> {
        let train = self.slice(model, &self.splits.inner_train[fold])?;
        let valid = self.slice(model, &self.splits.inner_valid[fold])?;
        let points: Vec<(usize, GridPoint)> = grid_points(self.plan, model)?
            .into_iter()
            .enumerate()
            .filter(|(_, p)| p.kernel.as_ref() == Some(kernel))
            .collect();
        let prepared = FittedKernel::fit(kernel, &train).and_then(|fk| {
            let k_train = fk.operator(&train, &train)?;
            let k_valid = fk.operator(&valid, &train)?;
            Ok((k_train, k_valid))
        });
        let (k_train, k_valid) = match prepared {
            Ok(k) => k,
            Err(e) => {
                return Ok(points
                    .into_iter()
                    .map(|(grid_index, point)| InnerScore {
                        grid_index,
                        point,
                        auroc: None,
                        error: Some(e.to_string()),
                    })
                    .collect())
            }
        };
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[b].1.lambda.partial_cmp(&points[a].1.lambda).unwrap_or(Ordering::Equal)
        });
        let mut scores: Vec<Option<InnerScore>> = vec![None; points.len()];
        let mut warm: Option<FitResult<T>> = None;
        for idx in order {
            let (grid_index, point) = &points[idx];
            let spec = ModelSpec::new(model.variant, point.lambda.unwrap_or(0.0), Some(kernel.clone()));
            record(self.audit, || FitAudit {
                fold,
                model: model.label(),
                stage: FitStage::Inner,
                kernel: Some(kernel.label()),
                train_ids: train.ids().to_vec(),
                kernel_fit_ids: train.ids().to_vec(),
                eval_ids: valid.ids().to_vec(),
            });
            let outcome = fit_warm(&spec, &train, Some(k_train.as_ref()), &self.plan.solver, warm.as_ref()).and_then(|f| {
                let p = predict(&f.beta, &f.alpha, valid.features(), Some(k_valid.as_ref()))?;
                Ok((f, p))
            });
            let (score, error) = match outcome {
                Ok((f, p)) => {
                    warm = Some(f);
                    match auroc(&p, valid.outcomes()) {
                        Ok(a) => (Some(a), None),
                        Err(e) => (None, Some(e.to_string())),
                    }
                }
                Err(e) => {
                    warm = None;
                    (None, Some(e.to_string()))
                }
            };
            scores[idx] = Some(InnerScore {
                grid_index: *grid_index,
                point: point.clone(),
                auroc: score,
                error,
            });
        }
        Ok(scores.into_iter().flatten().collect())
    }

    fn refit(&self, fold: usize, model: &ModelTemplate, selected: Option<&GridPoint>) -> Result<Refit<T>> {
        let train = self.slice(model, &self.splits.outer_train(fold))?;
        let test = self.slice(model, &self.splits.outer_test(fold))?;
        let start = Instant::now();
        let (fit_result, probabilities, kernel) = match selected.and_then(|p| p.kernel.as_ref()) {
            None => {
                record(self.audit, || FitAudit {
                    fold,
                    model: model.label(),
                    stage: FitStage::Refit,
                    kernel: None,
                    train_ids: train.ids().to_vec(),
                    kernel_fit_ids: Vec::new(),
                    eval_ids: test.ids().to_vec(),
                });
                let f = fit(&ModelSpec::lr(), &train, None, &self.plan.solver)?;
                let p = predict(&f.beta, &[], test.features(), None)?;
                (f, p, None)
            }
            Some(kernel) => {
                record(self.audit, || FitAudit {
                    fold,
                    model: model.label(),
                    stage: FitStage::Refit,
                    kernel: Some(kernel.label()),
                    train_ids: train.ids().to_vec(),
                    kernel_fit_ids: train.ids().to_vec(),
                    eval_ids: test.ids().to_vec(),
                });
                let lambda = selected.and_then(|p| p.lambda).unwrap_or(0.0);
                let spec = ModelSpec::new(model.variant, lambda, Some(kernel.clone()));
                let fk = FittedKernel::fit(kernel, &train)?;
                let k_train = fk.operator(&train, &train)?;
                let f = fit(&spec, &train, Some(k_train.as_ref()), &self.plan.solver)?;
                let k_test = fk.operator(&test, &train)?;
                let p = predict(&f.beta, &f.alpha, test.features(), Some(k_test.as_ref()))?;
                (f, p, Some(fk))
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let metrics = MetricReport::compute(&probabilities, test.outcomes())?;
        let document = ModelDocument::from_fit(&fit_result, kernel.as_ref(), &train)?;
        Ok(Refit {
            fit: fit_result,
            metrics,
            document,
            seconds,
        })
    }
}

struct Refit<T> {
    fit: FitResult<T>,
    metrics: MetricReport,
    document: ModelDocument,
    seconds: f64,
}

/// Higher AUROC wins; ties prefer larger λ, then smaller σ, then earlier grid position.
fn better(a: &InnerScore, b: &InnerScore) -> bool {
    let (sa, sb) = (a.auroc.unwrap_or(f64::NEG_INFINITY), b.auroc.unwrap_or(f64::NEG_INFINITY));
    if sa != sb {
        return sa > sb;
    }
    let (la, lb) = (a.point.lambda.unwrap_or(0.0), b.point.lambda.unwrap_or(0.0));
    if la != lb {
        return la > lb;
    }
    let (ga, gb) = (a.point.sigma().unwrap_or(0.0), b.point.sigma().unwrap_or(0.0));
    if ga != gb {
        return ga < gb;
    }
    a.grid_index < b.grid_index
}

pub fn select(scores: &[InnerScore]) -> Option<&InnerScore> {
    scores
        .iter()
        .filter(|s| s.auroc.is_some())
        .fold(None, |best: Option<&InnerScore>, s| match best {
            Some(b) if !better(s, b) => Some(b),
            _ => Some(s),
        })
}

/// Runs the plan, appending one [`FitAudit`] per fit to `audit` when given.
pub fn run_experiment_audited<T: Scalar>(plan: &ExperimentPlan, audit: Audit<'_>) -> Result<CvReport> {
    plan.validate()?;
    let table: ObservationTable<T> = plan.dataset.load()?;
    let splits = make_splits(&table, plan.split.outer_folds, plan.split.inner_fraction, plan.seed)?;
    let ctx = Context {
        plan,
        table: &table,
        splits: &splits,
        audit,
    };
    let folds = plan.split.outer_folds;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut inner_tasks = Vec::new();
    for fold in 0..folds {
        for (m, model) in plan.models.iter().enumerate() {
            for kernel in kernel_candidates(plan, model)? {
                inner_tasks.push((fold, m, kernel));
            }
        }
    }
    let inner: Vec<Result<Vec<InnerScore>>> = pool.install(|| {
        inner_tasks
            .par_iter()
            .map(|(fold, m, kernel)| ctx.inner_path(*fold, &plan.models[*m], kernel))
            .collect()
    });

    let mut per_cell: Vec<Vec<InnerScore>> = vec![Vec::new(); folds * plan.models.len()];
    for ((fold, m, _), scores) in inner_tasks.iter().zip(inner) {
        per_cell[fold * plan.models.len() + m].extend(scores?);
    }
    for scores in &mut per_cell {
        scores.sort_by_key(|s| s.grid_index);
    }

    let cells_in: Vec<(usize, usize)> = (0..folds)
        .flat_map(|fold| (0..plan.models.len()).map(move |m| (fold, m)))
        .collect();
    let cells: Vec<CellResult> = pool.install(|| {
        cells_in
            .par_iter()
            .map(|&(fold, m)| {
                let model = &plan.models[m];
                let scores = per_cell[fold * plan.models.len() + m].clone();
                let chosen = select(&scores).cloned();
                let mut cell = CellResult {
                    model: model.label(),
                    variant: model.variant,
                    fold,
                    selected: chosen.as_ref().map(|c| c.point.clone()),
                    inner_auroc: chosen.as_ref().and_then(|c| c.auroc),
                    inner: scores,
                    metrics: None,
                    failure: None,
                    train_seconds: 0.0,
                    iterations: 0,
                    converged: false,
                    n_representatives: 0,
                    document: None,
                };
                if model.variant.uses_kernel() && chosen.is_none() {
                    cell.failure = Some("no grid point produced a validation AUROC".into());
                    return cell;
                }
                let selected = cell.selected.clone();
                match ctx.refit(fold, model, selected.as_ref()) {
                    Ok(r) => {
                        cell.metrics = Some(r.metrics);
                        cell.train_seconds = r.seconds;
                        cell.iterations = r.fit.diagnostics.iterations;
                        cell.converged = r.fit.diagnostics.converged;
                        cell.n_representatives = r.fit.n_representatives();
                        cell.document = Some(r.document);
                    }
                    Err(e) => cell.failure = Some(e.to_string()),
                }
                cell
            })
            .collect()
    });
    let mut cells = cells;
    let order: Vec<String> = plan.models.iter().map(ModelTemplate::label).collect();
    cells.sort_by_key(|c| (order.iter().position(|n| *n == c.model), c.fold));
    Ok(CvReport::new(plan.clone(), splits, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{InputSelector, KernelKind};

    fn score(idx: usize, auroc: f64, lambda: f64, sigma: f64) -> InnerScore {
        InnerScore {
            grid_index: idx,
            point: GridPoint {
                lambda: Some(lambda),
                kernel: Some(KernelSpec::new(
                    KernelKind::Rbf { sigma },
                    InputSelector::Columns(vec!["x".into()]),
                )),
            },
            auroc: Some(auroc),
            error: None,
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let s = vec![score(0, 0.7, 0.01, 1.0), score(1, 0.8, 0.01, 1.0), score(2, 0.8, 0.1, 1.0)];
        assert_eq!(select(&s).unwrap().grid_index, 2);
        let s = vec![score(0, 0.8, 0.1, 1.0), score(1, 0.8, 0.1, 0.1)];
        assert_eq!(select(&s).unwrap().grid_index, 1);
        let s = vec![score(0, 0.8, 0.1, 0.1), score(1, 0.8, 0.1, 0.1)];
        assert_eq!(select(&s).unwrap().grid_index, 0);
        let mut none = score(0, 0.0, 1.0, 1.0);
        none.auroc = None;
        assert!(select(&[none]).is_none());
    }
}
