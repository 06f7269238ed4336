//! Nested cross-validation: inner grid search by validation AUROC, refit on
//! the outer-training slice, evaluation on the outer-test slice.

mod report;
mod run;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use report::{aggregate, Aggregate, CellResult, CvReport, InnerScore};
pub use run::{run_experiment, run_experiment_audited, select, FitAudit, FitStage};

use crate::data::{load_table, ObservationTable, TableSchema};
use crate::error::{Error, Result};
use crate::kernels::{InputSelector, KernelKind, KernelSpec, DEFAULT_COMMON_THRESHOLD, DEFAULT_RARE_THRESHOLD};
use crate::scalar::Scalar;
use crate::solver::{SolverConfig, Variant};
use crate::synth::{self, CausalExampleSpec, CausalKind, ScenarioSpec};

/// Five log-spaced penalties from 0.001 to 1.
pub fn default_lambdas() -> Vec<f64> {
    (0..5).map(|k| 10f64.powf(-3.0 + 0.75 * k as f64)).collect()
}

pub fn default_sigmas() -> Vec<f64> {
    vec![0.01, 0.1, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Scenario {
        scenario: u8,
        n: usize,
        seed: u64,
    },
    Causal {
        kind: CausalKind,
        n: usize,
        seed: u64,
    },
    PrimalDual {
        n: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        schema: Option<TableSchema>,
    },
}

impl DatasetSource {
    pub fn load<T: Scalar>(&self) -> Result<ObservationTable<T>> {
        match self {
            DatasetSource::Scenario { scenario, n, seed } => {
                synth::gen_scenario(&ScenarioSpec::named(*scenario, *n, *seed)?)
            }
            DatasetSource::Causal { kind, n, seed } => synth::gen_causal_example(&CausalExampleSpec {
                kind: *kind,
                n: *n,
                seed: *seed,
            }),
            DatasetSource::PrimalDual { n, seed } => synth::gen_primal_dual(*n, *seed),
            DatasetSource::File { path, schema } => load_table(path, schema.as_ref()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Rbf,
    Jaccard,
    Jcr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kernels: Vec<KernelFamily>,
    pub inputs: Vec<InputSelector>,
    pub common_threshold: f64,
    pub rare_threshold: f64,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            lambda: default_lambdas(),
            sigma: default_sigmas(),
            kernels: Vec::new(),
            inputs: Vec::new(),
            common_threshold: DEFAULT_COMMON_THRESHOLD,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
        }
    }
}

/// Roster entry; unset grid axes fall back to the plan-level grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub variant: Variant,
    #[serde(default)]
    pub name: Option<String>,
    /// Feature subset (the intercept is always kept).
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub kernels: Option<Vec<KernelFamily>>,
    #[serde(default)]
    pub inputs: Option<Vec<InputSelector>>,
}

impl ModelTemplate {
    pub fn new(variant: Variant) -> Self {
        ModelTemplate {
            variant,
            name: None,
            features: None,
            lambda: None,
            sigma: None,
            kernels: None,
            inputs: None,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.variant.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub outer_folds: usize,
    pub inner_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            outer_folds: 5,
            inner_fraction: 0.75,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset: DatasetSource,
    pub models: Vec<ModelTemplate>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentPlan {
    pub fn new(dataset: DatasetSource, models: Vec<ModelTemplate>) -> Self {
        ExperimentPlan {
            dataset,
            models,
            grids: Grids::default(),
            split: SplitConfig::default(),
            seed: 0,
            output: None,
            parallelism: 1,
            solver: SolverConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("plan: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("plan: {e}")))
    }

    /// Reads a TOML plan; a relative dataset path is taken relative to the plan file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::from_toml(&text)?;
        if let DatasetSource::File { path: data, .. } = &mut plan.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("model roster is empty".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.split.outer_folds < 2 {
            return Err(Error::Config("need at least 2 outer folds".into()));
        }
        if !(self.split.inner_fraction > 0.0 && self.split.inner_fraction < 1.0) {
            return Err(Error::Config("inner fraction must lie strictly between 0 and 1".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.label()) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.label())));
            }
            if m.variant.uses_kernel() && grid_points(self, m)?.is_empty() {
                return Err(Error::Config(format!("model `{}` has an empty grid", m.label())));
            }
        }
        Ok(())
    }
}

/// One hyperparameter assignment. LR has the single empty assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: Option<f64>,
    pub kernel: Option<KernelSpec>,
}

impl GridPoint {
    pub fn sigma(&self) -> Option<f64> {
        self.kernel.as_ref().and_then(|k| k.kind.sigma())
    }
}

fn kernel_kind(family: KernelFamily, sigma: f64, grids: &Grids) -> KernelKind {
    match family {
        KernelFamily::Linear => KernelKind::Linear,
        KernelFamily::Rbf => KernelKind::Rbf { sigma },
        KernelFamily::Jaccard => KernelKind::Jaccard,
        KernelFamily::Jcr => KernelKind::Jcr {
            common_threshold: grids.common_threshold,
            rare_threshold: grids.rare_threshold,
        },
    }
}

/// Kernel candidates for a model in grid order: kernel kind, then input, then σ.
/// Kind/input pairs that cannot be combined are skipped.
pub fn kernel_candidates(plan: &ExperimentPlan, model: &ModelTemplate) -> Result<Vec<KernelSpec>> {
    if !model.variant.uses_kernel() {
        return Ok(Vec::new());
    }
    let kinds = model.kernels.as_ref().unwrap_or(&plan.grids.kernels);
    let inputs = model.inputs.as_ref().unwrap_or(&plan.grids.inputs);
    let sigmas = model.sigma.as_ref().unwrap_or(&plan.grids.sigma);
    let mut out = Vec::new();
    for &family in kinds {
        for input in inputs {
            let sig: &[f64] = if family == KernelFamily::Rbf { sigmas } else { &[1.0] };
            for &s in sig {
                let spec = KernelSpec::new(kernel_kind(family, s, &plan.grids), input.clone());
                match spec.validate() {
                    Ok(()) => out.push(spec),
                    Err(_) if matches!(
                        (family, input),
                        (KernelFamily::Linear | KernelFamily::Rbf, InputSelector::Codes(_))
                            | (KernelFamily::Jaccard | KernelFamily::Jcr, InputSelector::Columns(_) | InputSelector::OneHot(_))
                    ) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

/// Cartesian product of the applicable grid axes, kernel-major with λ innermost.
pub fn grid_points(plan: &ExperimentPlan, model: &ModelTemplate) -> Result<Vec<GridPoint>> {
    if !model.variant.uses_kernel() {
        return Ok(vec![GridPoint {
            lambda: None,
            kernel: None,
        }]);
    }
    let lambdas = model.lambda.as_ref().unwrap_or(&plan.grids.lambda);
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Config("lambda grid values must be nonnegative".into()));
    }
    let mut out = Vec::new();
    for spec in kernel_candidates(plan, model)? {
        for &l in lambdas {
            out.push(GridPoint {
                lambda: Some(l),
                kernel: Some(spec.clone()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> ExperimentPlan {
        ExperimentPlan::new(
            DatasetSource::Scenario {
                scenario: 1,
                n: 100,
                seed: 1,
            },
            vec![ModelTemplate::new(Variant::Lr)],
        )
    }

    #[test]
    fn default_lambda_grid() {
        let l = default_lambdas();
        assert_eq!(l.len(), 5);
        assert_eq!(l[0], 0.001);
        assert!((l[1] - 0.00562).abs() < 1e-5);
        assert!((l[2] - 0.0316).abs() < 1e-4);
        assert!((l[3] - 0.178).abs() < 1e-3);
        assert!((l[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lr_has_single_empty_point() {
        let p = plan();
        let g = grid_points(&p, &p.models[0]).unwrap();
        assert_eq!(g, vec![GridPoint { lambda: None, kernel: None }]);
    }

    #[test]
    fn grid_cardinalities() {
        let mut p = plan();
        p.grids.kernels = vec![KernelFamily::Rbf];
        p.grids.inputs = vec![InputSelector::OneHot(vec!["a1".into()])];
        let klr = ModelTemplate::new(Variant::Klr);
        assert_eq!(grid_points(&p, &klr).unwrap().len(), 15);

        p.grids.kernels = vec![KernelFamily::Jaccard, KernelFamily::Jcr];
        p.grids.inputs = vec![
            InputSelector::Codes(vec!["a".into()]),
            InputSelector::Codes(vec!["b".into()]),
            InputSelector::Codes(vec!["a".into(), "b".into()]),
        ];
        p.grids.lambda = vec![0.1, 0.01, 0.001];
        assert_eq!(grid_points(&p, &ModelTemplate::new(Variant::HfsmSim)).unwrap().len(), 18);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            seed = 3
            parallelism = 2
            [dataset]
            source = "scenario"
            scenario = 2
            n = 200
            seed = 9
            [grids]
            kernels = ["rbf"]
            inputs = [{ onehot = ["a1", "a2"] }]
            [[models]]
            variant = "lr"
            [[models]]
            variant = "hfsm-sim"
            lambda = [0.1]
        "#;
        let p = ExperimentPlan::from_toml(text).unwrap();
        p.validate().unwrap();
        assert_eq!(p.grids.sigma, default_sigmas());
        assert_eq!(p.split.outer_folds, 5);
        assert_eq!(grid_points(&p, &p.models[1]).unwrap().len(), 3);
        let back = ExperimentPlan::from_toml(&p.to_toml().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn bad_plans_rejected() {
        let mut p = plan();
        p.models.clear();
        assert!(p.validate().is_err());
        let mut p = plan();
        p.models.push(ModelTemplate::new(Variant::Klr));
        assert!(p.validate().is_err());
        assert!(ExperimentPlan::from_toml("models = 3").is_err());
    }
}
