//! Self-contained fitted-model documents that can score new tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Diagnostics, FitResult, Variant};
use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::kernels::{FittedKernel, KernelInput};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub id: String,
    pub value: f64,
}

/// A training observation with a nonzero kernel coefficient, stored with its
/// kernel input so predictions need no training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub id: String,
    pub alpha: f64,
    pub input: KernelInput<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub variant: Variant,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<FittedKernel>,
    pub beta: Vec<Coefficient>,
    pub representatives: Vec<Representative>,
    pub n_train: usize,
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

fn input_to_f64<T: Scalar>(x: KernelInput<T>) -> KernelInput<f64> {
    match x {
        KernelInput::Vector(v) => KernelInput::Vector(v.into_iter().map(|e| e.as_f64()).collect()),
        KernelInput::Set(s) => KernelInput::Set(s),
    }
}

fn input_from_f64<T: Scalar>(x: &KernelInput<f64>) -> KernelInput<T> {
    match x {
        KernelInput::Vector(v) => KernelInput::Vector(v.iter().map(|&e| T::lit(e)).collect()),
        KernelInput::Set(s) => KernelInput::Set(s.clone()),
    }
}

impl ModelDocument {
    /// Packages a fit. `kernel` is the fitted kernel the training block was built from.
    pub fn from_fit<T: Scalar>(
        fit: &FitResult<T>,
        kernel: Option<&FittedKernel>,
        train: &ObservationTable<T>,
    ) -> Result<Self> {
        if train.ids() != fit.train_ids.as_slice() {
            return Err(Error::Dimension("training table does not match the fit".into()));
        }
        let representatives = if fit.n_representatives() > 0 {
            let k = kernel.ok_or_else(|| Error::Config("a kernel model needs its fitted kernel".into()))?;
            let inputs = k.inputs(train)?;
            fit.alpha
                .iter()
                .zip(inputs)
                .zip(&fit.train_ids)
                .filter(|((a, _), _)| **a != T::zero())
                .map(|((a, x), id)| Representative {
                    id: id.clone(),
                    alpha: a.as_f64(),
                    input: input_to_f64(x),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(ModelDocument {
            variant: fit.variant,
            lambda: fit.lambda,
            kernel: if fit.variant.uses_kernel() { kernel.cloned() } else { None },
            beta: fit
                .feature_names
                .iter()
                .zip(&fit.beta)
                .map(|(name, b)| Coefficient {
                    name: name.clone(),
                    value: b.as_f64(),
                })
                .collect(),
            representatives,
            n_train: fit.train_ids.len(),
            objective: fit.objective.as_f64(),
            diagnostics: fit.diagnostics.clone(),
        })
    }

    pub fn alpha_entries(&self) -> Vec<AlphaEntry> {
        self.representatives
            .iter()
            .map(|r| AlphaEntry {
                id: r.id.clone(),
                value: r.alpha,
            })
            .collect()
    }

    pub fn linear_predictor<T: Scalar>(&self, table: &ObservationTable<T>) -> Result<Vec<T>> {
        let mut used = Vec::new();
        for c in &self.beta {
            match table.feature_index(&c.name) {
                Ok(j) => used.push((j, T::lit(c.value))),
                Err(_) if c.value == 0.0 => {}
                Err(_) => {
                    return Err(Error::Schema(format!(
                        "model feature `{}` is missing from the table",
                        c.name
                    )))
                }
            }
        }
        let phi = table.features();
        let mut eta: Vec<T> = (0..table.len())
            .map(|i| {
                let row = phi.row(i);
                let mut acc = T::zero();
                for &(j, b) in &used {
                    acc += row[j] * b;
                }
                acc
            })
            .collect();
        if !self.representatives.is_empty() {
            let kernel = self
                .kernel
                .as_ref()
                .ok_or_else(|| Error::Config("model has kernel coefficients but no kernel".into()))?;
            let reps: Vec<(T, KernelInput<T>)> = self
                .representatives
                .iter()
                .map(|r| (T::lit(r.alpha), input_from_f64(&r.input)))
                .collect();
            let inputs = kernel.inputs(table)?;
            for (e, x) in eta.iter_mut().zip(&inputs) {
                let mut acc = T::zero();
                for (a, rep) in &reps {
                    acc += kernel.eval(x, rep)? * *a;
                }
                *e += acc;
            }
        }
        Ok(eta)
    }

    pub fn predict<T: Scalar>(&self, table: &ObservationTable<T>) -> Result<Vec<T>> {
        Ok(self.linear_predictor(table)?.into_iter().map(sigmoid).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
