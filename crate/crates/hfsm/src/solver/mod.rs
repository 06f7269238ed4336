//! L1-penalized logistic likelihood over features and kernel similarities.
//!
//! The model predicts `σ(φᵀβ + kᵀα)` and is trained by maximizing
//! `mean(y·η − log(1 + e^η)) − λ‖α‖₁`. Only `α` is penalized; the intercept is
//! an ordinary (unpenalized) feature coefficient.

mod fit;
mod model;

use serde::{Deserialize, Serialize};

pub use fit::{fit, fit_warm, proximal_ascent, Blocks, Diagnostics, FitResult, SolverConfig};
pub use model::{AlphaEntry, Coefficient, ModelDocument, Representative};

use crate::error::{Error, Result};
use crate::kernels::{KernelOperator, KernelSpec};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, softplus, Scalar};

/// Which coefficients a model learns and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Features only.
    #[serde(rename = "lr")]
    Lr,
    /// Kernel only; no feature term.
    #[serde(rename = "klr")]
    Klr,
    /// Features learned with `α = 0`, then frozen while `α` is learned.
    #[serde(rename = "hfsm-seq")]
    HfsmSeq,
    /// Features and kernel coefficients learned jointly.
    #[serde(rename = "hfsm-sim")]
    HfsmSim,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lr, Variant::Klr, Variant::HfsmSeq, Variant::HfsmSim];

    pub fn uses_kernel(self) -> bool {
        !matches!(self, Variant::Lr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lr => "LR",
            Variant::Klr => "KLR",
            Variant::HfsmSeq => "HFSM-Seq",
            Variant::HfsmSim => "HFSM-Sim",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Variant::Lr),
            "klr" => Ok(Variant::Klr),
            "hfsm-seq" | "seq" => Ok(Variant::HfsmSeq),
            "hfsm-sim" | "sim" => Ok(Variant::HfsmSim),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Feature coefficients taken as given instead of learned.
    #[serde(default)]
    pub fixed_beta: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn new(variant: Variant, lambda: f64, kernel: Option<KernelSpec>) -> Self {
        ModelSpec {
            variant,
            lambda,
            kernel,
            fixed_beta: None,
        }
    }

    /// Checks everything except the presence of a kernel spec.
    pub(crate) fn validate_variant(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.variant == Variant::Lr && self.kernel.is_some() {
            return Err(Error::Config("LR takes no kernel".into()));
        }
        Ok(())
    }

    pub fn lr() -> Self {
        Self::new(Variant::Lr, 0.0, None)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_variant()?;
        match (self.variant, &self.kernel) {
            (Variant::Lr, Some(_)) => Err(Error::Config("LR takes no kernel".into())),
            (v, None) if v.uses_kernel() => Err(Error::Config(format!("{} requires a kernel", v.name()))),
            (_, Some(k)) => k.validate(),
            _ => Ok(()),
        }
    }
}

fn check_dims<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
) -> Result<()> {
    if beta.len() != features.ncols() {
        return Err(Error::Dimension(format!(
            "{} feature coefficients for {} feature columns",
            beta.len(),
            features.ncols()
        )));
    }
    match kernel {
        Some(k) => {
            if k.nrows() != features.nrows() || k.ncols() != alpha.len() {
                return Err(Error::Dimension(format!(
                    "kernel block {}x{} does not match {} rows and {} kernel coefficients",
                    k.nrows(),
                    k.ncols(),
                    features.nrows(),
                    alpha.len()
                )));
            }
        }
        None => {
            if alpha.iter().any(|a| *a != T::zero()) {
                return Err(Error::Dimension("nonzero kernel coefficients without a kernel block".into()));
            }
        }
    }
    Ok(())
}

/// `η = Φβ + Kα`
pub fn linear_predictor<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
) -> Result<Vec<T>> {
    check_dims(beta, alpha, features, kernel)?;
    let mut eta = features.mul_vec(beta);
    if let Some(k) = kernel {
        let mut ka = vec![T::zero(); k.nrows()];
        k.mul_vec_into(alpha, &mut ka);
        for (e, v) in eta.iter_mut().zip(ka) {
            *e += v;
        }
    }
    Ok(eta)
}

/// `σ(Φβ + Kα)` elementwise.
pub fn predict<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
) -> Result<Vec<T>> {
    Ok(linear_predictor(beta, alpha, features, kernel)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

pub(crate) fn mean_log_likelihood<T: Scalar>(eta: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for (&e, &yi) in eta.iter().zip(y) {
        acc += yi * e - softplus(e);
    }
    acc / T::from_usize_lossy(eta.len().max(1))
}

pub(crate) fn l1<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|v| v.abs()).sum()
}

/// Penalized mean log-likelihood `mean(yη − log(1+e^η)) − λ‖α‖₁`.
pub fn objective_eval<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    outcomes: &[T],
    lambda: T,
) -> Result<T> {
    let eta = linear_predictor(beta, alpha, features, kernel)?;
    check_outcomes(outcomes, eta.len())?;
    Ok(mean_log_likelihood(&eta, outcomes) - lambda * l1(alpha))
}

fn check_outcomes<T>(outcomes: &[T], n: usize) -> Result<()> {
    if outcomes.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} rows", outcomes.len())));
    }
    Ok(())
}

/// Gradient of the smooth part: `(Φᵀ(y−p)/n, Kᵀ(y−p)/n)`.
pub fn smooth_gradient<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    outcomes: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let eta = linear_predictor(beta, alpha, features, kernel)?;
    check_outcomes(outcomes, eta.len())?;
    let n = T::from_usize_lossy(eta.len().max(1));
    let r: Vec<T> = eta
        .iter()
        .zip(outcomes)
        .map(|(&e, &y)| (y - sigmoid(e)) / n)
        .collect();
    let gb = features.tr_mul_vec(&r);
    let ga = match kernel {
        Some(k) => {
            let mut g = vec![T::zero(); k.ncols()];
            k.tr_mul_vec_into(&r, &mut g);
            g
        }
        None => vec![T::zero(); alpha.len()],
    };
    Ok((gb, ga))
}

/// `sign(x)·max(|x|−t, 0)`
#[inline]
pub fn soft_threshold<T: Scalar>(x: T, t: T) -> T {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        T::zero()
    }
}

/// Largest violation of the first-order optimality conditions.
///
/// Learned `β` coordinates need a zero gradient. For `α`: nonzero entries need
/// `grad = λ·sign(α)`, zero entries need `|grad| ≤ λ`. Frozen blocks are skipped.
pub fn kkt_residual<T: Scalar>(
    beta: &[T],
    alpha: &[T],
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    outcomes: &[T],
    lambda: T,
    blocks: Blocks,
) -> Result<T> {
    let (gb, ga) = smooth_gradient(beta, alpha, features, kernel, outcomes)?;
    Ok(kkt_from_gradient(&gb, alpha, &ga, lambda, blocks))
}

pub(crate) fn kkt_from_gradient<T: Scalar>(gb: &[T], alpha: &[T], ga: &[T], lambda: T, blocks: Blocks) -> T {
    let mut worst = T::zero();
    if blocks.beta {
        for &g in gb {
            worst = worst.max(g.abs());
        }
    }
    if blocks.alpha {
        for (&a, &g) in alpha.iter().zip(ga) {
            let v = if a > T::zero() {
                (g - lambda).abs()
            } else if a < T::zero() {
                (g + lambda).abs()
            } else {
                (g.abs() - lambda).max(T::zero())
            };
            worst = worst.max(v);
        }
    }
    worst
}
