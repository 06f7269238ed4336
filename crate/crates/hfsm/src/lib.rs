//! Hybrid feature- and similarity-based logistic models.
//!
//! A prediction combines a linear term over explicit features with a sparse
//! weighted sum of similarities to training observations:
//! `P(y = 1) = σ(φᵀβ + Σ_j α_j k(x, x_j))`.

pub mod cv;
pub mod data;
pub mod error;
pub mod interpret;
pub mod kernels;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod synth;

pub use cv::{run_experiment, CvReport, ExperimentPlan};
pub use data::{load_table, make_splits, save_table, ObservationTable, SplitPlan, TableSchema};
pub use error::{Error, ErrorKind, Result};
pub use kernels::{FactoredKernel, FittedKernel, GroupedKernel, KernelKind, KernelMatrix, KernelOperator, KernelSpec, InputSelector};
pub use matrix::Matrix;
pub use metrics::MetricReport;
pub use scalar::Scalar;
pub use solver::{fit, ModelDocument, ModelSpec, SolverConfig, Variant};

pub type Table = ObservationTable<f64>;
pub type Table32 = ObservationTable<f32>;
pub type Kernel = KernelMatrix<f64>;
pub type Kernel32 = KernelMatrix<f32>;
pub type Fit = solver::FitResult<f64>;
pub type Fit32 = solver::FitResult<f32>;
