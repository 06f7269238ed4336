use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hfsm::kernels::{InputSelector, KernelKind, KernelSpec, DEFAULT_COMMON_THRESHOLD, DEFAULT_RARE_THRESHOLD};
use hfsm::solver::{SolverConfig, Variant};
use hfsm::synth::CausalKind;
use hfsm::{Error, Result};

/// Hybrid feature- and similarity-based logistic models.
#[derive(Debug, Parser)]
#[command(name = "hfsm", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen(GenArgs),
    /// Build a kernel matrix and report its diagonal dominance.
    Kernel(KernelCmdArgs),
    /// Fit one model and save it as a JSON document.
    Fit(FitArgs),
    /// Run a nested cross-validation plan (TOML).
    Cv(CvArgs),
    /// Score a data file with a saved model.
    Predict(PredictArgs),
    /// Coefficient, kernel-strata and SMR reports for saved models.
    Interpret(InterpretArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CausalArg {
    Independent,
    Confounder,
    Collider,
    Mediator,
}

impl From<CausalArg> for CausalKind {
    fn from(c: CausalArg) -> Self {
        match c {
            CausalArg::Independent => CausalKind::Independent,
            CausalArg::Confounder => CausalKind::Confounder,
            CausalArg::Collider => CausalKind::Collider,
            CausalArg::Mediator => CausalKind::Mediator,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Named simulation scenario (1, 2 or 3).
    #[arg(long, conflicts_with_all = ["causal", "primal_dual", "beta0"])]
    pub scenario: Option<u8>,
    /// Simulation with explicit intercept (requires --delta).
    #[arg(long, requires = "delta", allow_negative_numbers = true)]
    pub beta0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Causal illustration kind.
    #[arg(long, value_enum, conflicts_with = "primal_dual")]
    pub causal: Option<CausalArg>,
    /// Two-feature linear design.
    #[arg(long)]
    pub primal_dual: bool,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output table path; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Linear,
    Rbf,
    Jaccard,
    Jcr,
}

/// Kernel selection: a JSON spec or the individual flags.
#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Kernel spec as JSON, e.g. {"kind":"rbf","sigma":1,"input":{"onehot":["a1"]}}.
    #[arg(long, conflicts_with = "kind")]
    pub kernel_json: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Real-valued columns used as kernel input.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["onehot", "codes"])]
    pub columns: Vec<String>,
    /// Categorical kernel-input columns, one-hot encoded.
    #[arg(long, value_delimiter = ',', conflicts_with = "codes")]
    pub onehot: Vec<String>,
    /// Code-set domains.
    #[arg(long, value_delimiter = ',')]
    pub codes: Vec<String>,
    #[arg(long)]
    pub common_threshold: Option<f64>,
    #[arg(long)]
    pub rare_threshold: Option<f64>,
}

impl KernelArgs {
    pub fn spec(&self) -> Result<Option<KernelSpec>> {
        if let Some(json) = &self.kernel_json {
            let spec: KernelSpec =
                serde_json::from_str(json).map_err(|e| Error::Config(format!("--kernel-json: {e}")))?;
            spec.validate()?;
            return Ok(Some(spec));
        }
        let Some(kind) = self.kind else {
            if !(self.columns.is_empty() && self.onehot.is_empty() && self.codes.is_empty()) {
                return Err(Error::Config("kernel inputs given without --kind".into()));
            }
            return Ok(None);
        };
        let kind = match kind {
            KindArg::Linear => KernelKind::Linear,
            KindArg::Rbf => KernelKind::Rbf {
                sigma: self
                    .sigma
                    .ok_or_else(|| Error::Config("--kind rbf requires --sigma".into()))?,
            },
            KindArg::Jaccard => KernelKind::Jaccard,
            KindArg::Jcr => KernelKind::Jcr {
                common_threshold: self.common_threshold.unwrap_or(DEFAULT_COMMON_THRESHOLD),
                rare_threshold: self.rare_threshold.unwrap_or(DEFAULT_RARE_THRESHOLD),
            },
        };
        let input = if !self.columns.is_empty() {
            InputSelector::Columns(self.columns.clone())
        } else if !self.onehot.is_empty() {
            InputSelector::OneHot(self.onehot.clone())
        } else if !self.codes.is_empty() {
            InputSelector::Codes(self.codes.clone())
        } else {
            return Err(Error::Config("kernel needs --columns, --onehot or --codes".into()));
        };
        let spec = KernelSpec::new(kind, input);
        spec.validate()?;
        Ok(Some(spec))
    }
}

#[derive(Debug, Args)]
pub struct KernelCmdArgs {
    /// Training table; kernel columns and learned encodings come from it.
    #[arg(long)]
    pub data: PathBuf,
    /// Row table (defaults to the training table).
    #[arg(long)]
    pub rows: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Output stem: writes <stem>.bin, <stem>.json, <stem>.dominance.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Lr,
    Klr,
    HfsmSeq,
    HfsmSim,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Lr => Variant::Lr,
            VariantArg::Klr => Variant::Klr,
            VariantArg::HfsmSeq => Variant::HfsmSeq,
            VariantArg::HfsmSim => Variant::HfsmSim,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    /// Plain proximal gradient without momentum.
    #[arg(long)]
    pub no_accelerate: bool,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(v) = self.max_iter {
            c.max_iterations = v;
        }
        if let Some(v) = self.rel_tol {
            c.rel_tolerance = v;
        }
        if let Some(v) = self.kkt_tol {
            c.kkt_tolerance = v;
        }
        c.accelerate = !self.no_accelerate;
        c
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Feature subset (the intercept is always kept).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Feature coefficients held fixed, intercept first.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub fixed_beta: Vec<f64>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Model document path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Experiment plan (TOML).
    pub plan: PathBuf,
    /// Output directory (overrides the plan).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker count (overrides the plan).
    #[arg(long, env = "HFSM_PARALLELISM")]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output table of `id,probability` rows.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    /// One model, or two for a side-by-side coefficient comparison.
    #[arg(long, num_args = 1..=2, required = true)]
    pub model: Vec<PathBuf>,
    /// Training table of the (first) model.
    #[arg(long)]
    pub data: PathBuf,
    /// Grouping column for SMRs of the nonzero kernel strata.
    #[arg(long)]
    pub smr_group: Option<String>,
    /// Code domain for per-stratum code frequency tables.
    #[arg(long)]
    pub code_domain: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}
