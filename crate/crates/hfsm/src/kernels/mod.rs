//! Similarity kernels and realized kernel matrices.

mod cache;
mod sets;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use cache::{data_hash, KernelCache};
pub use sets::{
    gower_similarity, jaccard, jcr, CodeWeights, Coding, PrevalenceWeights,
    DEFAULT_COMMON_THRESHOLD, DEFAULT_RARE_THRESHOLD,
};

use crate::data::{CodeSet, ObservationTable, OneHotEncoder};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

/// Kernel family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf {
        sigma: f64,
    },
    Jaccard,
    Jcr {
        #[serde(default = "default_common")]
        common_threshold: f64,
        #[serde(default = "default_rare")]
        rare_threshold: f64,
    },
}

fn default_common() -> f64 {
    DEFAULT_COMMON_THRESHOLD
}

fn default_rare() -> f64 {
    DEFAULT_RARE_THRESHOLD
}

impl KernelKind {
    pub fn jcr_default() -> Self {
        KernelKind::Jcr {
            common_threshold: DEFAULT_COMMON_THRESHOLD,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
        }
    }

    pub fn label(&self) -> String {
        match self {
            KernelKind::Linear => "linear".into(),
            KernelKind::Rbf { sigma } => format!("rbf(sigma={sigma})"),
            KernelKind::Jaccard => "jaccard".into(),
            KernelKind::Jcr {
                common_threshold,
                rare_threshold,
            } => format!("jcr(common>={common_threshold},rare<{rare_threshold})"),
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            KernelKind::Rbf { sigma } => Some(*sigma),
            _ => None,
        }
    }
}

/// Which table columns feed a kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSelector {
    /// Real-valued feature or kernel-input columns used as-is.
    Columns(Vec<String>),
    /// Categorical kernel-input columns, one-hot encoded with training vocabularies.
    OneHot(Vec<String>),
    /// Code-set domains; several domains are merged into one set of
    /// domain-qualified codes.
    Codes(Vec<String>),
}

impl InputSelector {
    pub fn label(&self) -> String {
        match self {
            InputSelector::Columns(c) => format!("columns:{}", c.join("+")),
            InputSelector::OneHot(c) => format!("onehot:{}", c.join("+")),
            InputSelector::Codes(c) => format!("codes:{}", c.join("+")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    pub input: InputSelector,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, input: InputSelector) -> Self {
        KernelSpec { kind, input }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.kind, &self.input) {
            (KernelKind::Rbf { sigma }, _) if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("rbf sigma must be positive, got {sigma}")))
            }
            (
                KernelKind::Jcr {
                    common_threshold,
                    rare_threshold,
                },
                _,
            ) if !(*common_threshold > 0.0
                && *common_threshold <= 1.0
                && *rare_threshold >= 0.0
                && *rare_threshold < 1.0
                && rare_threshold <= common_threshold) =>
            {
                Err(Error::Config(format!(
                    "jcr thresholds need 0 <= rare ({rare_threshold}) <= common ({common_threshold}) <= 1"
                )))
            }
            (KernelKind::Linear | KernelKind::Rbf { .. }, InputSelector::Codes(_)) => Err(
                Error::Config("linear/rbf kernels take real or one-hot columns, not code sets".into()),
            ),
            (KernelKind::Jaccard | KernelKind::Jcr { .. }, InputSelector::Columns(_) | InputSelector::OneHot(_)) => {
                Err(Error::Config("set kernels take code-set domains".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        format!("{} on {}", self.kind.label(), self.input.label())
    }
}

/// One observation's kernel input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelInput<T> {
    Vector(Vec<T>),
    Set(CodeSet),
}

impl<T: Scalar> KernelInput<T> {
    fn group_key(&self) -> GroupKey {
        match self {
            KernelInput::Vector(v) => GroupKey::Bits(v.iter().map(|x| x.as_f64().to_bits()).collect()),
            KernelInput::Set(s) => GroupKey::Codes(s.iter().cloned().collect()),
        }
    }
}

#[derive(Hash, PartialEq, Eq)]
enum GroupKey {
    Bits(Vec<u64>),
    Codes(Vec<String>),
}

/// `exp(-‖a-b‖² / 2σ²)`
pub fn rbf_kernel<T: Scalar>(a: &[T], b: &[T], sigma: T) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "rbf inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(rbf_unchecked(a, b, sigma))
}

#[inline]
fn rbf_unchecked<T: Scalar>(a: &[T], b: &[T], sigma: T) -> T {
    let mut d2 = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    (-d2 / (T::lit(2.0) * sigma * sigma)).exp()
}

pub fn linear_kernel<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "linear kernel inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot(a, b))
}

/// Code prevalences over a training table for a `jcr` spec.
pub fn prevalence_weights<T: Scalar>(train: &ObservationTable<T>, spec: &KernelSpec) -> Result<PrevalenceWeights> {
    let KernelKind::Jcr {
        common_threshold,
        rare_threshold,
    } = spec.kind
    else {
        return Err(Error::Config("prevalence weights apply to jcr kernels only".into()));
    };
    spec.validate()?;
    let sets = code_inputs(train, &spec.input)?;
    PrevalenceWeights::from_sets(&sets, common_threshold, rare_threshold)
}

fn code_inputs<T: Scalar>(table: &ObservationTable<T>, input: &InputSelector) -> Result<Vec<CodeSet>> {
    let InputSelector::Codes(domains) = input else {
        return Err(Error::Config("set kernels take code-set domains".into()));
    };
    let idx = domains
        .iter()
        .map(|d| table.domain_index(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..table.len())
        .map(|i| {
            if let [only] = idx.as_slice() {
                table.code_sets(*only)[i].clone()
            } else {
                idx.iter()
                    .zip(domains)
                    .flat_map(|(&d, name)| table.code_sets(d)[i].iter().map(move |c| format!("{name}/{c}")))
                    .collect()
            }
        })
        .collect())
}

/// A kernel spec together with everything learned from the training slice:
/// one-hot vocabularies and code prevalences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedKernel {
    pub spec: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<OneHotEncoder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PrevalenceWeights>,
}

impl FittedKernel {
    /// Learns encoders and prevalence weights from `train` only.
    pub fn fit<T: Scalar>(spec: &KernelSpec, train: &ObservationTable<T>) -> Result<Self> {
        spec.validate()?;
        let encoder = match &spec.input {
            InputSelector::OneHot(cols) => {
                let values = input_block(train, cols)?;
                Some(OneHotEncoder::fit(cols, &values)?)
            }
            _ => None,
        };
        let weights = match spec.kind {
            KernelKind::Jcr { .. } => Some(prevalence_weights(train, spec)?),
            _ => None,
        };
        Ok(FittedKernel {
            spec: spec.clone(),
            encoder,
            weights,
        })
    }

    pub fn with_weights(spec: &KernelSpec, weights: Option<PrevalenceWeights>) -> Result<Self> {
        spec.validate()?;
        match (&spec.kind, &weights) {
            (KernelKind::Jcr { .. }, None) => {
                return Err(Error::Config("jcr kernel requires prevalence weights".into()))
            }
            (KernelKind::Jcr { .. }, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::Config("prevalence weights given for a non-jcr kernel".into()))
            }
        }
        Ok(FittedKernel {
            spec: spec.clone(),
            encoder: None,
            weights,
        })
    }

    /// Kernel inputs of every row of `table`.
    pub fn inputs<T: Scalar>(&self, table: &ObservationTable<T>) -> Result<Vec<KernelInput<T>>> {
        match &self.spec.input {
            InputSelector::Columns(cols) => {
                let m = column_block(table, cols)?;
                Ok((0..m.nrows()).map(|i| KernelInput::Vector(m.row(i).to_vec())).collect())
            }
            InputSelector::OneHot(cols) => {
                let values = input_block(table, cols)?;
                let enc = self
                    .encoder
                    .as_ref()
                    .ok_or_else(|| Error::Config("one-hot kernel has no fitted encoder".into()))?;
                let m = enc.transform(&values)?;
                Ok((0..m.nrows()).map(|i| KernelInput::Vector(m.row(i).to_vec())).collect())
            }
            InputSelector::Codes(_) => Ok(code_inputs(table, &self.spec.input)?
                .into_iter()
                .map(KernelInput::Set)
                .collect()),
        }
    }

    /// Kernel value between two inputs.
    pub fn eval<T: Scalar>(&self, a: &KernelInput<T>, b: &KernelInput<T>) -> Result<T> {
        match (&self.spec.kind, a, b) {
            (KernelKind::Linear, KernelInput::Vector(x), KernelInput::Vector(y)) => linear_kernel(x, y),
            (KernelKind::Rbf { sigma }, KernelInput::Vector(x), KernelInput::Vector(y)) => {
                rbf_kernel(x, y, T::lit(*sigma))
            }
            (KernelKind::Jaccard, KernelInput::Set(x), KernelInput::Set(y)) => Ok(jaccard(x, y)),
            (KernelKind::Jcr { .. }, KernelInput::Set(x), KernelInput::Set(y)) => {
                let w = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::Config("jcr kernel requires prevalence weights".into()))?;
                Ok(jcr(x, y, w))
            }
            _ => Err(Error::Config(format!(
                "kernel {} cannot compare these inputs",
                self.spec.kind.label()
            ))),
        }
    }

    fn block<T: Scalar>(&self, rows: &[KernelInput<T>], cols: &[KernelInput<T>]) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        let symmetric = std::ptr::eq(rows, cols);
        for i in 0..rows.len() {
            let start = if symmetric { i } else { 0 };
            for j in start..cols.len() {
                let v = self.eval(&rows[i], &cols[j])?;
                out.set(i, j, v);
                if symmetric {
                    out.set(j, i, v);
                }
            }
        }
        Ok(out)
    }

    /// Dense `rows × cols` kernel matrix.
    pub fn matrix<T: Scalar>(
        &self,
        rows: &ObservationTable<T>,
        cols: &ObservationTable<T>,
    ) -> Result<KernelMatrix<T>> {
        let col_inputs = self.inputs(cols)?;
        let values = if std::ptr::eq(rows, cols) {
            self.block(&col_inputs, &col_inputs)?
        } else {
            let row_inputs = self.inputs(rows)?;
            self.block(&row_inputs, &col_inputs)?
        };
        Ok(KernelMatrix {
            values,
            row_ids: rows.ids().to_vec(),
            col_ids: cols.ids().to_vec(),
            spec: self.spec.clone(),
        })
    }

    /// Kernel matrix stored as a core over distinct inputs; rows (columns)
    /// with identical kernel inputs share one core row (column).
    pub fn grouped<T: Scalar>(
        &self,
        rows: &ObservationTable<T>,
        cols: &ObservationTable<T>,
    ) -> Result<GroupedKernel<T>> {
        let col_inputs = self.inputs(cols)?;
        let (col_group, col_reps) = group_inputs(&col_inputs);
        let col_unique: Vec<_> = col_reps.iter().map(|&i| col_inputs[i].clone()).collect();
        let (row_group, core) = if std::ptr::eq(rows, cols) {
            (col_group.clone(), self.block(&col_unique, &col_unique)?)
        } else {
            let row_inputs = self.inputs(rows)?;
            let (row_group, row_reps) = group_inputs(&row_inputs);
            let row_unique: Vec<_> = row_reps.iter().map(|&i| row_inputs[i].clone()).collect();
            (row_group, self.block(&row_unique, &col_unique)?)
        };
        Ok(GroupedKernel {
            row_group,
            col_group,
            core,
            row_ids: rows.ids().to_vec(),
            col_ids: cols.ids().to_vec(),
        })
    }
    /// Cheapest operator for the block: factored for linear kernels, grouped otherwise.
    pub fn operator<T: Scalar>(
        &self,
        rows: &ObservationTable<T>,
        cols: &ObservationTable<T>,
    ) -> Result<Box<dyn KernelOperator<T>>> {
        if self.spec.kind == KernelKind::Linear {
            let vectors = |t: &ObservationTable<T>| -> Result<Matrix<T>> {
                let inputs = self.inputs(t)?;
                let width = match inputs.first() {
                    Some(KernelInput::Vector(v)) => v.len(),
                    _ => 0,
                };
                let mut data = Vec::with_capacity(inputs.len() * width);
                for x in &inputs {
                    match x {
                        KernelInput::Vector(v) => data.extend_from_slice(v),
                        KernelInput::Set(_) => {
                            return Err(Error::Config("linear kernel needs vector inputs".into()))
                        }
                    }
                }
                Matrix::from_vec(inputs.len(), width, data)
            };
            return Ok(Box::new(FactoredKernel {
                left: vectors(rows)?,
                right: vectors(cols)?,
                row_ids: rows.ids().to_vec(),
                col_ids: cols.ids().to_vec(),
            }));
        }
        Ok(Box::new(self.grouped(rows, cols)?))
    }
}

/// Linear kernel kept as `K = X Zᵀ`, so products cost `O(n·d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredKernel<T> {
    left: Matrix<T>,
    right: Matrix<T>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl<T: Scalar> KernelOperator<T> for FactoredKernel<T> {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }
    fn ncols(&self) -> usize {
        self.right.nrows()
    }
    fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let z = self.right.tr_mul_vec(x);
        self.left.mul_vec_into(&z, out)
    }
    fn tr_mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let z = self.left.tr_mul_vec(x);
        self.right.mul_vec_into(&z, out)
    }
    fn row_ids(&self) -> &[String] {
        &self.row_ids
    }
    fn col_ids(&self) -> &[String] {
        &self.col_ids
    }
}

fn column_block<T: Scalar>(table: &ObservationTable<T>, cols: &[String]) -> Result<Matrix<T>> {
    let columns = cols.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_fn(table.len(), cols.len(), |i, j| columns[j][i]))
}

fn input_block<T: Scalar>(table: &ObservationTable<T>, cols: &[String]) -> Result<Matrix<T>> {
    let idx = cols
        .iter()
        .map(|c| table.input_index(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_fn(table.len(), idx.len(), |i, j| table.inputs().get(i, idx[j])))
}

/// Group label per input (first-occurrence order) and the representative index of each group.
fn group_inputs<T: Scalar>(inputs: &[KernelInput<T>]) -> (Vec<u32>, Vec<usize>) {
    let mut seen: HashMap<GroupKey, u32> = HashMap::new();
    let mut reps = Vec::new();
    let groups = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            *seen.entry(x.group_key()).or_insert_with(|| {
                reps.push(i);
                (reps.len() - 1) as u32
            })
        })
        .collect();
    (groups, reps)
}

/// Builds `rows × cols` similarities. Prevalence weights must be supplied
/// exactly when the kernel is `jcr`, computed from the `cols` (training) slice.
/// One-hot vocabularies are learned from `cols`.
pub fn build_kernel<T: Scalar>(
    rows: &ObservationTable<T>,
    cols: &ObservationTable<T>,
    spec: &KernelSpec,
    weights: Option<&PrevalenceWeights>,
) -> Result<KernelMatrix<T>> {
    let mut fitted = FittedKernel::with_weights(spec, weights.cloned())?;
    if let InputSelector::OneHot(c) = &spec.input {
        fitted.encoder = Some(OneHotEncoder::fit(c, &input_block(cols, c)?)?);
    }
    fitted.matrix(rows, cols)
}

/// Linear map `x ↦ Kx` (and its transpose) over a kernel block whose
/// columns index training observations.
pub trait KernelOperator<T>: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn mul_vec_into(&self, x: &[T], out: &mut [T]);
    fn tr_mul_vec_into(&self, x: &[T], out: &mut [T]);
    fn row_ids(&self) -> &[String];
    fn col_ids(&self) -> &[String];
}

/// Realized dense kernel matrix with its row/column identities.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    pub values: Matrix<T>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub spec: KernelSpec,
}

impl<T: Scalar> KernelMatrix<T> {
    pub fn is_square(&self) -> bool {
        self.values.nrows() == self.values.ncols()
    }
}

impl<T: Scalar> KernelOperator<T> for KernelMatrix<T> {
    fn nrows(&self) -> usize {
        self.values.nrows()
    }
    fn ncols(&self) -> usize {
        self.values.ncols()
    }
    fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        self.values.mul_vec_into(x, out)
    }
    fn tr_mul_vec_into(&self, x: &[T], out: &mut [T]) {
        self.values.tr_mul_vec_into(x, out)
    }
    fn row_ids(&self) -> &[String] {
        &self.row_ids
    }
    fn col_ids(&self) -> &[String] {
        &self.col_ids
    }
}

/// `K = R C Sᵀ` where `R`, `S` are 0/1 group-membership matrices and `C` is
/// the kernel over distinct inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedKernel<T> {
    row_group: Vec<u32>,
    col_group: Vec<u32>,
    core: Matrix<T>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl<T: Scalar> GroupedKernel<T> {
    pub fn distinct_rows(&self) -> usize {
        self.core.nrows()
    }

    pub fn distinct_cols(&self) -> usize {
        self.core.ncols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.core.get(self.row_group[i] as usize, self.col_group[j] as usize)
    }

    pub fn to_dense(&self, spec: &KernelSpec) -> KernelMatrix<T> {
        KernelMatrix {
            values: Matrix::from_fn(self.row_group.len(), self.col_group.len(), |i, j| self.get(i, j)),
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
            spec: spec.clone(),
        }
    }
}

impl<T: Scalar> KernelOperator<T> for GroupedKernel<T> {
    fn nrows(&self) -> usize {
        self.row_group.len()
    }
    fn ncols(&self) -> usize {
        self.col_group.len()
    }
    fn mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let mut pooled = vec![T::zero(); self.core.ncols()];
        for (&g, &v) in self.col_group.iter().zip(x) {
            pooled[g as usize] += v;
        }
        let reduced = self.core.mul_vec(&pooled);
        for (o, &g) in out.iter_mut().zip(&self.row_group) {
            *o = reduced[g as usize];
        }
    }
    fn tr_mul_vec_into(&self, x: &[T], out: &mut [T]) {
        let mut pooled = vec![T::zero(); self.core.nrows()];
        for (&g, &v) in self.row_group.iter().zip(x) {
            pooled[g as usize] += v;
        }
        let reduced = self.core.tr_mul_vec(&pooled);
        for (o, &g) in out.iter_mut().zip(&self.col_group) {
            *o = reduced[g as usize];
        }
    }
    fn row_ids(&self) -> &[String] {
        &self.row_ids
    }
    fn col_ids(&self) -> &[String] {
        &self.col_ids
    }
}

/// `Σ_i |a_ii| / (Σ_j |a_ij| − |a_ii|)`; ranges over `[n/(n−1), ∞)` for unit-diagonal kernels.
pub fn diagonal_dominance<T: Scalar>(k: &Matrix<T>) -> Result<T> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension(format!(
            "diagonal dominance needs a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    // Neumaier summation
    let mut total = T::zero();
    let mut carry = T::zero();
    for i in 0..k.nrows() {
        let diag = k.get(i, i).abs();
        let off: T = k
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v.abs())
            .sum();
        if off == T::zero() {
            return Err(Error::ZeroOffDiagonal { row: i });
        }
        let term = diag / off;
        let next = total + term;
        carry += if total.abs() >= term.abs() {
            (total - next) + term
        } else {
            (term - next) + total
        };
        total = next;
    }
    Ok(total + carry)
}
