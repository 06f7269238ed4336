//! Observation tables, delimited-file ingestion, fold splitting and one-hot encoding.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

pub type CodeSet = BTreeSet<String>;

pub const INTERCEPT: &str = "intercept";

/// Separator between codes inside one cell.
pub const CODE_DELIMITER: char = ';';

/// Aligned per-observation features, kernel inputs, code sets and outcomes.
///
/// `features` always starts with an all-ones intercept column. `inputs` holds
/// real-valued columns that only feed kernels (e.g. categorical attributes);
/// `code_sets[d][i]` is the code set of observation `i` in domain `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable<T> {
    ids: Vec<String>,
    features: Matrix<T>,
    feature_names: Vec<String>,
    inputs: Matrix<T>,
    input_names: Vec<String>,
    code_domains: Vec<String>,
    code_sets: Vec<Vec<CodeSet>>,
    outcomes: Vec<u8>,
}

impl<T: Scalar> ObservationTable<T> {
    /// Builds a table, prepending the intercept column to `features`.
    pub fn new(
        ids: Vec<String>,
        feature_names: Vec<String>,
        features: Matrix<T>,
        input_names: Vec<String>,
        inputs: Matrix<T>,
        code_domains: Vec<String>,
        code_sets: Vec<Vec<CodeSet>>,
        outcomes: Vec<u8>,
    ) -> Result<Self> {
        let n = ids.len();
        if features.nrows() != n || features.ncols() != feature_names.len() {
            return Err(Error::Dimension(format!(
                "feature block is {}x{}, expected {n}x{}",
                features.nrows(),
                features.ncols(),
                feature_names.len()
            )));
        }
        let with_intercept = Matrix::from_fn(n, features.ncols() + 1, |i, j| {
            if j == 0 {
                T::one()
            } else {
                features.get(i, j - 1)
            }
        });
        let mut names = Vec::with_capacity(feature_names.len() + 1);
        names.push(INTERCEPT.to_string());
        names.extend(feature_names);
        Self::from_parts(
            ids,
            names,
            with_intercept,
            input_names,
            inputs,
            code_domains,
            code_sets,
            outcomes,
        )
    }

    /// Builds a table whose `features` already carries the intercept column.
    pub fn from_parts(
        ids: Vec<String>,
        feature_names: Vec<String>,
        features: Matrix<T>,
        input_names: Vec<String>,
        inputs: Matrix<T>,
        code_domains: Vec<String>,
        code_sets: Vec<Vec<CodeSet>>,
        outcomes: Vec<u8>,
    ) -> Result<Self> {
        let n = ids.len();
        let table = ObservationTable {
            ids,
            features,
            feature_names,
            inputs,
            input_names,
            code_domains,
            code_sets,
            outcomes,
        };
        table.validate(n)?;
        Ok(table)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.features.nrows() != n || self.features.ncols() != self.feature_names.len() {
            return Err(Error::Dimension("feature block does not match ids/names".into()));
        }
        if self.feature_names.first().map(String::as_str) != Some(INTERCEPT) {
            return Err(Error::Schema("first feature must be the intercept".into()));
        }
        if (0..n).any(|i| self.features.get(i, 0) != T::one()) {
            return Err(Error::Data("intercept column must be identically 1".into()));
        }
        if self.inputs.nrows() != n && !(self.inputs.ncols() == 0 && self.input_names.is_empty())
        {
            return Err(Error::Dimension("input block does not match ids".into()));
        }
        if self.inputs.ncols() != self.input_names.len() {
            return Err(Error::Dimension("input block does not match names".into()));
        }
        if self.code_sets.len() != self.code_domains.len()
            || self.code_sets.iter().any(|d| d.len() != n)
        {
            return Err(Error::Dimension("code sets do not match ids/domains".into()));
        }
        if self.outcomes.len() != n {
            return Err(Error::Dimension("outcomes do not match ids".into()));
        }
        if let Some(bad) = self.outcomes.iter().find(|&&y| y > 1) {
            return Err(Error::Data(format!("outcome value {bad} is not binary")));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate observation id `{id}`")));
            }
        }
        for names in [&self.feature_names, &self.input_names, &self.code_domains] {
            let mut seen = HashSet::with_capacity(names.len());
            if let Some(dup) = names.iter().find(|name| !seen.insert(name.as_str())) {
                return Err(Error::Schema(format!("duplicate column `{dup}`")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn code_domains(&self) -> &[String] {
        &self.code_domains
    }

    pub fn code_sets(&self, domain: usize) -> &[CodeSet] {
        &self.code_sets[domain]
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn outcomes_scalar(&self) -> Vec<T> {
        self.outcomes
            .iter()
            .map(|&y| if y == 1 { T::one() } else { T::zero() })
            .collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        position(&self.feature_names, name, "feature")
    }

    pub fn input_index(&self, name: &str) -> Result<usize> {
        position(&self.input_names, name, "kernel input")
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        position(&self.code_domains, name, "code domain")
    }

    /// Values of a named feature or kernel-input column.
    pub fn column(&self, name: &str) -> Result<Vec<T>> {
        if let Ok(j) = self.feature_index(name) {
            return Ok(self.features.column(j));
        }
        if let Ok(j) = self.input_index(name) {
            return Ok(self.inputs.column(j));
        }
        Err(Error::Schema(format!("no column named `{name}`")))
    }

    /// Row subset in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        ObservationTable {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_rows(idx),
            feature_names: self.feature_names.clone(),
            inputs: if self.inputs.nrows() == 0 {
                Matrix::zeros(idx.len(), 0)
            } else {
                self.inputs.select_rows(idx)
            },
            input_names: self.input_names.clone(),
            code_domains: self.code_domains.clone(),
            code_sets: self
                .code_sets
                .iter()
                .map(|d| idx.iter().map(|&i| d[i].clone()).collect())
                .collect(),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
        }
    }

    /// Keeps only the named feature columns, in the given order. The intercept
    /// must be listed explicitly if it is to be kept first. Dropped features
    /// (other than the intercept) stay available as kernel-input columns.
    pub fn select_features(&self, names: &[&str]) -> Result<Self> {
        if names.first() != Some(&INTERCEPT) {
            return Err(Error::Schema("feature selection must start with the intercept".into()));
        }
        let idx = names
            .iter()
            .map(|n| self.feature_index(n))
            .collect::<Result<Vec<_>>>()?;
        let dropped: Vec<usize> = (1..self.feature_names.len())
            .filter(|j| !idx.contains(j) && self.input_index(&self.feature_names[*j]).is_err())
            .collect();
        let mut out = self.clone();
        out.features = self.features.select_cols(&idx);
        out.feature_names = names.iter().map(|s| s.to_string()).collect();
        if !dropped.is_empty() {
            let old = self.inputs.ncols();
            let width = old + dropped.len();
            out.inputs = Matrix::from_fn(self.len(), width, |i, j| {
                if j < old {
                    self.inputs.get(i, j)
                } else {
                    self.features.get(i, dropped[j - old])
                }
            });
            out.input_names
                .extend(dropped.iter().map(|&j| self.feature_names[j].clone()));
        }
        Ok(out)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

fn position(names: &[String], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Schema(format!("unknown {what} `{name}`")))
}

/// Maps file columns onto table roles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    #[serde(default)]
    pub id: Option<String>,
    pub outcome: String,
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub codes: Vec<String>,
}

const FEATURE_PREFIX: &str = "f:";
const INPUT_PREFIX: &str = "k:";
const CODE_PREFIX: &str = "c:";

impl TableSchema {
    /// Recognizes the column naming used by [`write_table`]: `id`, `y`,
    /// `f:<feature>`, `k:<kernel input>`, `c:<code domain>`.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let schema = Self::infer_unlabeled(headers)?;
        if schema.outcome.is_empty() {
            return Err(Error::Schema("no outcome column `y`".into()));
        }
        Ok(schema)
    }

    /// As [`TableSchema::infer`] but tolerates a missing outcome column
    /// (left as an empty name).
    pub fn infer_unlabeled(headers: &[String]) -> Result<Self> {
        let mut schema = TableSchema::default();
        for h in headers {
            if h == "id" {
                schema.id = Some(h.clone());
            } else if h == "y" {
                schema.outcome = h.clone();
            } else if h.starts_with(FEATURE_PREFIX) {
                schema.features.push(h.clone());
            } else if h.starts_with(INPUT_PREFIX) {
                schema.inputs.push(h.clone());
            } else if h.starts_with(CODE_PREFIX) {
                schema.codes.push(h.clone());
            } else {
                return Err(Error::Schema(format!("cannot infer the role of column `{h}`")));
            }
        }
        Ok(schema)
    }
}

fn strip_role_prefix(h: &str) -> String {
    for p in [FEATURE_PREFIX, INPUT_PREFIX, CODE_PREFIX] {
        if let Some(rest) = h.strip_prefix(p) {
            return rest.to_string();
        }
    }
    h.to_string()
}

pub fn parse_code_cell(cell: &str) -> CodeSet {
    cell.split(CODE_DELIMITER)
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect()
}

/// Reads a delimited table. `schema = None` infers roles from column prefixes.
pub fn load_table<T: Scalar>(path: &Path, schema: Option<&TableSchema>) -> Result<ObservationTable<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema)
}

pub fn read_table<T: Scalar, R: Read>(reader: R, schema: Option<&TableSchema>) -> Result<ObservationTable<T>> {
    read_table_impl(reader, schema, true)
}

/// Reads a table for scoring: the outcome column may be absent (outcomes
/// are then stored as 0) and an empty file yields an empty table.
pub fn load_table_unlabeled<T: Scalar>(path: &Path, schema: Option<&TableSchema>) -> Result<ObservationTable<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table_impl(file, schema, false)
}

fn read_table_impl<T: Scalar, R: Read>(
    reader: R,
    schema: Option<&TableSchema>,
    labeled: bool,
) -> Result<ObservationTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if !labeled && headers.is_empty() {
        return ObservationTable::new(
            vec![],
            vec![],
            Matrix::zeros(0, 0),
            vec![],
            Matrix::zeros(0, 0),
            vec![],
            vec![],
            vec![],
        );
    }
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = if labeled {
                TableSchema::infer(&headers)?
            } else {
                TableSchema::infer_unlabeled(&headers)?
            };
            &inferred
        }
    };
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let id_col = schema.id.as_deref().map(col).transpose()?;
    let y_col = if labeled || !schema.outcome.is_empty() {
        Some(col(&schema.outcome)?)
    } else {
        None
    };
    let f_cols = schema.features.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let k_cols = schema.inputs.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let c_cols = schema.codes.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut inputs = Vec::new();
    let mut codes: Vec<Vec<CodeSet>> = vec![Vec::new(); c_cols.len()];
    let mut outcomes = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        // header is line 1
        let line = row_no + 2;
        ids.push(match id_col {
            Some(c) => record[c].to_string(),
            None => format!("row{}", row_no + 1),
        });
        outcomes.push(match y_col.map(|c| record[c].trim()) {
            None | Some("0") => 0,
            Some("1") => 1,
            Some(other) => {
                return Err(Error::Data(format!(
                    "line {line}: outcome value `{other}` is not 0 or 1"
                )))
            }
        });
        for &c in &f_cols {
            feats.push(parse_real::<T>(&record[c], &headers[c], line)?);
        }
        for &c in &k_cols {
            inputs.push(parse_real::<T>(&record[c], &headers[c], line)?);
        }
        for (d, &c) in c_cols.iter().enumerate() {
            codes[d].push(parse_code_cell(&record[c]));
        }
    }
    let n = ids.len();
    ObservationTable::new(
        ids,
        schema.features.iter().map(|h| strip_role_prefix(h)).collect(),
        Matrix::from_vec(n, f_cols.len(), feats)?,
        schema.inputs.iter().map(|h| strip_role_prefix(h)).collect(),
        Matrix::from_vec(n, k_cols.len(), inputs)?,
        schema.codes.iter().map(|h| strip_role_prefix(h)).collect(),
        codes,
        outcomes,
    )
}

fn parse_real<T: Scalar>(cell: &str, column: &str, line: usize) -> Result<T> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::Data(format!(
            "line {line}: missing value in column `{column}` (no imputation is performed)"
        )));
    }
    cell.parse::<f64>()
        .ok()
        .and_then(T::from_f64)
        .ok_or_else(|| Error::Data(format!("line {line}: `{cell}` in column `{column}` is not a real number")))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            message: format!("ragged row: {len} fields, expected {expected_len}"),
        },
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

/// Writes a table in the prefixed-column format understood by [`TableSchema::infer`].
/// The intercept column is implicit and not written.
pub fn write_table<T: Scalar, W: Write>(table: &ObservationTable<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "y".to_string()];
    header.extend(table.feature_names[1..].iter().map(|n| format!("{FEATURE_PREFIX}{n}")));
    header.extend(table.input_names.iter().map(|n| format!("{INPUT_PREFIX}{n}")));
    header.extend(table.code_domains.iter().map(|n| format!("{CODE_PREFIX}{n}")));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..table.len() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(table.ids[i].clone());
        rec.push(table.outcomes[i].to_string());
        rec.extend(table.features.row(i)[1..].iter().map(|v| v.to_string()));
        if table.inputs.ncols() > 0 {
            rec.extend(table.inputs.row(i).iter().map(|v| v.to_string()));
        }
        for d in &table.code_sets {
            if let Some(bad) = d[i].iter().find(|c| c.contains(CODE_DELIMITER)) {
                return Err(Error::Data(format!("code `{bad}` contains the code delimiter")));
            }
            rec.push(d[i].iter().cloned().collect::<Vec<_>>().join(";"));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

pub fn save_table<T: Scalar>(table: &ObservationTable<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_table(table, std::io::BufWriter::new(file))
}

/// Outer folds plus one inner train/validation split per outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub outer_folds: usize,
    pub inner_fraction: f64,
    pub seed: u64,
    pub ids: Vec<String>,
    pub assignments: Vec<usize>,
    /// Per outer fold: row indices of the inner-training part of the outer-training rows.
    pub inner_train: Vec<Vec<usize>>,
    /// Per outer fold: the remaining outer-training rows, used for validation.
    pub inner_valid: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn outer_test(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.outer_folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Deterministic shuffled partition into `k` near-equal folds, with a seeded
/// inner split of every outer-training set.
pub fn make_splits<T: Scalar>(
    table: &ObservationTable<T>,
    k: usize,
    inner_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    split_ids(table.ids(), k, inner_fraction, seed)
}

pub fn split_ids(ids: &[String], k: usize, inner_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let n = ids.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("{k} folds requested for {n} observations")));
    }
    if !(inner_fraction > 0.0 && inner_fraction < 1.0) {
        return Err(Error::Config(format!(
            "inner fraction {inner_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    let mut inner_train = Vec::with_capacity(k);
    let mut inner_valid = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train: Vec<usize> = (0..n).filter(|&i| assignments[i] != fold).collect();
        train.shuffle(&mut rng::seeded(rng::derive_seed(seed, fold as u64)));
        let cut = ((train.len() as f64) * inner_fraction).round() as usize;
        let cut = cut.clamp(1, train.len().saturating_sub(1).max(1));
        let mut valid = train.split_off(cut);
        train.sort_unstable();
        valid.sort_unstable();
        inner_train.push(train);
        inner_valid.push(valid);
    }
    Ok(SplitPlan {
        outer_folds: k,
        inner_fraction,
        seed,
        ids: ids.to_vec(),
        assignments,
        inner_train,
        inner_valid,
    })
}

/// Categorical variable with its ordered level vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotVariable {
    pub name: String,
    pub levels: Vec<f64>,
}

/// One column per (variable, level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub variables: Vec<OneHotVariable>,
}

impl OneHotEncoder {
    pub fn with_levels(variables: Vec<OneHotVariable>) -> Self {
        OneHotEncoder { variables }
    }

    /// Learns level vocabularies from the columns of `values`.
    pub fn fit<T: Scalar>(names: &[String], values: &Matrix<T>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Dimension("one name per categorical column required".into()));
        }
        let variables = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mut levels: Vec<f64> = (0..values.nrows()).map(|i| values.get(i, j).as_f64()).collect();
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                OneHotVariable {
                    name: name.clone(),
                    levels,
                }
            })
            .collect();
        Ok(OneHotEncoder { variables })
    }

    pub fn width(&self) -> usize {
        self.variables.iter().map(|v| v.levels.len()).sum()
    }

    pub fn transform<T: Scalar>(&self, values: &Matrix<T>) -> Result<Matrix<T>> {
        if values.ncols() != self.variables.len() {
            return Err(Error::Dimension(format!(
                "{} categorical columns given, encoder expects {}",
                values.ncols(),
                self.variables.len()
            )));
        }
        let mut out = Matrix::zeros(values.nrows(), self.width());
        for i in 0..values.nrows() {
            let mut offset = 0;
            for (j, var) in self.variables.iter().enumerate() {
                let v = values.get(i, j).as_f64();
                let pos = var
                    .levels
                    .iter()
                    .position(|&l| l == v)
                    .ok_or_else(|| Error::Encoding {
                        variable: var.name.clone(),
                        level: v.to_string(),
                    })?;
                out.set(i, offset + pos, T::one());
                offset += var.levels.len();
            }
        }
        Ok(out)
    }
}

/// Fits an encoder on `values` and returns the encoded matrix.
pub fn one_hot<T: Scalar>(names: &[String], values: &Matrix<T>) -> Result<(Matrix<T>, OneHotEncoder)> {
    let enc = OneHotEncoder::fit(names, values)?;
    let m = enc.transform(values)?;
    Ok((m, enc))
}
