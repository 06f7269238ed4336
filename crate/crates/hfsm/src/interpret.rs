//! Interpretation reports: kernel-coefficient strata, feature-coefficient
//! comparison, and indirectly standardized outcome ratios.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::solver::{FitResult, ModelDocument};

/// Rounds to five significant digits.
pub fn round_sig5(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.4e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStrata {
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
    pub zero_ids: Vec<String>,
    /// `(id, α rounded to five significant digits)` in input order.
    pub rounded: Vec<(String, f64)>,
}

impl AlphaStrata {
    /// Partitions ids by the sign of their rounded α; only exact zeros land in the zero stratum.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut s = AlphaStrata {
            positive_ids: Vec::new(),
            negative_ids: Vec::new(),
            zero_ids: Vec::new(),
            rounded: Vec::new(),
        };
        for (id, a) in pairs {
            let r = round_sig5(a);
            if r > 0.0 {
                s.positive_ids.push(id.to_string());
            } else if r < 0.0 {
                s.negative_ids.push(id.to_string());
            } else {
                s.zero_ids.push(id.to_string());
            }
            s.rounded.push((id.to_string(), r));
        }
        s
    }

    pub fn stratum_of(&self, id: &str) -> Option<&'static str> {
        if self.positive_ids.iter().any(|x| x == id) {
            Some("positive")
        } else if self.negative_ids.iter().any(|x| x == id) {
            Some("negative")
        } else if self.zero_ids.iter().any(|x| x == id) {
            Some("zero")
        } else {
            None
        }
    }

    /// `stratum,count` rows.
    pub fn summary_csv(&self) -> String {
        format!(
            "stratum,count\npositive,{}\nnegative,{}\nzero,{}\n",
            self.positive_ids.len(),
            self.negative_ids.len(),
            self.zero_ids.len()
        )
    }
}

pub fn stratify_alpha<T: Scalar>(fit: &FitResult<T>) -> AlphaStrata {
    AlphaStrata::from_pairs(fit.train_ids.iter().map(String::as_str).zip(fit.alpha.iter().map(|a| a.as_f64())))
}

/// Strata for a saved model over the given training ids; ids without a stored coefficient have α = 0.
pub fn stratify_document(doc: &ModelDocument, train_ids: &[String]) -> AlphaStrata {
    let alpha: HashMap<&str, f64> = doc.representatives.iter().map(|r| (r.id.as_str(), r.alpha)).collect();
    AlphaStrata::from_pairs(
        train_ids
            .iter()
            .map(|id| (id.as_str(), alpha.get(id.as_str()).copied().unwrap_or(0.0))),
    )
}

pub const SIGN_FLIP_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub name: String,
    pub beta_a: f64,
    pub beta_b: f64,
    pub difference: f64,
    pub sign_flip: bool,
}

/// Aligns two named coefficient lists; names must match exactly, in order.
pub fn compare_named(a: &[(String, f64)], b: &[(String, f64)]) -> Result<Vec<CoefficientComparison>> {
    let names_a: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let names_b: Vec<&str> = b.iter().map(|(n, _)| n.as_str()).collect();
    if names_a != names_b {
        return Err(Error::Schema(format!(
            "feature names differ: [{}] vs [{}]",
            names_a.join(", "),
            names_b.join(", ")
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|((name, x), (_, y))| CoefficientComparison {
            name: name.clone(),
            beta_a: *x,
            beta_b: *y,
            difference: x - y,
            sign_flip: x * y < 0.0 && x.abs() > SIGN_FLIP_GUARD && y.abs() > SIGN_FLIP_GUARD,
        })
        .collect())
}

pub fn compare_coefficients<T: Scalar>(a: &FitResult<T>, b: &FitResult<T>) -> Result<Vec<CoefficientComparison>> {
    let named = |f: &FitResult<T>| -> Vec<(String, f64)> {
        f.feature_names.iter().cloned().zip(f.beta.iter().map(|v| v.as_f64())).collect()
    };
    compare_named(&named(a), &named(b))
}

pub fn compare_documents(a: &ModelDocument, b: &ModelDocument) -> Result<Vec<CoefficientComparison>> {
    let named = |d: &ModelDocument| -> Vec<(String, f64)> { d.beta.iter().map(|c| (c.name.clone(), c.value)).collect() };
    compare_named(&named(a), &named(b))
}

pub fn comparison_csv(rows: &[CoefficientComparison]) -> String {
    let mut out = String::from("feature,beta_a,beta_b,difference,sign_flip\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.beta_a, r.beta_b, r.difference, r.sign_flip
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub complement_n: usize,
    pub complement_rate: f64,
    pub stratum_n: usize,
    pub stratum_observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrReport {
    pub group_column: String,
    pub stratum_size: usize,
    pub observed: usize,
    pub expected: f64,
    pub smr: f64,
    pub groups: Vec<GroupRate>,
}

impl SmrReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "group_column,stratum_size,observed,expected,smr\n{},{},{},{},{}\n\ngroup,complement_n,complement_rate,stratum_n,stratum_observed\n",
            self.group_column, self.stratum_size, self.observed, self.expected, self.smr
        );
        for g in &self.groups {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                g.group, g.complement_n, g.complement_rate, g.stratum_n, g.stratum_observed
            ));
        }
        out
    }
}

/// Observed stratum outcomes over the count expected from group-specific
/// outcome rates in the rest of the cohort.
pub fn smr<T: Scalar>(cohort: &ObservationTable<T>, stratum: &[String], group_column: &str) -> Result<SmrReport> {
    if stratum.is_empty() {
        return Err(Error::Input("SMR stratum is empty".into()));
    }
    let index = cohort.index_of();
    let members: HashSet<usize> = stratum
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("stratum id `{id}` is not in the cohort")))
        })
        .collect::<Result<_>>()?;
    let groups: Vec<String> = cohort.column(group_column)?.iter().map(|v| v.as_f64().to_string()).collect();
    // (complement n, complement events, stratum n, stratum events)
    let mut tally: BTreeMap<&str, (usize, usize, usize, usize)> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        let y = usize::from(cohort.outcomes()[i]);
        let e = tally.entry(g.as_str()).or_default();
        if members.contains(&i) {
            e.2 += 1;
            e.3 += y;
        } else {
            e.0 += 1;
            e.1 += y;
        }
    }
    let mut expected = 0.0;
    let mut observed = 0;
    let mut rates = Vec::new();
    for (g, &(cn, ce, sn, se)) in &tally {
        if sn > 0 && cn == 0 {
            return Err(Error::UndefinedSmr(format!(
                "group {g} of column `{group_column}` has no members outside the stratum"
            )));
        }
        let rate = if cn > 0 { ce as f64 / cn as f64 } else { 0.0 };
        expected += rate * sn as f64;
        observed += se;
        rates.push(GroupRate {
            group: g.to_string(),
            complement_n: cn,
            complement_rate: rate,
            stratum_n: sn,
            stratum_observed: se,
        });
    }
    if !(expected > 0.0) {
        return Err(Error::UndefinedSmr("expected outcome count is zero".into()));
    }
    Ok(SmrReport {
        group_column: group_column.to_string(),
        stratum_size: members.len(),
        observed,
        expected,
        smr: observed as f64 / expected,
        groups: rates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeFrequency {
    pub stratum: String,
    pub code: String,
    pub count: usize,
    pub fraction: f64,
}

/// Per-stratum code counts in one code domain, for external topic tools.
pub fn stratum_code_frequencies<T: Scalar>(
    table: &ObservationTable<T>,
    strata: &AlphaStrata,
    domain: &str,
) -> Result<Vec<CodeFrequency>> {
    let d = table.domain_index(domain)?;
    let index = table.index_of();
    let mut out = Vec::new();
    for (label, ids) in [
        ("positive", &strata.positive_ids),
        ("negative", &strata.negative_ids),
        ("zero", &strata.zero_ids),
    ] {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut size = 0usize;
        for id in ids {
            let Some(&i) = index.get(id.as_str()) else { continue };
            size += 1;
            for c in &table.code_sets(d)[i] {
                *counts.entry(c.as_str()).or_default() += 1;
            }
        }
        for (code, count) in counts {
            out.push(CodeFrequency {
                stratum: label.to_string(),
                code: code.to_string(),
                count,
                fraction: count as f64 / size as f64,
            });
        }
    }
    Ok(out)
}

pub fn code_frequency_csv(rows: &[CodeFrequency]) -> String {
    let mut out = String::from("stratum,code,count,fraction\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.stratum, r.code, r.count, r.fraction));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_examples() {
        assert_eq!(round_sig5(1.000004e-6), 1.0e-6);
        assert_eq!(round_sig5(3e-25), 3e-25);
        assert_eq!(round_sig5(0.0), 0.0);
        assert_eq!(round_sig5(-0.123456), -0.12346);
    }

    #[test]
    fn strata_follow_rounded_sign() {
        let s = AlphaStrata::from_pairs([("a", 1.000004e-6), ("b", 3e-25), ("c", 0.0), ("d", -2.0)]);
        assert_eq!(s.positive_ids, ["a", "b"]);
        assert_eq!(s.zero_ids, ["c"]);
        assert_eq!(s.negative_ids, ["d"]);
        assert_eq!(s.stratum_of("d"), Some("negative"));
    }

    #[test]
    fn sign_flip_rules() {
        let a = vec![("x".to_string(), 0.116), ("y".to_string(), 0.1)];
        let b = vec![("x".to_string(), -0.106), ("y".to_string(), 1e-9)];
        let rows = compare_named(&a, &b).unwrap();
        assert!(rows[0].sign_flip);
        assert!(!rows[1].sign_flip);
        let same = compare_named(&a, &a).unwrap();
        assert!(same.iter().all(|r| r.difference == 0.0 && !r.sign_flip));
        let c = vec![("z".to_string(), 0.1), ("y".to_string(), 0.1)];
        assert!(matches!(compare_named(&a, &c), Err(Error::Schema(_))));
    }
}
