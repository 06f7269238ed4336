//! Gower-style weighted set similarity, Jaccard, and the common-absence /
//! rare-presence combination.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::CodeSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How code membership is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    /// A code is comparable when at least one set contains it; a match when both do.
    Presence,
    /// Membership is inverted over the positively weighted codes: comparable
    /// when at least one set lacks the code, a match when both lack it.
    Absence,
}

/// Positive per-code weights; absent codes weigh zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeWeights(pub BTreeMap<String, f64>);

impl CodeWeights {
    pub fn uniform<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        CodeWeights(codes.into_iter().map(|c| (c.to_string(), 1.0)).collect())
    }

    #[inline]
    pub fn weight(&self, code: &str) -> f64 {
        self.0.get(code).copied().unwrap_or(0.0)
    }
}

/// Weighted Gower similarity `Σ S_c w_c / Σ δ_c w_c`; 0 when nothing is comparable.
pub fn gower_similarity<T: Scalar>(a: &CodeSet, b: &CodeSet, weights: &CodeWeights, coding: Coding) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    match coding {
        Coding::Presence => {
            merge_union(a, b, |code, in_a, in_b| {
                let w = weights.weight(code);
                if w > 0.0 {
                    let w = T::lit(w);
                    den += w;
                    if in_a && in_b {
                        num += w;
                    }
                }
            });
        }
        Coding::Absence => {
            for (code, &w) in &weights.0 {
                if w <= 0.0 {
                    continue;
                }
                let absent_a = !a.contains(code);
                let absent_b = !b.contains(code);
                if absent_a || absent_b {
                    let w = T::lit(w);
                    den += w;
                    if absent_a && absent_b {
                        num += w;
                    }
                }
            }
        }
    }
    if den == T::zero() {
        T::zero()
    } else {
        num / den
    }
}

/// `|A∩B| / |A∪B|`, with two empty sets scoring 1.
pub fn jaccard<T: Scalar>(a: &CodeSet, b: &CodeSet) -> T {
    let mut inter = 0usize;
    let mut union = 0usize;
    merge_union(a, b, |_, in_a, in_b| {
        union += 1;
        if in_a && in_b {
            inter += 1;
        }
    });
    if union == 0 {
        T::one()
    } else {
        T::from_usize_lossy(inter) / T::from_usize_lossy(union)
    }
}

/// Common-absence similarity plus rare-presence similarity, in `[0, 2]`.
pub fn jcr<T: Scalar>(a: &CodeSet, b: &CodeSet, weights: &PrevalenceWeights) -> T {
    gower_similarity::<T>(a, b, &weights.common, Coding::Absence)
        + gower_similarity::<T>(a, b, &weights.rare, Coding::Presence)
}

/// Walks the sorted union of two sets, reporting membership in each.
fn merge_union<'a>(a: &'a CodeSet, b: &'a CodeSet, mut visit: impl FnMut(&'a str, bool, bool)) {
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some(x), Some(y)) => match x.cmp(y) {
                Ordering::Less => {
                    visit(x, true, false);
                    ia.next();
                }
                Ordering::Greater => {
                    visit(y, false, true);
                    ib.next();
                }
                Ordering::Equal => {
                    visit(x, true, true);
                    ia.next();
                    ib.next();
                }
            },
            (Some(x), None) => {
                visit(x, true, false);
                ia.next();
            }
            (None, Some(y)) => {
                visit(y, false, true);
                ib.next();
            }
            (None, None) => break,
        }
    }
}

pub const DEFAULT_COMMON_THRESHOLD: f64 = 0.70;
pub const DEFAULT_RARE_THRESHOLD: f64 = 0.30;

/// Training-set code prevalences and the derived common/rare weightings.
///
/// Common codes have prevalence `>= common_threshold`, rare codes
/// `< rare_threshold`; codes in between, and codes never seen in training,
/// weigh zero in both components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceWeights {
    pub n_train: usize,
    pub common_threshold: f64,
    pub rare_threshold: f64,
    pub prevalence: BTreeMap<String, f64>,
    pub common: CodeWeights,
    pub rare: CodeWeights,
}

impl PrevalenceWeights {
    pub fn from_sets<'a>(
        sets: impl IntoIterator<Item = &'a CodeSet>,
        common_threshold: f64,
        rare_threshold: f64,
    ) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for set in sets {
            n += 1;
            for code in set {
                *counts.entry(code.clone()).or_default() += 1;
            }
        }
        if n == 0 {
            return Err(Error::Config("prevalence weights need a non-empty training slice".into()));
        }
        let mut prevalence = BTreeMap::new();
        let mut common = BTreeMap::new();
        let mut rare = BTreeMap::new();
        for (code, count) in counts {
            let p = count as f64 / n as f64;
            if p >= common_threshold {
                common.insert(code.clone(), 1.0);
            } else if p < rare_threshold {
                rare.insert(code.clone(), 1.0);
            }
            prevalence.insert(code, p);
        }
        Ok(PrevalenceWeights {
            n_train: n,
            common_threshold,
            rare_threshold,
            prevalence,
            common: CodeWeights(common),
            rare: CodeWeights(rare),
        })
    }

    pub fn common_codes(&self) -> BTreeSet<&str> {
        self.common.0.keys().map(String::as_str).collect()
    }

    pub fn rare_codes(&self) -> BTreeSet<&str> {
        self.rare.0.keys().map(String::as_str).collect()
    }
}
