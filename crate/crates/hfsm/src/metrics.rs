//! Discrimination and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{logit, Scalar};

fn check<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mann-Whitney `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` by sort and tie-group ranking.
///
/// Pair counts are kept as doubled integers, so the value equals the
/// pairwise count divided by `P·N` exactly.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].as_f64().total_cmp(&scores[b].as_f64()));
    let mut doubled: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]].as_f64();
        let (mut gp, mut gn) = (0u64, 0u64);
        let mut j = i;
        while j < order.len() && scores[order[j]].as_f64() == s {
            if labels[order[j]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        doubled += 2 * u128::from(gp) * u128::from(neg_below) + u128::from(gp) * u128::from(gn);
        neg_below += gn;
        i = j;
    }
    Ok((doubled as f64 / 2.0) / (pos as f64 * neg as f64))
}

/// Average precision over positives in descending-score order; ties keep input order.
pub fn auprc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].as_f64().total_cmp(&scores[a].as_f64()));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Logistic recalibration `P(y=1) = σ(a + b·logit(p))` by Newton's method.
/// Returns `(intercept a, slope b)`.
pub fn calibration_fit<T: Scalar>(probabilities: &[T], labels: &[u8]) -> Result<(f64, f64)> {
    check(probabilities, labels)?;
    let x: Vec<f64> = probabilities
        .iter()
        .map(|p| logit(p.as_f64().clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)))
        .collect();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let pos = labels.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::UndefinedMetric("calibration needs both classes".into()));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
        return Err(Error::UndefinedMetric("calibration design is degenerate: all logits equal".into()));
    }
    let loglik = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(&y)
            .map(|(&xi, &yi)| {
                let eta = a + b * xi;
                yi * eta - crate::scalar::softplus(eta)
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, 1.0);
    let mut current = loglik(a, b);
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(&y) {
            let p = crate::scalar::sigmoid(a + b * xi);
            let w = p * (1.0 - p);
            g0 += yi - p;
            g1 += (yi - p) * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::UndefinedMetric("calibration fit is singular".into()));
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let next = loglik(na, nb);
            if next >= current - 1e-12 * current.abs().max(1.0) || step < 1e-10 {
                a = na;
                b = nb;
                current = next;
                break;
            }
            step /= 2.0;
        }
        if (step * da).abs().max((step * db).abs()) < 1e-12 * (1.0 + a.abs().max(b.abs())) {
            return Ok((a, b));
        }
        if !(a.is_finite() && b.is_finite()) {
            break;
        }
    }
    Err(Error::UndefinedMetric("calibration fit did not converge (separable data?)".into()))
}

/// Metrics on one evaluation slice; undefined metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub n_positive: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub calibration_intercept: Option<f64>,
    pub calibration_slope: Option<f64>,
}

impl MetricReport {
    pub fn compute<T: Scalar>(probabilities: &[T], labels: &[u8]) -> Result<Self> {
        check(probabilities, labels)?;
        let calibration = calibration_fit(probabilities, labels).ok();
        Ok(MetricReport {
            n: labels.len(),
            n_positive: labels.iter().filter(|&&y| y == 1).count(),
            auroc: auroc(probabilities, labels).ok(),
            auprc: auprc(probabilities, labels).ok(),
            calibration_intercept: calibration.map(|c| c.0),
            calibration_slope: calibration.map(|c| c.1),
        })
    }
}
