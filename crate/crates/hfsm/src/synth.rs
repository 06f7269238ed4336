//! Synthetic data: Monk-1 driven scenarios, causal examples, and the
//! two-feature linear design.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, Rng};
use crate::scalar::{sigmoid, Scalar};

/// Level counts of the six Monk attributes; levels are `1..=domain`.
pub const MONK_DOMAINS: [i64; 6] = [3, 3, 2, 3, 4, 2];

/// Attribute names used for the Monk inputs.
pub const MONK_INPUTS: [&str; 6] = ["a1", "a2", "a3", "a4", "a5", "a6"];

pub const FEATURE_BETAS: [f64; 4] = [0.3, 0.4, 0.6, 0.7];

/// 1 iff `a1 == a2` or `a5 == 1`.
pub fn monk1(attributes: &[i64]) -> Result<u8> {
    if attributes.len() != 6 {
        return Err(Error::Input(format!("expected 6 attributes, got {}", attributes.len())));
    }
    for (k, (&a, &d)) in attributes.iter().zip(&MONK_DOMAINS).enumerate() {
        if a < 1 || a > d {
            return Err(Error::Input(format!("attribute a{} = {a} outside 1..={d}", k + 1)));
        }
    }
    Ok(u8::from(attributes[0] == attributes[1] || attributes[4] == 1))
}

/// All 432 attribute combinations in lexicographic order.
pub fn monk_combinations() -> Vec<[i64; 6]> {
    let mut out = Vec::with_capacity(432);
    let mut a = [1i64; 6];
    loop {
        out.push(a);
        let mut k = 5;
        loop {
            a[k] += 1;
            if a[k] <= MONK_DOMAINS[k] {
                break;
            }
            a[k] = 1;
            if k == 0 {
                return out;
            }
            k -= 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    pub beta0: f64,
    pub feature_betas: [f64; 4],
    pub delta: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Scenario 1: kernel effect like one feature; 2: like all features; 3: twice all features.
    pub fn named(scenario: u8, n: usize, seed: u64) -> Result<Self> {
        let sum: f64 = FEATURE_BETAS.iter().sum();
        let (beta0, delta) = match scenario {
            1 => (-1.5, sum / 4.0),
            2 => (-2.1, sum),
            3 => (-3.2, 2.0 * sum),
            other => return Err(Error::Config(format!("unknown scenario {other}; expected 1, 2 or 3"))),
        };
        Ok(ScenarioSpec {
            name: format!("scenario{scenario}"),
            n,
            beta0,
            feature_betas: FEATURE_BETAS,
            delta,
            seed,
        })
    }

    pub fn custom(beta0: f64, delta: f64, n: usize, seed: u64) -> Self {
        ScenarioSpec {
            name: "custom".into(),
            n,
            beta0,
            feature_betas: FEATURE_BETAS,
            delta,
            seed,
        }
    }

    pub fn linear_predictor(&self, x: &[f64; 4], m: u8) -> f64 {
        self.beta0
            + self.feature_betas.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            + self.delta * f64::from(m)
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("o{i}")).collect()
}

fn bernoulli(rng: &mut Rng, p: f64) -> u8 {
    u8::from(rng.gen::<f64>() < p)
}

fn to_matrix<T: Scalar>(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix<T>> {
    Matrix::from_vec(rows, cols, data.into_iter().map(T::lit).collect())
}

/// Four Bernoulli(0.5) features, six uniform Monk attributes (as kernel
/// inputs) and an outcome driven by the features and the Monk-1 indicator.
pub fn gen_scenario<T: Scalar>(spec: &ScenarioSpec) -> Result<ObservationTable<T>> {
    if spec.n == 0 {
        return Err(Error::Config("scenario needs n > 0".into()));
    }
    let mut rng = seeded(spec.seed);
    let n = spec.n;
    let mut features = Vec::with_capacity(n * 4);
    let mut inputs = Vec::with_capacity(n * 6);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = [0.0; 4];
        for v in &mut x {
            *v = f64::from(bernoulli(&mut rng, 0.5));
        }
        let mut a = [0i64; 6];
        for (v, &d) in a.iter_mut().zip(&MONK_DOMAINS) {
            *v = rng.gen_range(1..=d);
        }
        let m = monk1(&a)?;
        let p = sigmoid(spec.linear_predictor(&x, m));
        outcomes.push(bernoulli(&mut rng, p));
        features.extend_from_slice(&x);
        inputs.extend(a.iter().map(|&v| v as f64));
    }
    ObservationTable::new(
        ids(n),
        ["x1", "x2", "x3", "x4"].map(String::from).to_vec(),
        to_matrix(n, 4, features)?,
        MONK_INPUTS.map(String::from).to_vec(),
        to_matrix(n, 6, inputs)?,
        vec![],
        vec![],
        outcomes,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausalKind {
    Independent,
    Confounder,
    Collider,
    Mediator,
}

impl std::str::FromStr for CausalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(CausalKind::Independent),
            "confounder" => Ok(CausalKind::Confounder),
            "collider" => Ok(CausalKind::Collider),
            "mediator" => Ok(CausalKind::Mediator),
            other => Err(Error::Config(format!("unknown causal example `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalExampleSpec {
    pub kind: CausalKind,
    pub n: usize,
    pub seed: u64,
}

/// Features `x1 ~ N(0,1)` and binary `x2`; binary kernel input `k`.
pub fn gen_causal_example<T: Scalar>(spec: &CausalExampleSpec) -> Result<ObservationTable<T>> {
    if spec.n == 0 {
        return Err(Error::Config("causal example needs n > 0".into()));
    }
    let mut rng = seeded(spec.seed);
    let n = spec.n;
    let mut features = Vec::with_capacity(2 * n);
    let mut inputs = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let (x2, k, y) = match spec.kind {
            CausalKind::Independent => {
                let x2 = bernoulli(&mut rng, 0.5);
                let k = bernoulli(&mut rng, 0.5);
                let y = bernoulli(&mut rng, sigmoid(0.25 - x1 + 2.0 * f64::from(x2) + 3.0 * f64::from(k)));
                (x2, k, y)
            }
            CausalKind::Confounder => {
                let k = bernoulli(&mut rng, 0.5);
                let x2 = bernoulli(&mut rng, sigmoid(2.0 * f64::from(k)));
                let y = bernoulli(&mut rng, sigmoid(0.25 - x1 + 3.0 * f64::from(k)));
                (x2, k, y)
            }
            CausalKind::Collider => {
                let x2 = bernoulli(&mut rng, 0.5);
                let y = bernoulli(&mut rng, sigmoid(0.25 - x1));
                let k = bernoulli(&mut rng, sigmoid(3.0 * f64::from(y) + 2.0 * f64::from(x2)));
                (x2, k, y)
            }
            CausalKind::Mediator => {
                let x2 = bernoulli(&mut rng, 0.5);
                let k = bernoulli(&mut rng, sigmoid(2.0 * f64::from(x2)));
                let y = bernoulli(&mut rng, sigmoid(0.25 - x1 + 3.0 * f64::from(k)));
                (x2, k, y)
            }
        };
        features.push(x1);
        features.push(f64::from(x2));
        inputs.push(f64::from(k));
        outcomes.push(y);
    }
    ObservationTable::new(
        ids(n),
        vec!["x1".into(), "x2".into()],
        to_matrix(n, 2, features)?,
        vec!["k".into()],
        to_matrix(n, 1, inputs)?,
        vec![],
        vec![],
        outcomes,
    )
}

/// Two standard-normal features with `P(y) = σ(0.25 − x1 + 2·x2)`.
pub fn gen_primal_dual<T: Scalar>(n: usize, seed: u64) -> Result<ObservationTable<T>> {
    if n == 0 {
        return Err(Error::Config("primal/dual data needs n > 0".into()));
    }
    let mut rng = seeded(seed);
    let mut features = Vec::with_capacity(2 * n);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2: f64 = StandardNormal.sample(&mut rng);
        outcomes.push(bernoulli(&mut rng, sigmoid(0.25 - x1 + 2.0 * x2)));
        features.push(x1);
        features.push(x2);
    }
    ObservationTable::new(
        ids(n),
        vec!["x1".into(), "x2".into()],
        to_matrix(n, 2, features)?,
        vec![],
        Matrix::zeros(0, 0),
        vec![],
        vec![],
        outcomes,
    )
}
