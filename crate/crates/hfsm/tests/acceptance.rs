//! Acceptance suite. Each test prints one `PASS`/`FAIL` line (straight to
//! stdout, so it shows even when output capture is on) and then asserts.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use hfsm::cv::{run_experiment_audited, DatasetSource, ExperimentPlan, FitStage, KernelFamily, ModelTemplate};
use hfsm::data::{CodeSet, ObservationTable, INTERCEPT};
use hfsm::kernels::{diagonal_dominance, jaccard, jcr, FittedKernel, InputSelector, KernelKind, KernelSpec, PrevalenceWeights};
use hfsm::metrics::{auroc, calibration_fit};
use hfsm::rng::seeded;
use hfsm::solver::{fit, kkt_residual, objective_eval, predict, smooth_gradient, Blocks, ModelSpec, SolverConfig, Variant};
use hfsm::synth::{gen_primal_dual, monk1, monk_combinations};
use hfsm::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn verdict(number: u8, name: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("PASS [{number:>2}] {name}: {detail}\n"),
        Err(detail) => format!("FAIL [{number:>2}] {name}: {detail}\n"),
    };
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    if let Err(detail) = outcome {
        panic!("criterion {number} ({name}) failed: {detail}");
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Random table: `p` standard-normal features, two normal kernel inputs, logistic outcome.
fn random_table(n: usize, p: usize, seed: u64) -> ObservationTable<f64> {
    let mut rng = seeded(seed);
    let mut features = Vec::with_capacity(n * p);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut eta = -0.2;
        for j in 0..p {
            let x: f64 = rng.sample(StandardNormal);
            eta += 0.5 * x * if j % 2 == 0 { 1.0 } else { -1.0 };
            features.push(x);
        }
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        eta += (u * v).sin();
        inputs.push(u);
        inputs.push(v);
        outcomes.push(u8::from(rng.gen::<f64>() < sigmoid(eta)));
    }
    ObservationTable::new(
        (0..n).map(|i| format!("r{i}")).collect(),
        (0..p).map(|j| format!("x{j}")).collect(),
        Matrix::from_vec(n, p, features).unwrap(),
        vec!["u".into(), "v".into()],
        Matrix::from_vec(n, 2, inputs).unwrap(),
        vec![],
        vec![],
        outcomes,
    )
    .unwrap()
}

#[test]
fn c01_primal_dual_equivalence() {
    let outcome = (|| -> Result<String, String> {
        let start = Instant::now();
        let table: ObservationTable<f64> = gen_primal_dual(10_000, 0).map_err(|e| e.to_string())?;
        let config = SolverConfig::default();
        let lr = fit(&ModelSpec::lr(), &table, None, &config).map_err(|e| e.to_string())?;

        let reduced = table.select_features(&[INTERCEPT, "x1"]).map_err(|e| e.to_string())?;
        let spec = KernelSpec::new(KernelKind::Linear, InputSelector::Columns(vec!["x2".into()]));
        let fk = FittedKernel::fit(&spec, &reduced).map_err(|e| e.to_string())?;
        let k = fk.operator(&reduced, &reduced).map_err(|e| e.to_string())?;
        let sim = fit(
            &ModelSpec::new(Variant::HfsmSim, 0.0, Some(spec)),
            &reduced,
            Some(k.as_ref()),
            &config,
        )
        .map_err(|e| e.to_string())?;

        let p_lr = predict(&lr.beta, &[], table.features(), None).map_err(|e| e.to_string())?;
        let p_sim = predict(&sim.beta, &sim.alpha, reduced.features(), Some(k.as_ref())).map_err(|e| e.to_string())?;
        let diff = p_lr.iter().zip(&p_sim).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let elapsed = start.elapsed().as_secs_f64();
        let detail = format!(
            "max |Δp| = {diff:.2e}; HFSM-Sim β = ({:.3}, {:.3}); LR β = ({:.3}, {:.3}); {elapsed:.1}s",
            sim.beta[0], sim.beta[1], lr.beta[0], lr.beta[1]
        );
        let close = |b: &[f64]| (b[0] - 0.24).abs() <= 0.05 && (b[1] + 1.04).abs() <= 0.05;
        if diff <= 1e-4 && close(&sim.beta) && close(&lr.beta) && elapsed <= 300.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(1, "primal/dual equivalence", outcome);
}

fn scenario_plan(scenario: u8, seed: u64) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(
        DatasetSource::Scenario {
            scenario,
            n: 2000,
            seed,
        },
        Variant::ALL.iter().map(|v| ModelTemplate::new(*v)).collect(),
    );
    plan.grids.kernels = vec![KernelFamily::Rbf];
    plan.grids.inputs = vec![InputSelector::OneHot(
        ["a1", "a2", "a3", "a4", "a5", "a6"].map(String::from).to_vec(),
    )];
    plan.seed = seed;
    plan.parallelism = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    plan
}

#[test]
fn c02_scenario_ablation() {
    let outcome = (|| -> Result<String, String> {
        let mut details = Vec::new();
        let mut ok = true;
        for scenario in [1u8, 2, 3] {
            let report = run_experiment_audited::<f64>(&scenario_plan(scenario, 11), None).map_err(|e| e.to_string())?;
            let a = |m: &str| report.aggregate_for(m).and_then(|g| g.auroc).unwrap_or(f64::NAN);
            let (lr, klr, sim) = (a("LR"), a("KLR"), a("HFSM-Sim"));
            let pass = match scenario {
                1 => (sim - lr).abs() <= 0.02 && klr <= 0.55,
                2 => sim >= lr.max(klr) - 0.005 && sim - lr >= 0.05,
                _ => klr - lr >= 0.20 && sim >= klr - 0.01,
            };
            ok &= pass && !report.has_failures();
            details.push(format!(
                "S{scenario} LR {lr:.3} KLR {klr:.3} Seq {:.3} Sim {sim:.3}{}",
                a("HFSM-Seq"),
                if pass { "" } else { " (violated)" }
            ));
        }
        let detail = details.join("; ");
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(2, "scenario ablation ordering", outcome);
}

/// Dense problem for the oracle: columns of `a` are the free coefficients.
struct Problem {
    a: Vec<Vec<f64>>,
    offset: Vec<f64>,
    y: Vec<f64>,
    penalized: Vec<bool>,
    lambda: f64,
}

impl Problem {
    fn eta(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.offset)
            .map(|(row, o)| o + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let eta = self.eta(x);
        let n = self.y.len() as f64;
        let ll: f64 = eta.iter().zip(&self.y).map(|(e, y)| y * e - softplus(*e)).sum::<f64>() / n;
        let pen: f64 = x.iter().zip(&self.penalized).filter(|(_, p)| **p).map(|(v, _)| v.abs()).sum();
        ll - self.lambda * pen
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let eta = self.eta(x);
        let n = self.y.len() as f64;
        let mut g = vec![0.0; x.len()];
        for ((row, e), y) in self.a.iter().zip(&eta).zip(&self.y) {
            let r = (y - sigmoid(*e)) / n;
            for (gj, aj) in g.iter_mut().zip(row) {
                *gj += aj * r;
            }
        }
        g
    }

    fn kkt(&self, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        let mut worst: f64 = 0.0;
        for ((gj, xj), pen) in g.iter().zip(x).zip(&self.penalized) {
            let v = if !pen {
                gj.abs()
            } else if *xj > 0.0 {
                (gj - self.lambda).abs()
            } else if *xj < 0.0 {
                (gj + self.lambda).abs()
            } else {
                (gj.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Upper bound on the curvature of the mean log-likelihood: the smaller of
    /// the Frobenius and Gershgorin bounds on `λmax(AᵀA)`, over `4n`.
    fn curvature_bound(&self) -> f64 {
        let m = self.a[0].len();
        let mut gram = vec![vec![0.0; m]; m];
        for row in &self.a {
            for j in 0..m {
                for k in 0..m {
                    gram[j][k] += row[j] * row[k];
                }
            }
        }
        let frobenius: f64 = (0..m).map(|j| gram[j][j]).sum();
        let gershgorin = gram.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        frobenius.min(gershgorin) / (4.0 * self.y.len() as f64)
    }

    /// Unaccelerated proximal gradient from zero with the fixed step `1/L`.
    fn oracle(&self) -> (Vec<f64>, f64) {
        let step = 1.0 / self.curvature_bound();
        let mut x = vec![0.0; self.a[0].len()];
        for it in 0..1_000_000 {
            let g = self.gradient(&x);
            for ((xj, gj), pen) in x.iter_mut().zip(&g).zip(&self.penalized) {
                let v = *xj + step * gj;
                *xj = if *pen {
                    v.signum() * (v.abs() - step * self.lambda).max(0.0)
                } else {
                    v
                };
            }
            if it % 1000 == 999 && self.kkt(&x) <= 1e-11 {
                break;
            }
        }
        let f = self.objective(&x);
        (x, f)
    }
}

#[test]
fn c03_solver_optimality() {
    let outcome = (|| -> Result<String, String> {
        let start = Instant::now();
        let config = SolverConfig::default();
        let lambdas = [0.0, 0.01, 0.1];
        let rows: Vec<Result<(f64, f64), String>> = (0..50u64)
            .into_par_iter()
            .map(|i| {
                let n = 20 + (i as usize * 7) % 41;
                let p = 1 + (i as usize % 3);
                let lambda = lambdas[i as usize % 3];
                let table = random_table(n, p, 1000 + i);
                let (variant, spec) = if lambda == 0.0 {
                    if i % 2 == 0 {
                        (Variant::Lr, None)
                    } else {
                        let s = KernelSpec::new(KernelKind::Linear, InputSelector::Columns(vec!["u".into()]));
                        (Variant::HfsmSim, Some(s))
                    }
                } else {
                    let v = [Variant::Klr, Variant::HfsmSim, Variant::HfsmSeq][(i as usize / 3) % 3];
                    let s = KernelSpec::new(KernelKind::Rbf { sigma: 1.0 }, InputSelector::Columns(vec!["u".into(), "v".into()]));
                    (v, Some(s))
                };
                let fk = spec.as_ref().map(|s| FittedKernel::fit(s, &table)).transpose().map_err(|e| e.to_string())?;
                let dense = fk.as_ref().map(|f| f.matrix(&table, &table)).transpose().map_err(|e| e.to_string())?;
                let k = dense.as_ref().map(|m| m as &dyn hfsm::KernelOperator<f64>);
                let result = fit(&ModelSpec::new(variant, lambda, spec.clone()), &table, k, &config).map_err(|e| e.to_string())?;

                let phi = table.features();
                let y: Vec<f64> = table.outcomes().iter().map(|&v| f64::from(v)).collect();
                let m = phi.ncols();
                let kern = |r: usize| -> Vec<f64> { dense.as_ref().map_or(vec![], |d| d.values.row(r).to_vec()) };
                let problem = match variant {
                    Variant::Lr => Problem {
                        a: (0..n).map(|r| phi.row(r).to_vec()).collect(),
                        offset: vec![0.0; n],
                        y,
                        penalized: vec![false; m],
                        lambda,
                    },
                    Variant::Klr => Problem {
                        a: (0..n).map(kern).collect(),
                        offset: vec![0.0; n],
                        y,
                        penalized: vec![true; n],
                        lambda,
                    },
                    Variant::HfsmSim => Problem {
                        a: (0..n).map(|r| [phi.row(r).to_vec(), kern(r)].concat()).collect(),
                        offset: vec![0.0; n],
                        y,
                        penalized: [vec![false; m], vec![true; n]].concat(),
                        lambda,
                    },
                    Variant::HfsmSeq => Problem {
                        // stage two: α with the fitted feature coefficients held fixed
                        a: (0..n).map(kern).collect(),
                        offset: phi.mul_vec(&result.beta),
                        y,
                        penalized: vec![true; n],
                        lambda,
                    },
                };
                let (_, f_oracle) = problem.oracle();
                let blocks = Blocks {
                    beta: variant != Variant::Klr && variant != Variant::HfsmSeq,
                    alpha: variant.uses_kernel(),
                };
                let kkt = kkt_residual(&result.beta, &result.alpha, phi, k, &table.outcomes_scalar(), lambda, blocks)
                    .map_err(|e| e.to_string())?;
                let x: Vec<f64> = match variant {
                    Variant::Lr => result.beta.clone(),
                    Variant::Klr | Variant::HfsmSeq => result.alpha.clone(),
                    Variant::HfsmSim => [result.beta.clone(), result.alpha.clone()].concat(),
                };
                let kkt_independent = problem.kkt(&x);
                Ok((kkt.max(kkt_independent), (result.objective - f_oracle).abs()))
            })
            .collect();
        let mut worst_kkt: f64 = 0.0;
        let mut worst_gap: f64 = 0.0;
        for r in rows {
            let (k, g) = r?;
            worst_kkt = worst_kkt.max(k);
            worst_gap = worst_gap.max(g);
        }
        let elapsed = start.elapsed().as_secs_f64();
        let detail = format!("50 instances; max KKT {worst_kkt:.2e}; max |f − f_oracle| {worst_gap:.2e}; {elapsed:.1}s");
        if worst_kkt <= 1e-6 && worst_gap <= 1e-6 && elapsed <= 120.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(3, "solver optimality", outcome);
}

#[test]
fn c04_gradient_finite_differences() {
    let outcome = (|| -> Result<String, String> {
        let table = random_table(40, 3, 77);
        let spec = KernelSpec::new(KernelKind::Rbf { sigma: 0.7 }, InputSelector::Columns(vec!["u".into(), "v".into()]));
        let fk = FittedKernel::fit(&spec, &table).map_err(|e| e.to_string())?;
        let k = fk.matrix(&table, &table).map_err(|e| e.to_string())?;
        let y = table.outcomes_scalar();
        let phi = table.features();
        let mut rng = seeded(5);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let beta: Vec<f64> = (0..phi.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
            let alpha: Vec<f64> = (0..table.len()).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1).collect();
            let (gb, ga) = smooth_gradient(&beta, &alpha, phi, Some(&k), &y).map_err(|e| e.to_string())?;
            let f = |b: &[f64], a: &[f64]| objective_eval(b, a, phi, Some(&k), &y, 0.0).unwrap();
            let h = 1e-5;
            let mut fd = Vec::new();
            for j in 0..beta.len() {
                let (mut up, mut down) = (beta.clone(), beta.clone());
                up[j] += h;
                down[j] -= h;
                fd.push((f(&up, &alpha) - f(&down, &alpha)) / (2.0 * h));
            }
            for j in 0..alpha.len() {
                let (mut up, mut down) = (alpha.clone(), alpha.clone());
                up[j] += h;
                down[j] -= h;
                fd.push((f(&beta, &up) - f(&beta, &down)) / (2.0 * h));
            }
            let analytic: Vec<f64> = gb.iter().chain(&ga).copied().collect();
            let num: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
        let detail = format!("20 points; max relative error {worst:.2e}");
        if worst <= 1e-6 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(4, "gradient correctness", outcome);
}

fn set(codes: &[&str]) -> CodeSet {
    codes.iter().map(|c| c.to_string()).collect()
}

#[test]
fn c05_kernel_oracle_tables() {
    let outcome = (|| -> Result<String, String> {
        let clients = [
            set(&["lab", "dx", "tx"]),
            set(&["lab", "dx"]),
            set(&["dx", "tx"]),
            set(&["dx"]),
        ];
        let published4 = [
            [1.00, 0.67, 0.67, 0.33],
            [0.67, 1.00, 0.33, 0.50],
            [0.67, 0.33, 1.00, 0.50],
            [0.33, 0.50, 0.50, 1.00],
        ];
        let with_common = [
            set(&["lab", "dx", "tx", "Com"]),
            set(&["lab", "dx", "Com"]),
            set(&["dx", "tx", "Com"]),
            set(&["dx", "Com"]),
            set(&["dx", "tx"]),
            set(&["dx"]),
        ];
        let published6 = [
            [1.00, 0.75, 0.75, 0.50, 0.50, 0.25],
            [0.75, 1.00, 0.50, 0.67, 0.25, 0.33],
            [0.75, 0.50, 1.00, 0.67, 0.67, 0.33],
            [0.50, 0.67, 0.67, 1.00, 0.33, 0.50],
            [0.50, 0.25, 0.67, 0.33, 1.00, 0.50],
            [0.25, 0.33, 0.33, 0.50, 0.50, 1.00],
        ];
        let mut mismatches = Vec::new();
        let mut entries = 0;
        let mut check = |sets: &[CodeSet], table: &[&[f64]]| {
            for (i, row) in table.iter().enumerate() {
                for (j, &want) in row.iter().enumerate() {
                    entries += 1;
                    let got: f64 = jaccard(&sets[i], &sets[j]);
                    if ((got * 100.0).round() / 100.0 - want).abs() > 1e-12 {
                        mismatches.push(format!("({i},{j}) {got:.4} vs {want}"));
                    }
                }
            }
        };
        check(&clients, &published4.iter().map(|r| &r[..]).collect::<Vec<_>>());
        check(&with_common, &published6.iter().map(|r| &r[..]).collect::<Vec<_>>());

        // Common-absence / rare-presence hand enumerations.
        let universe: Vec<CodeSet> = (0..10)
            .map(|i| if i == 0 { set(&["C", "R"]) } else if i < 9 { set(&["C"]) } else { set(&[]) })
            .collect();
        let w = PrevalenceWeights::from_sets(&universe, 0.70, 0.30).map_err(|e| e.to_string())?;
        let jcr_cases: [(&str, CodeSet, CodeSet, f64); 4] = [
            ("shared R", set(&["R"]), set(&["R"]), 2.0),
            ("both empty", set(&[]), set(&[]), 1.0),
            ("both all-common", set(&["C"]), set(&["C"]), 0.0),
            ("one lacks C", set(&["C"]), set(&[]), 0.0),
        ];
        for (label, a, b, want) in &jcr_cases {
            let got: f64 = jcr(a, b, &w);
            if got != *want {
                mismatches.push(format!("jcr {label}: {got} vs {want}"));
            }
        }
        let boundary: Vec<CodeSet> = (0..10)
            .map(|i| {
                let mut s = CodeSet::new();
                if i < 7 {
                    s.insert("seven".into());
                }
                if i < 3 {
                    s.insert("three".into());
                }
                if i < 5 {
                    s.insert("five".into());
                }
                s
            })
            .collect();
        let wb = PrevalenceWeights::from_sets(&boundary, 0.70, 0.30).map_err(|e| e.to_string())?;
        let common: BTreeSet<&str> = wb.common_codes();
        let rare: BTreeSet<&str> = wb.rare_codes();
        if common != BTreeSet::from(["seven"]) || !rare.is_empty() {
            mismatches.push(format!("thresholds: common {common:?}, rare {rare:?}"));
        }
        let detail = format!("{entries} Jaccard entries, {} J-CR fixtures", jcr_cases.len() + 1);
        if mismatches.is_empty() {
            Ok(detail)
        } else {
            Err(format!("{detail}; mismatches: {}", mismatches.join(", ")))
        }
    })();
    verdict(5, "kernel oracle tables", outcome);
}

#[test]
fn c06_monk_truth_table() {
    let outcome = (|| -> Result<String, String> {
        let mut oracle = Vec::new();
        for a1 in 1..=3 {
            for a2 in 1..=3 {
                for a3 in 1..=2 {
                    for a4 in 1..=3 {
                        for a5 in 1..=4 {
                            for a6 in 1..=2 {
                                let label = u8::from(a1 == a2 || a5 == 1);
                                oracle.push(([a1, a2, a3, a4, a5, a6], label));
                            }
                        }
                    }
                }
            }
        }
        let listed: BTreeSet<[i64; 6]> = monk_combinations().into_iter().collect();
        let mut disagreements = 0;
        for (x, want) in &oracle {
            if !listed.contains(x) || monk1(x).map_err(|e| e.to_string())? != *want {
                disagreements += 1;
            }
        }
        let positives = oracle.iter().filter(|(_, l)| *l == 1).count();
        let detail = format!("{} rows, {positives} positive, {disagreements} disagreements", oracle.len());
        if oracle.len() == 432 && listed.len() == 432 && disagreements == 0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(6, "Monk-1 truth table", outcome);
}

#[test]
fn c07_metric_oracles() {
    let outcome = (|| -> Result<String, String> {
        let mut rng = seeded(21);
        let mut mismatches = 0;
        for _ in 0..100 {
            let n = rng.gen_range(2..=200);
            let levels = rng.gen_range(2..=50);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.4)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let (mut doubled, mut pos, mut neg) = (0u64, 0u64, 0u64);
            for i in 0..n {
                if labels[i] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        if scores[i] > scores[j] {
                            doubled += 2;
                        } else if scores[i] == scores[j] {
                            doubled += 1;
                        }
                    }
                }
            }
            let brute = (doubled as f64 / 2.0) / (pos as f64 * neg as f64);
            if auroc(&scores, &labels).map_err(|e| e.to_string())? != brute {
                mismatches += 1;
            }
        }
        let mut rng = seeded(22);
        let n = 100_000;
        let mut probs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let p = sigmoid(1.5 * rng.sample::<f64, _>(StandardNormal) - 0.5);
            probs.push(p);
            labels.push(u8::from(rng.gen::<f64>() < p));
        }
        let (intercept, slope) = calibration_fit(&probs, &labels).map_err(|e| e.to_string())?;
        let detail = format!(
            "AUROC brute-force mismatches {mismatches}/100; calibration intercept {intercept:.4}, slope {slope:.4}"
        );
        if mismatches == 0 && (slope - 1.0).abs() <= 0.05 && intercept.abs() <= 0.05 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(7, "metric oracles", outcome);
}

#[test]
fn c08_diagonal_dominance() {
    let outcome = (|| -> Result<String, String> {
        let mut parts = Vec::new();
        let mut ok = true;
        for n in [2usize, 5, 100] {
            let ones: Matrix<f64> = Matrix::from_fn(n, n, |_, _| 1.0);
            let got = diagonal_dominance(&ones).map_err(|e| e.to_string())?;
            let want = n as f64 / (n as f64 - 1.0);
            ok &= got == want;
            parts.push(format!("n={n}: {got}"));
        }
        if ok {
            Ok(parts.join(", "))
        } else {
            Err(parts.join(", "))
        }
    })();
    verdict(8, "diagonal dominance", outcome);
}

#[test]
fn c09_determinism_and_leakage() {
    let outcome = (|| -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut plan = scenario_plan(2, 5);
        let log = Mutex::new(Vec::new());
        let first = run_experiment_audited::<f64>(&plan, Some(&log)).map_err(|e| e.to_string())?;
        plan.parallelism = 1;
        let second = run_experiment_audited::<f64>(&plan, None).map_err(|e| e.to_string())?;
        let a = first.write(&dir.path().join("a")).map_err(|e| e.to_string())?;
        let b = second.write(&dir.path().join("b")).map_err(|e| e.to_string())?;
        let mut differing = Vec::new();
        for (pa, pb) in a.iter().zip(&b) {
            // wall-clock timings are the only run-dependent table
            if pa.file_name().is_some_and(|f| f == "timings.csv") {
                continue;
            }
            if std::fs::read(pa).map_err(|e| e.to_string())? != std::fs::read(pb).map_err(|e| e.to_string())? {
                differing.push(pa.display().to_string());
            }
        }
        if a.len() != b.len() {
            differing.push("file lists differ".into());
        }

        let audit = log.into_inner().unwrap();
        let mut leaks = 0;
        for entry in &audit {
            let test: BTreeSet<&str> = first.splits.outer_test(entry.fold).iter().map(|&i| first.splits.ids[i].as_str()).collect();
            let touched = entry.train_ids.iter().chain(&entry.kernel_fit_ids);
            let scored = entry.eval_ids.iter().filter(|_| entry.stage == FitStage::Inner);
            leaks += touched.chain(scored).filter(|id| test.contains(id.as_str())).count();
        }
        let inner = audit.iter().filter(|e| e.stage == FitStage::Inner).count();
        let detail = format!(
            "{} files compared, {} differ; {} audited fits ({inner} inner), {leaks} outer-test ids seen by inner or training stages",
            a.len() - 1,
            differing.len(),
            audit.len()
        );
        if differing.is_empty() && leaks == 0 && inner > 0 {
            Ok(detail)
        } else {
            Err(format!("{detail}: {}", differing.join(", ")))
        }
    })();
    verdict(9, "harness determinism and leakage", outcome);
}

#[test]
fn c10_sequential_stage_identity() {
    let outcome = (|| -> Result<String, String> {
        let config = SolverConfig::default();
        let mut identical = 0;
        for seed in 0..10u64 {
            let table = random_table(80 + 10 * seed as usize, 3, 500 + seed);
            let spec = rbf_uv_spec();
            let fk = FittedKernel::fit(&spec, &table).map_err(|e| e.to_string())?;
            let k = fk.operator(&table, &table).map_err(|e| e.to_string())?;
            let lr = fit(&ModelSpec::lr(), &table, None, &config).map_err(|e| e.to_string())?;
            let seq = fit(&ModelSpec::new(Variant::HfsmSeq, 0.01, Some(spec)), &table, Some(k.as_ref()), &config)
                .map_err(|e| e.to_string())?;
            let same = lr.beta.len() == seq.beta.len()
                && lr.beta.iter().zip(&seq.beta).all(|(a, b)| a.to_bits() == b.to_bits());
            identical += usize::from(same);
        }
        let detail = format!("{identical}/10 datasets with bitwise-identical first-stage β");
        if identical == 10 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    verdict(10, "sequential-stage identity", outcome);
}


fn rbf_uv_spec() -> KernelSpec {
    KernelSpec::new(KernelKind::Rbf { sigma: 1.0 }, InputSelector::Columns(vec!["u".into(), "v".into()]))
}
