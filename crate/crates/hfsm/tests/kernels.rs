use std::collections::BTreeSet;

use hfsm::data::{CodeSet, ObservationTable};
use hfsm::kernels::{
    diagonal_dominance, gower_similarity, jaccard, jcr, prevalence_weights, rbf_kernel, Coding, CodeWeights,
    FittedKernel, InputSelector, KernelKind, KernelOperator, KernelSpec, PrevalenceWeights,
};
use hfsm::{Error, Matrix};
use proptest::prelude::*;

const UNIVERSE: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn code_set() -> impl Strategy<Value = CodeSet> {
    proptest::collection::btree_set(proptest::sample::select(UNIVERSE.to_vec()), 0..=6)
        .prop_map(|s| s.into_iter().map(String::from).collect())
}

fn weights_from(training: &[CodeSet]) -> PrevalenceWeights {
    PrevalenceWeights::from_sets(training, 0.70, 0.30).unwrap()
}

fn set(codes: &[&str]) -> CodeSet {
    codes.iter().map(|c| c.to_string()).collect()
}

proptest! {
    #[test]
    fn set_kernels_are_symmetric_and_bounded(
        a in code_set(),
        b in code_set(),
        training in proptest::collection::vec(code_set(), 1..12),
    ) {
        let w = weights_from(&training);
        let j: f64 = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard::<f64>(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        let c: f64 = jcr(&a, &b, &w);
        prop_assert_eq!(c, jcr::<f64>(&b, &a, &w));
        prop_assert!((0.0..=2.0).contains(&c));
        prop_assert_eq!(jaccard::<f64>(&a, &a), 1.0);
    }

    #[test]
    fn rbf_is_symmetric_bounded_and_increasing_in_sigma(
        a in proptest::collection::vec(-3.0f64..3.0, 3),
        b in proptest::collection::vec(-3.0f64..3.0, 3),
        sigma in 0.1f64..5.0,
    ) {
        let k = rbf_kernel(&a, &b, sigma).unwrap();
        prop_assert_eq!(k, rbf_kernel(&b, &a, sigma).unwrap());
        prop_assert!((0.0..=1.0).contains(&k));
        let exponent: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (2.0 * sigma * sigma);
        // strict statements only where exp(-exponent) is representable and below 1
        if exponent < 700.0 {
            prop_assert!(k > 0.0);
            if exponent > 1e-12 {
                prop_assert!(rbf_kernel(&a, &b, sigma * 1.5).unwrap() > k);
            }
        }
    }

    #[test]
    fn adding_a_code_to_one_side_never_raises_jaccard(a in code_set(), b in code_set(), pick in 0usize..6) {
        let code = UNIVERSE[pick].to_string();
        prop_assume!(!a.contains(&code) && !b.contains(&code));
        let before: f64 = jaccard(&a, &b);
        let mut a2 = a.clone();
        a2.insert(code);
        prop_assert!(jaccard::<f64>(&a2, &b) <= before);
    }

    #[test]
    fn weights_ignore_test_rows(
        training in proptest::collection::vec(code_set(), 1..10),
        test in proptest::collection::vec(code_set(), 0..10),
    ) {
        let ids: Vec<String> = (0..training.len() + test.len()).map(|i| format!("r{i}")).collect();
        let all: Vec<CodeSet> = training.iter().chain(&test).cloned().collect();
        let n = all.len();
        let table: ObservationTable<f64> = ObservationTable::new(
            ids, vec![], Matrix::zeros(n, 0), vec![], Matrix::zeros(n, 0),
            vec!["dx".into()], vec![all], vec![0; n],
        ).unwrap();
        let train_idx: Vec<usize> = (0..training.len()).collect();
        let spec = KernelSpec::new(KernelKind::jcr_default(), InputSelector::Codes(vec!["dx".into()]));
        let from_slice = prevalence_weights(&table.subset(&train_idx), &spec).unwrap();
        prop_assert_eq!(from_slice, weights_from(&training));
    }
}

/// Shared absence of a common code scores at least as high as shared presence.
#[test]
fn common_absence_beats_common_presence_exhaustively() {
    let codes = ["c1", "c2", "r1", "r2"];
    // c1, c2 common (8/10); r1, r2 rare (1/10)
    let training: Vec<CodeSet> = (0..10)
        .map(|i| {
            let mut s = CodeSet::new();
            if i < 8 {
                s.insert("c1".into());
                s.insert("c2".into());
            }
            if i == 8 {
                s.insert("r1".into());
            }
            if i == 9 {
                s.insert("r2".into());
            }
            s
        })
        .collect();
    let w = weights_from(&training);
    assert_eq!(w.common_codes(), BTreeSet::from(["c1", "c2"]));
    assert_eq!(w.rare_codes(), BTreeSet::from(["r1", "r2"]));
    let subsets: Vec<CodeSet> = (0..16u32)
        .map(|m| codes.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, c)| c.to_string()).collect())
        .collect();
    let mut checked = 0;
    for a in &subsets {
        for b in &subsets {
            for common in ["c1", "c2"] {
                if a.contains(common) || b.contains(common) {
                    continue;
                }
                let (mut a2, mut b2) = (a.clone(), b.clone());
                a2.insert(common.into());
                b2.insert(common.into());
                assert!(jcr::<f64>(a, b, &w) >= jcr::<f64>(&a2, &b2, &w), "{a:?} {b:?} {common}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn gower_examples() {
    let w = CodeWeights::uniform(["lab", "dx", "tx"]);
    let v: f64 = gower_similarity(&set(&["lab", "dx", "tx"]), &set(&["lab", "dx"]), &w, Coding::Presence);
    assert!((v - 2.0 / 3.0).abs() < 1e-15);
    let zero = CodeWeights::default();
    assert_eq!(gower_similarity::<f64>(&set(&["a"]), &set(&["a"]), &zero, Coding::Presence), 0.0);
    let com = CodeWeights::uniform(["Com"]);
    assert_eq!(gower_similarity::<f64>(&set(&["Com"]), &set(&["Com"]), &com, Coding::Absence), 0.0);
}

#[test]
fn rbf_examples() {
    let e = rbf_kernel(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
    assert!((e - (-1.0f64).exp()).abs() < 1e-15);
    assert!(rbf_kernel(&[1.0, 0.0], &[0.0, 1.0], 0.01).unwrap() < 1e-300);
    assert!(matches!(rbf_kernel(&[1.0], &[1.0, 2.0], 1.0), Err(Error::Dimension(_))));
}

#[test]
fn prevalence_thresholds() {
    let training: Vec<CodeSet> = (0..10)
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
    let w = weights_from(&training);
    assert_eq!(w.common.weight("seven"), 1.0);
    assert_eq!(w.rare.weight("three"), 0.0);
    assert_eq!(w.common.weight("five") + w.rare.weight("five"), 0.0);
    assert!(matches!(PrevalenceWeights::from_sets(&[], 0.7, 0.3), Err(Error::Config(_))));
}

#[test]
fn dominance_examples() {
    let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
    assert_eq!(diagonal_dominance(&m).unwrap(), 4.0);
    let id: Matrix<f64> = Matrix::identity(3);
    assert!(matches!(diagonal_dominance(&id), Err(Error::ZeroOffDiagonal { .. })));
}

fn table_with_codes(sets: Vec<CodeSet>) -> ObservationTable<f64> {
    let n = sets.len();
    ObservationTable::new(
        (0..n).map(|i| format!("c{i}")).collect(),
        vec![],
        Matrix::zeros(n, 0),
        vec![],
        Matrix::zeros(n, 0),
        vec!["dx".into()],
        vec![sets],
        vec![0; n],
    )
    .unwrap()
}

#[test]
fn dense_and_grouped_blocks_agree() {
    let train = table_with_codes(vec![set(&["a"]), set(&["a", "b"]), set(&["a"]), set(&[]), set(&["b", "c"])]);
    let rows = table_with_codes(vec![set(&["a"]), set(&["z"]), set(&[])]);
    for kind in [KernelKind::Jaccard, KernelKind::jcr_default()] {
        let spec = KernelSpec::new(kind, InputSelector::Codes(vec!["dx".into()]));
        let fk = FittedKernel::fit(&spec, &train).unwrap();
        for r in [&train, &rows] {
            let dense = fk.matrix(r, &train).unwrap();
            let grouped = fk.grouped(r, &train).unwrap().to_dense(&spec);
            assert_eq!(dense, grouped);
            let x = [0.3, -1.0, 2.0, 0.5, 1.5];
            let mut a = vec![0.0; r.len()];
            let mut b = vec![0.0; r.len()];
            dense.mul_vec_into(&x, &mut a);
            fk.operator(r, &train).unwrap().mul_vec_into(&x, &mut b);
            // pooled sums reorder the additions
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        if let KernelKind::Jaccard = spec.kind {
            assert!(fk.matrix(&train, &train).unwrap().values.is_symmetric());
        }
    }
}

#[test]
fn unseen_codes_only_enlarge_unions() {
    let train = table_with_codes(vec![set(&["a", "b"]), set(&["b"])]);
    let spec = KernelSpec::new(KernelKind::Jaccard, InputSelector::Codes(vec!["dx".into()]));
    let fk = FittedKernel::fit(&spec, &train).unwrap();
    let rows = table_with_codes(vec![set(&["a", "new"])]);
    let k = fk.matrix(&rows, &train).unwrap();
    assert!((k.values.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(k.values.get(0, 1), 0.0);
}

#[test]
fn factored_linear_matches_dense() {
    let n = 4;
    let table: ObservationTable<f64> = ObservationTable::new(
        (0..n).map(|i| format!("r{i}")).collect(),
        vec!["x".into(), "z".into()],
        Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0], vec![2.0, 2.0]]).unwrap(),
        vec![],
        Matrix::zeros(n, 0),
        vec![],
        vec![],
        vec![0, 1, 0, 1],
    )
    .unwrap();
    let spec = KernelSpec::new(KernelKind::Linear, InputSelector::Columns(vec!["x".into(), "z".into()]));
    let fk = FittedKernel::fit(&spec, &table).unwrap();
    let dense = fk.matrix(&table, &table).unwrap();
    let op = fk.operator(&table, &table).unwrap();
    let x = [1.0, -2.0, 0.5, 0.25];
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    dense.tr_mul_vec_into(&x, &mut a);
    op.tr_mul_vec_into(&x, &mut b);
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}
