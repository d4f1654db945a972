mod common;

use common::*;
use doptfact::criterion::*;
use doptfact::model::{build_design_matrix, DesignMatrix, Link, ModelSpec};
use doptfact::Error;
use proptest::prelude::*;
use rand::Rng;

fn rows(x: &DesignMatrix) -> Vec<Vec<f64>> {
    (0..x.n_rows()).map(|i| x.row(i).to_vec()).collect()
}

fn matrix(k: usize, effects: Vec<Vec<usize>>) -> DesignMatrix {
    build_design_matrix(&ModelSpec::new(k, effects, Link::Logit).unwrap())
}

#[test]
fn objective_matches_naive_determinant() {
    let mut r = rng(11);
    for k in 2..=4 {
        let x = matrix(k, main_effects(k));
        let xr = rows(&x);
        for _ in 0..20 {
            let w = random_weights(&mut r, x.n_rows());
            let p = random_simplex(&mut r, x.n_rows());
            let a = det_objective(&x, &w, &Allocation::new(p.clone()).unwrap()).unwrap();
            assert!(close(a, f(&xr, &w, &p), 1e-10));
            assert!(close(a, f_expansion(&xr, &w, &p), 1e-10));
        }
    }
}

#[test]
fn oracle_matches_expansion_with_interactions() {
    let mut r = rng(12);
    let x = matrix(3, vec![vec![], vec![1], vec![2], vec![3], vec![2, 3]]);
    let xr = rows(&x);
    for _ in 0..20 {
        let w = random_weights(&mut r, 8);
        let p = random_simplex(&mut r, 8);
        let a = det_oracle(&x, &w, &Allocation::new(p.clone()).unwrap()).unwrap();
        assert!(close(a, f_expansion(&xr, &w, &p), 1e-12));
    }
}

#[test]
fn oracle_refuses_beyond_cap() {
    let x = matrix(4, main_effects(4));
    let p = Allocation::uniform(16);
    let w = vec![0.1; 16];
    assert!(matches!(
        det_oracle_with_cap(&x, &w, &p, 100),
        Err(Error::OracleInfeasible { terms: 4368, cap: 100 })
    ));
}

#[test]
fn small_support_is_singular() {
    let x = matrix(3, main_effects(3));
    let p = Allocation::uniform_on(8, &[0, 1, 2]);
    assert_eq!(det_objective(&x, &[0.2; 8], &p).unwrap(), 0.0);
    let mut ev = Evaluator::new(&x, &[0.2; 8]).unwrap();
    assert_eq!(ev.log_f(p.as_slice()), f64::NEG_INFINITY);
}

#[test]
fn log_objective_survives_tiny_weights() {
    let x = matrix(4, main_effects(4));
    let w: Vec<f64> = (0..16).map(|i| 1e-60 * (1.0 + i as f64)).collect();
    let mut ev = Evaluator::new(&x, &w).unwrap();
    let l = ev.log_f(Allocation::uniform(16).as_slice());
    let scaled: Vec<f64> = w.iter().map(|v| v * 1e60).collect();
    let l2 = Evaluator::new(&x, &scaled).unwrap().log_f(Allocation::uniform(16).as_slice());
    assert!((l - (l2 - 5.0 * 60.0 * 10f64.ln())).abs() < 1e-9 * l.abs());
}

#[test]
fn lift_one_restriction_reproduces_the_path() {
    let mut r = rng(13);
    for k in [2, 3] {
        let x = matrix(k, main_effects(k));
        let xr = rows(&x);
        let n = x.n_rows();
        for _ in 0..10 {
            let w = random_weights(&mut r, n);
            let mut p = random_simplex(&mut r, n);
            p[0] = 0.0;
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            let alloc = Allocation::normalized(p.clone(), 1e-12).unwrap();
            let fp = f(&xr, &w, &p);
            for i in 0..n {
                let c = lift_one_restriction(&x, &w, &alloc, i).unwrap();
                for z in [0.0, 0.2, 0.5, 0.9] {
                    let scale = (1.0 - z) / (1.0 - p[i]);
                    let mut q: Vec<f64> = p.iter().map(|v| v * scale).collect();
                    q[i] = z;
                    let want = f(&xr, &w, &q);
                    assert!((c.eval(z) - want).abs() <= 1e-8 * fp, "i {i} z {z}: {} vs {want}", c.eval(z));
                }
                let (zs, fs) = maximize_lift_one(&c);
                assert!((0.0..1.0).contains(&zs));
                for t in 0..=200 {
                    let z = t as f64 / 200.0;
                    assert!(c.eval(z) <= fs * (1.0 + 1e-12));
                }
                assert!(c.a >= 0.0 && c.b >= 0.0);
            }
        }
    }
}

#[test]
fn exchange_restriction_reproduces_the_path() {
    let mut r = rng(14);
    let x = matrix(3, main_effects(3));
    let xr = rows(&x);
    for _ in 0..10 {
        let w = random_weights(&mut r, 8);
        let p = random_simplex(&mut r, 8);
        let alloc = Allocation::new(p.clone()).unwrap();
        let (i, j) = (r.random_range(0..8), r.random_range(0..8));
        if i == j {
            continue;
        }
        let c = exchange_restriction(&x, &w, (&alloc).into(), i, j)
            .unwrap()
            .unwrap();
        let e = p[i] + p[j];
        assert!(close(c.budget, e, 1e-12));
        for t in 0..=4 {
            let z = e * t as f64 / 4.0;
            let mut q = p.clone();
            q[i] = z;
            q[j] = e - z;
            assert!(close(c.eval(z), f(&xr, &w, &q), 1e-8));
        }
        let (zs, fs) = maximize_exchange_real(&c);
        assert!(zs >= 0.0 && zs <= e);
        for t in 0..=100 {
            assert!(c.eval(e * t as f64 / 100.0) <= fs * (1.0 + 1e-12));
        }
    }
}

#[test]
fn integer_exchange_restriction() {
    let x = matrix(2, main_effects(2));
    let xr = rows(&x);
    let w = [0.1, 0.2, 0.15, 0.05];
    let n = IntAllocation::new(vec![3, 1, 2, 4]).unwrap();
    let c = exchange_restriction(&x, &w, (&n).into(), 0, 3).unwrap().unwrap();
    let (m, best) = maximize_exchange_int(&c);
    let mut brute = (0, f64::NEG_INFINITY);
    for z in 0..=7u64 {
        let q = [z as f64, 1.0, 2.0, (7 - z) as f64];
        let v = f(&xr, &w, &q);
        if v > brute.1 + 1e-12 {
            brute = (z, v);
        }
    }
    assert_eq!(m, brute.0);
    assert!(close(best, brute.1, 1e-10));
}

#[test]
fn allocation_validation() {
    assert!(Allocation::new(vec![0.5, 0.6]).is_err());
    assert!(Allocation::new(vec![-0.1, 1.1]).is_err());
    assert!(Allocation::new(vec![]).is_err());
    assert!(Allocation::normalized(vec![0.5, 0.5 + 1e-9], 1e-6).is_ok());
    assert!(IntAllocation::new(vec![0, 0]).is_err());
    let n = IntAllocation::new(vec![1, 3]).unwrap();
    assert_eq!(n.proportions().as_slice(), &[0.25, 0.75]);
    let x = matrix(2, main_effects(2));
    assert!(matches!(
        det_objective(&x, &[0.1; 3], &Allocation::uniform(4)),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(Evaluator::new(&x, &[0.1, -0.1, 0.1, 0.1]).is_err());
}

#[test]
fn uniqueness_rank_for_main_effects() {
    // Schur products of 2^2 main effects: 1, A, B, AB span R^4.
    let x = matrix(2, main_effects(2));
    assert_eq!(uniqueness_rank(&x, &[0.1, 0.2, 0.15, 0.05]).unwrap(), (4, 0));
    // 2^3 main effects: unique for generic w, a line of optima when
    // w_1 = w_8 and the middle six agree.
    let x = matrix(3, main_effects(3));
    let generic = [0.1, 0.2, 0.15, 0.05, 0.2, 0.11, 0.12, 0.21];
    assert_eq!(uniqueness_rank(&x, &generic).unwrap(), (8, 0));
    let sym = [0.042, 0.119, 0.119, 0.119, 0.119, 0.119, 0.119, 0.042];
    assert_eq!(uniqueness_rank(&x, &sym).unwrap(), (7, 1));
}

#[test]
fn subset_enumeration() {
    assert_eq!(binomial(16, 5), 4368);
    assert_eq!(binomial(5, 0), 1);
    let mut seen = Vec::new();
    for_each_subset(5, 3, |s| seen.push(s.to_vec()));
    assert_eq!(seen, all_subsets(5, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_equals_expansion(
        k in 2usize..=3,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = matrix(k, main_effects(k));
        let w = random_weights(&mut r, x.n_rows());
        let p = random_simplex(&mut r, x.n_rows());
        let a = det_objective(&x, &w, &Allocation::new(p.clone()).unwrap()).unwrap();
        prop_assert!(close(a, f_expansion(&rows(&x), &w, &p), 1e-9));
    }

    #[test]
    fn objective_is_homogeneous_in_weights(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let x = matrix(3, main_effects(3));
        let w = random_weights(&mut r, 8);
        let p = Allocation::new(random_simplex(&mut r, 8)).unwrap();
        let cw: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = det_objective(&x, &w, &p).unwrap();
        let b = det_objective(&x, &cw, &p).unwrap();
        prop_assert!(close(b, a * c.powi(4), 1e-9));
    }
}
