mod common;

use common::*;
use doptfact::bayes::*;
use doptfact::criterion::Allocation;
use doptfact::model::{build_design_matrix, DesignMatrix, Link, ModelSpec};
use doptfact::optimize::{lift_one_modified, OptimizerConfig};
use proptest::prelude::*;
use rand::Rng;

fn rows(x: &DesignMatrix) -> Vec<Vec<f64>> {
    (0..x.n_rows()).map(|i| x.row(i).to_vec()).collect()
}

fn u(lo: f64, hi: f64) -> Prior {
    Prior::Uniform { lo, hi }
}

fn example_prior() -> PriorSpec {
    PriorSpec::new(vec![u(-3.0, 3.0), u(0.0, 3.0), u(0.0, 3.0), u(0.0, 3.0)]).unwrap()
}

fn setup(k: usize) -> (ModelSpec, DesignMatrix) {
    let spec = ModelSpec::main_effects(k, Link::Logit).unwrap();
    let x = build_design_matrix(&spec);
    (spec, x)
}

/// Plain Monte Carlo estimate of E nu(x_i' beta) with its standard error.
fn mc_expected_weights(
    xr: &[Vec<f64>],
    prior: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut s1 = vec![0.0; xr.len()];
    let mut s2 = vec![0.0; xr.len()];
    for _ in 0..n {
        let beta: Vec<f64> = prior.iter().map(|&(lo, hi)| r.random_range(lo..hi)).collect();
        for (i, row) in xr.iter().enumerate() {
            let v = nu_naive(Link::Logit, row.iter().zip(&beta).map(|(a, b)| a * b).sum());
            s1[i] += v;
            s2[i] += v * v;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / nf).collect();
    let se = s2
        .iter()
        .zip(&mean)
        .map(|(s, m)| ((s / nf - m * m) / nf).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn expected_weights_for_the_running_example() {
    let (spec, x) = setup(3);
    let ew = expected_weights(&spec, &x, &example_prior(), &QuadratureConfig::default()).unwrap();
    assert_eq!(ew.method, QuadMethod::TensorGauss);
    assert!(ew.max_error() < 1e-10);
    let v = &ew.values;
    assert!((v[0] - 0.0425).abs() < 5e-4 && (v[7] - v[0]).abs() < 1e-12);
    for i in 1..7 {
        assert!((v[i] - 0.1192).abs() < 5e-4, "{i}: {}", v[i]);
    }
    let prior = [(-3.0, 3.0), (0.0, 3.0), (0.0, 3.0), (0.0, 3.0)];
    let (mc, se) = mc_expected_weights(&rows(&x), &prior, 200_000, 31);
    for i in 0..8 {
        assert!((v[i] - mc[i]).abs() < 4.0 * se[i], "{i}: {} vs {}", v[i], mc[i]);
    }
}

#[test]
fn ew_design_for_the_running_example() {
    let (spec, x) = setup(3);
    let rep = ew_design(
        &spec,
        &x,
        &example_prior(),
        &QuadratureConfig::default(),
        &OptimizerConfig::default(),
    )
    .unwrap();
    let p = rep.proportions();
    assert!(p.as_slice()[0] < 1e-6 && p.as_slice()[7] < 1e-6);
    for i in 1..7 {
        assert!((p.as_slice()[i] - 1.0 / 6.0).abs() < 1e-4);
    }
}

#[test]
fn tensor_and_quasi_monte_carlo_agree() {
    let (spec, x) = setup(4);
    let prior = PriorSpec::new(vec![u(-1.0, 1.0); 5]).unwrap();
    let tensor = QuadratureConfig {
        method: QuadMethod::TensorGauss,
        nodes_per_dim: 12,
        ..QuadratureConfig::default()
    };
    let qmc = QuadratureConfig {
        method: QuadMethod::MonteCarlo,
        samples: 20_000,
        seed: 3,
        ..QuadratureConfig::default()
    };
    let a = expected_weights(&spec, &x, &prior, &tensor).unwrap();
    let b = expected_weights(&spec, &x, &prior, &qmc).unwrap();
    assert_eq!(b.method, QuadMethod::MonteCarlo);
    for i in 0..16 {
        assert!((a.values[i] - b.values[i]).abs() < 5.0 * b.error[i] + 1e-6);
    }
    // auto switches to sampling above five coefficients
    let auto = QuadratureConfig::default();
    assert_eq!(auto.resolve(5), QuadMethod::TensorGauss);
    assert_eq!(auto.resolve(6), QuadMethod::MonteCarlo);
}

#[test]
fn normal_priors_use_hermite_nodes() {
    let (spec, x) = setup(2);
    let prior = PriorSpec::new(vec![Prior::Normal { mean: 0.5, sd: 1.0 }; 3]).unwrap();
    let ew = expected_weights(&spec, &x, &prior, &QuadratureConfig::default()).unwrap();
    // x_i' beta ~ N(0.5 * sum x_i, 3)
    let mut r = rng(32);
    for (i, row) in rows(&x).iter().enumerate() {
        let m: f64 = 0.5 * row.iter().sum::<f64>();
        let n = 200_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let z: f64 = r.sample(rand_distr::StandardNormal);
            let v = nu_naive(Link::Logit, m + 3f64.sqrt() * z);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((ew.values[i] - mean).abs() < 4.0 * se);
    }
}

#[test]
fn point_prior_recovers_the_local_design() {
    let (spec, x) = setup(3);
    let beta = [0.3, -1.0, 0.8, 1.5];
    let sample = FrozenSample::point(&spec, &x, &beta).unwrap();
    let bayes = bayes_design(&x, &sample, &OptimizerConfig::default()).unwrap();
    let local = lift_one_modified(&x, &sample.weights[0], &OptimizerConfig::default()).unwrap();
    assert!(bayes.converged);
    assert!((bayes.log_objective - local.log_objective).abs() < 1e-6);
}

/// sum_s pi_s w_si x_i' M_s^-1 x_i for every i.
fn bayes_gradient(xr: &[Vec<f64>], sample: &FrozenSample, p: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; xr.len()];
    for (w, pr) in sample.weights.iter().zip(&sample.probs) {
        let mi = inverse(&info(xr, w, p));
        for (i, row) in xr.iter().enumerate() {
            let mut q = 0.0;
            for a in 0..row.len() {
                for b in 0..row.len() {
                    q += row[a] * mi[a][b] * row[b];
                }
            }
            g[i] += pr * w[i] * q;
        }
    }
    g
}

#[test]
fn bayes_design_meets_the_gradient_bound() {
    for (k, prior, seed) in [
        (2, vec![u(-3.0, 3.0), u(0.0, 2.0), u(-1.0, 1.0)], 1),
        (3, vec![u(-3.0, 3.0), u(0.0, 3.0), u(0.0, 3.0), u(0.0, 3.0)], 2),
    ] {
        let (spec, x) = setup(k);
        let sample =
            FrozenSample::monte_carlo(&spec, &x, &PriorSpec::new(prior).unwrap(), 200, seed).unwrap();
        let rep = bayes_design(&x, &sample, &OptimizerConfig::default()).unwrap();
        assert!(rep.converged);
        let p = rep.proportions();
        let xr = rows(&x);
        let g = bayes_gradient(&xr, &sample, p.as_slice());
        let gap = g.iter().copied().fold(f64::NEG_INFINITY, f64::max) - (k as f64 + 1.0);
        assert!(gap < 1e-4, "k {k}: gap {gap}");
        let phi: f64 = sample
            .weights
            .iter()
            .zip(&sample.probs)
            .map(|(w, pr)| pr * f(&xr, w, p.as_slice()).ln())
            .sum();
        assert!(close(phi, rep.log_objective, 1e-10));
        let uniform = bayes_objective(&x, &sample, &Allocation::uniform(x.n_rows())).unwrap();
        assert!(rep.log_objective >= uniform);
    }
}

#[test]
fn frozen_sample_is_seeded() {
    let (spec, x) = setup(2);
    let prior = PriorSpec::new(vec![u(-1.0, 1.0); 3]).unwrap();
    let a = FrozenSample::monte_carlo(&spec, &x, &prior, 50, 9).unwrap();
    let b = FrozenSample::monte_carlo(&spec, &x, &prior, 50, 9).unwrap();
    let c = FrozenSample::monte_carlo(&spec, &x, &prior, 50, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.betas, c.betas);
    assert!(FrozenSample::monte_carlo(&spec, &x, &prior, 0, 9).is_err());
    let t = FrozenSample::from_config(
        &spec,
        &x,
        &prior,
        &QuadratureConfig {
            nodes_per_dim: 4,
            ..QuadratureConfig::default()
        },
    )
    .unwrap();
    assert_eq!(t.len(), 64);
    assert!(close(t.probs.iter().sum::<f64>(), 1.0, 1e-12));
}

#[test]
fn singular_designs_have_minus_infinite_phi() {
    let (spec, x) = setup(3);
    let sample = FrozenSample::monte_carlo(&spec, &x, &example_prior(), 10, 0).unwrap();
    let p = Allocation::uniform_on(8, &[0, 3, 5]);
    assert_eq!(bayes_objective(&x, &sample, &p).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn efficiency_report() {
    assert_eq!(relative_efficiency(1.7, 1.7, 3), 1.0);
    assert!(close(relative_efficiency(0.0, -4.0, 3), 1f64.exp(), 1e-15));
    let mut m = std::collections::BTreeMap::new();
    m.insert("a".to_string(), -1.0);
    m.insert("b".to_string(), -1.4);
    let r = EfficiencyReport::new(m.clone(), "b", "a", 3).unwrap();
    assert!(close(r.relative_efficiency, (-0.1f64).exp(), 1e-15));
    assert_eq!(r.d_plus_1, 4);
    assert!(EfficiencyReport::new(m, "c", "a", 3).is_err());
}

#[test]
fn prior_parsing() {
    let p: Prior = serde_json::from_str(r#"{"dist":"uniform","lo":-1,"hi":2}"#).unwrap();
    assert_eq!(p, u(-1.0, 2.0));
    let n: Prior = serde_json::from_str(r#"{"dist":"normal","mean":0,"sd":2}"#).unwrap();
    assert_eq!(n.mean(), 0.0);
    assert!(serde_json::from_str::<Prior>(r#"{"dist":"uniform","lo":0,"hi":1,"x":3}"#).is_err());
    assert!(serde_json::from_str::<Prior>(r#"{"dist":"cauchy","loc":0}"#).is_err());
    assert!(PriorSpec::new(vec![u(1.0, 0.0)]).is_err());
    assert!(PriorSpec::new(vec![Prior::Normal { mean: 0.0, sd: 0.0 }]).is_err());
    assert!(PriorSpec::new(vec![]).is_err());
    let (spec, x) = setup(2);
    let short = PriorSpec::new(vec![u(0.0, 1.0); 2]).unwrap();
    assert!(expected_weights(&spec, &x, &short, &QuadratureConfig::default()).is_err());
}

#[test]
fn oversized_tensor_rule_is_refused() {
    let (spec, x) = setup(6);
    let prior = PriorSpec::new(vec![u(-1.0, 1.0); 7]).unwrap();
    let q = QuadratureConfig {
        method: QuadMethod::TensorGauss,
        ..QuadratureConfig::default()
    };
    assert!(expected_weights(&spec, &x, &prior, &q).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // log det is concave in M, and M is linear in w.
    #[test]
    fn jensen_bound(seed in any::<u64>()) {
        let (spec, x) = setup(3);
        let mut r = rng(seed);
        let sample = FrozenSample::monte_carlo(&spec, &x, &example_prior(), 40, seed).unwrap();
        let p = Allocation::new(random_simplex(&mut r, 8)).unwrap();
        let phi = bayes_objective(&x, &sample, &p).unwrap();
        let mean = sample.mean_weights();
        let at_mean = f(&rows(&x), &mean, p.as_slice()).ln();
        prop_assert!(phi <= at_mean + 1e-10);
    }

    #[test]
    fn expected_weights_stay_below_the_maximum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (spec, x) = setup(2);
        let priors: Vec<Prior> = (0..3)
            .map(|_| {
                let lo = r.random_range(-3.0..2.0);
                u(lo, lo + r.random_range(0.1..3.0))
            })
            .collect();
        let ew = expected_weights(&spec, &x, &PriorSpec::new(priors).unwrap(), &QuadratureConfig::default()).unwrap();
        for v in ew.values {
            prop_assert!(v > 0.0 && v <= 0.25);
        }
    }
}
