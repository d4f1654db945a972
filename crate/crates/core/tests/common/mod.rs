//! Naive reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use doptfact::model::Link;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Full-factorial model matrix built from scratch: row r has factor j at -1
/// when bit (k - j) of r is set, columns are products over each effect.
pub fn model_matrix(k: usize, effects: &[Vec<usize>]) -> Vec<Vec<f64>> {
    (0..1usize << k)
        .map(|r| {
            effects
                .iter()
                .map(|e| {
                    e.iter()
                        .map(|&j| if (r >> (k - j)) & 1 == 1 { -1.0 } else { 1.0 })
                        .product()
                })
                .collect()
        })
        .collect()
}

pub fn main_effects(k: usize) -> Vec<Vec<usize>> {
    std::iter::once(vec![]).chain((1..=k).map(|j| vec![j])).collect()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= m * a[c][k];
            }
        }
    }
    d
}

pub fn info(x: &[Vec<f64>], w: &[f64], p: &[f64]) -> Vec<Vec<f64>> {
    let c = x[0].len();
    let mut m = vec![vec![0.0; c]; c];
    for (i, row) in x.iter().enumerate() {
        let s = w[i] * p[i];
        for a in 0..c {
            for b in 0..c {
                m[a][b] += s * row[a] * row[b];
            }
        }
    }
    m
}

pub fn f(x: &[Vec<f64>], w: &[f64], p: &[f64]) -> f64 {
    det(info(x, w, p))
}

fn subsets(n: usize, r: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == r {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        subsets(n, r, i + 1, cur, out);
        cur.pop();
    }
}

pub fn all_subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    subsets(n, r, 0, &mut Vec::new(), &mut out);
    out
}

pub fn minor(x: &[Vec<f64>], idx: &[usize]) -> f64 {
    det(idx.iter().map(|&i| x[i].clone()).collect())
}

/// Cauchy-Binet expansion of |X'WPX|.
pub fn f_expansion(x: &[Vec<f64>], w: &[f64], p: &[f64]) -> f64 {
    let c = x[0].len();
    all_subsets(x.len(), c)
        .iter()
        .map(|s| {
            let m = minor(x, s);
            m * m * s.iter().map(|&i| w[i] * p[i]).product::<f64>()
        })
        .sum()
}

/// Inverse by Gauss-Jordan.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(p, c);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Equivalence-theorem bound: log f(p*) - log f(p) <= max_i w_i x_i' M^-1 x_i - (d+1).
pub fn dual_gap(x: &[Vec<f64>], w: &[f64], p: &[f64]) -> f64 {
    let mi = inverse(&info(x, w, p));
    let c = x[0].len();
    let mut best = f64::NEG_INFINITY;
    for (i, row) in x.iter().enumerate() {
        let mut q = 0.0;
        for a in 0..c {
            for b in 0..c {
                q += row[a] * mi[a][b] * row[b];
            }
        }
        best = best.max(w[i] * q);
    }
    best - c as f64
}

fn phi(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Textbook nu = (dpi/deta)^2 / (pi (1 - pi)); fine for moderate |eta|.
pub fn nu_naive(link: Link, eta: f64) -> f64 {
    match link {
        Link::Logit => eta.exp() / (1.0 + eta.exp()).powi(2),
        Link::Probit => {
            let erfc = statrs::function::erf::erfc;
            let pi = 0.5 * erfc(-eta / 2f64.sqrt());
            let qi = 0.5 * erfc(eta / 2f64.sqrt());
            phi(eta).powi(2) / (pi * qi)
        }
        Link::Cloglog => {
            let qi = (-eta.exp()).exp();
            let pi = -(-eta.exp()).exp_m1();
            let dp = eta.exp() * qi;
            dp * dp / (pi * qi)
        }
        Link::Loglog => {
            let pi = (-(-eta).exp()).exp();
            let qi = -(-(-eta).exp()).exp_m1();
            let dp = (-eta).exp() * pi;
            dp * dp / (pi * qi)
        }
    }
}

pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.25)).collect()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
