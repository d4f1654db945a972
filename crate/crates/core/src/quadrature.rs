//! Gauss rules from the Jacobi matrix eigenproblem and a shifted Halton
//! sequence for higher dimensions.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(n: usize, offdiag: impl Fn(usize) -> f64, mass: f64) -> Rule {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = offdiag(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // the rule is symmetric; enforce it exactly
    for i in 0..n / 2 {
        let (a, b) = (pairs[i], pairs[n - 1 - i]);
        let x = 0.5 * (b.0 - a.0);
        let w = 0.5 * (a.1 + b.1);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// n-point Gauss-Legendre rule on [-1, 1]; weights sum to 2.
pub fn gauss_legendre(n: usize) -> Rule {
    golub_welsch(
        n,
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        2.0,
    )
}

/// n-point Gauss-Hermite rule for the standard normal density; weights
/// sum to 1.
pub fn gauss_hermite(n: usize) -> Rule {
    golub_welsch(n, |k| (k as f64).sqrt(), 1.0)
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `n` points of the Halton sequence in `dim` dimensions (starting at index
/// 1), each coordinate shifted by a seeded uniform offset modulo 1.
pub fn shifted_halton(n: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim > PRIMES.len() {
        return Err(Error::InvalidArgument(format!(
            "Halton points support at most {} dimensions",
            PRIMES.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    Ok((1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let u = radical_inverse(i, PRIMES[j] as u64) + shift[j];
                    let u = u - u.floor();
                    // keep strictly inside (0, 1) for inverse CDFs
                    u.clamp(1e-16, 1.0 - 1e-16)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(5);
        for deg in 0..10 {
            let s: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(deg))
                .sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((s - exact).abs() < 1e-13, "deg {deg}: {s} vs {exact}");
        }
    }

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite(6);
        // E Z^{2m} = (2m-1)!!
        let mut df = 1.0;
        for m in 0..6 {
            if m > 0 {
                df *= (2 * m - 1) as f64;
            }
            let s: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(2 * m))
                .sum();
            assert!((s - df).abs() < 1e-10 * df, "m {m}: {s}");
        }
    }

    #[test]
    fn halton_base2_prefix() {
        let pts = shifted_halton(3, 1, 0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let s: f64 = rng.random();
        for (p, v) in pts.iter().zip([0.5, 0.25, 0.75]) {
            let e = (v + s) % 1.0;
            assert!((p[0] - e).abs() < 1e-15);
        }
    }
}
