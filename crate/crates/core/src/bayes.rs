//! Priors on the coefficients, expected weights, the EW design, and the
//! Bayes criterion E log|X'WX| on a frozen sample.

use crate::criterion::{lift_one_coeffs, lift_path, Allocation, Evaluator};
use crate::error::{check_len, Error, Result};
use crate::model::{nu, weights, DesignMatrix, Link, ModelSpec};
use crate::optimize::{
    lift_one_modified, DesignAllocation, DesignReport, OptimizerConfig, Start,
};
use crate::quadrature::{gauss_hermite, gauss_legendre, shifted_halton};
use crate::rng::{derive_seed, rng_for};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;

/// Marginal prior of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidArgument(format!(
                        "uniform prior needs finite lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            Prior::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "normal prior needs finite mean and sd > 0, got ({mean}, {sd})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::Normal { mean, .. } => mean,
        }
    }

    /// Inverse CDF at u in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => lo + u * (hi - lo),
            Prior::Normal { mean, sd } => {
                mean + sd * Normal::standard().inverse_cdf(u)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => rng.random_range(lo..hi),
            Prior::Normal { mean, sd } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + sd * z
            }
        }
    }

    /// n-point Gauss rule for this marginal, probabilities summing to 1.
    fn rule(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Prior::Uniform { lo, hi } => {
                let r = gauss_legendre(n);
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                (
                    r.nodes.iter().map(|x| mid + half * x).collect(),
                    r.weights.iter().map(|w| 0.5 * w).collect(),
                )
            }
            Prior::Normal { mean, sd } => {
                let r = gauss_hermite(n);
                (r.nodes.iter().map(|x| mean + sd * x).collect(), r.weights)
            }
        }
    }
}

/// Independent priors, one per model coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorSpec(Vec<Prior>);

impl PriorSpec {
    pub fn new(priors: Vec<Prior>) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::InvalidArgument("prior list is empty".into()));
        }
        for p in &priors {
            p.validate()?;
        }
        Ok(PriorSpec(priors))
    }

    pub fn priors(&self) -> &[Prior] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn mean(&self) -> Vec<f64> {
        self.0.iter().map(Prior::mean).collect()
    }
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.0.iter().map(|p| p.sample(rng)).collect()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        check_len("prior", spec.n_params(), self.0.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadMethod {
    /// Tensor Gauss when there are at most 5 coefficients, else Monte Carlo.
    Auto,
    TensorGauss,
    /// Randomly shifted Halton points.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub method: QuadMethod,
    pub nodes_per_dim: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            method: QuadMethod::Auto,
            nodes_per_dim: 32,
            samples: 10_000,
            seed: 0,
        }
    }
}

/// Tensor rules beyond this many nodes are refused.
pub const TENSOR_NODE_CAP: f64 = 2e8;
const QMC_REPLICATES: usize = 10;
const AUTO_TENSOR_DIM: usize = 5;

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 2 {
            return Err(Error::InvalidArgument("nodes_per_dim must be at least 2".into()));
        }
        if self.samples < 100 {
            return Err(Error::InvalidArgument("samples must be at least 100".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, dim: usize) -> QuadMethod {
        match self.method {
            QuadMethod::Auto if dim <= AUTO_TENSOR_DIM => QuadMethod::TensorGauss,
            QuadMethod::Auto => QuadMethod::MonteCarlo,
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedWeights {
    pub values: Vec<f64>,
    /// Per-point error estimate: |rule(N) - rule(N/2)| for tensor rules,
    /// the standard error over shifted replicates for Monte Carlo.
    pub error: Vec<f64>,
    pub method: QuadMethod,
    pub evaluations: usize,
}

impl ExpectedWeights {
    pub fn max_error(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }
}

fn tensor_row(link: Link, coef: &[f64], rules: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    fn rec(link: Link, j: usize, eta: f64, coef: &[f64], rules: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let (nodes, probs) = &rules[j];
        let c = coef[j];
        let mut s = 0.0;
        if j + 1 == rules.len() {
            for (b, v) in nodes.iter().zip(probs) {
                s += v * nu(link, eta + c * b);
            }
        } else {
            for (b, v) in nodes.iter().zip(probs) {
                s += v * rec(link, j + 1, eta + c * b, coef, rules);
            }
        }
        s
    }
    rec(link, 0, 0.0, coef, rules)
}

/// E(w_i) = E nu(x_i' beta) for every design point.
pub fn expected_weights(
    spec: &ModelSpec,
    x: &DesignMatrix,
    prior: &PriorSpec,
    q: &QuadratureConfig,
) -> Result<ExpectedWeights> {
    prior.check(spec)?;
    check_len("design matrix columns", spec.n_params(), x.n_cols())?;
    q.validate()?;
    let dim = prior.len();
    let link = spec.link();
    match q.resolve(dim) {
        QuadMethod::TensorGauss => {
            let n = q.nodes_per_dim;
            let total = (n as f64).powi(dim as i32);
            if total > TENSOR_NODE_CAP {
                return Err(Error::InvalidArgument(format!(
                    "tensor rule with {n}^{dim} nodes exceeds the cap; use monte_carlo"
                )));
            }
            let fine: Vec<_> = prior.priors().iter().map(|p| p.rule(n)).collect();
            let coarse: Vec<_> = prior
                .priors()
                .iter()
                .map(|p| p.rule((n / 2).max(1)))
                .collect();
            let rows: Vec<(f64, f64)> = (0..x.n_rows())
                .into_par_iter()
                .map(|i| {
                    let r = x.row(i);
                    (tensor_row(link, r, &fine), tensor_row(link, r, &coarse))
                })
                .collect();
            Ok(ExpectedWeights {
                values: rows.iter().map(|r| r.0).collect(),
                error: rows.iter().map(|r| (r.0 - r.1).abs()).collect(),
                method: QuadMethod::TensorGauss,
                evaluations: total as usize,
            })
        }
        _ => {
            let per = q.samples.div_ceil(QMC_REPLICATES);
            let reps: Vec<Vec<f64>> = (0..QMC_REPLICATES)
                .into_par_iter()
                .map(|r| {
                    let pts = shifted_halton(per, dim, derive_seed(q.seed, "ew-qmc", r as u64))?;
                    let mut acc = vec![0.0; x.n_rows()];
                    let mut beta = vec![0.0; dim];
                    for u in &pts {
                        for (j, p) in prior.priors().iter().enumerate() {
                            beta[j] = p.quantile(u[j]);
                        }
                        for (i, a) in acc.iter_mut().enumerate() {
                            let eta: f64 = x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
                            *a += nu(link, eta);
                        }
                    }
                    Ok(acc.into_iter().map(|a| a / per as f64).collect())
                })
                .collect::<Result<_>>()?;
            let rn = QMC_REPLICATES as f64;
            let mut values = vec![0.0; x.n_rows()];
            let mut error = vec![0.0; x.n_rows()];
            for i in 0..x.n_rows() {
                let m = reps.iter().map(|r| r[i]).sum::<f64>() / rn;
                let v = reps.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (rn - 1.0);
                values[i] = m;
                error[i] = (v / rn).sqrt();
            }
            Ok(ExpectedWeights {
                values,
                error,
                method: QuadMethod::MonteCarlo,
                evaluations: per * QMC_REPLICATES,
            })
        }
    }
}

/// Locally D-optimal design for the expected weights.
pub fn ew_design(
    spec: &ModelSpec,
    x: &DesignMatrix,
    prior: &PriorSpec,
    q: &QuadratureConfig,
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    let ew = expected_weights(spec, x, prior, q)?;
    lift_one_modified(x, &ew.values, config)
}

/// A frozen set of coefficient vectors with probabilities summing to 1 and
/// their weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenSample {
    pub betas: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl FrozenSample {
    /// `n` independent draws from the prior, seeded.
    pub fn monte_carlo(
        spec: &ModelSpec,
        x: &DesignMatrix,
        prior: &PriorSpec,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        prior.check(spec)?;
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        let mut rng = rng_for(seed, "bayes-sample", 0);
        let betas: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&mut rng)).collect();
        Self::from_betas(spec, x, betas, vec![1.0 / n as f64; n])
    }

    /// Sample following a quadrature config: tensor nodes with product
    /// probabilities, or `samples` independent draws.
    pub fn from_config(
        spec: &ModelSpec,
        x: &DesignMatrix,
        prior: &PriorSpec,
        q: &QuadratureConfig,
    ) -> Result<Self> {
        prior.check(spec)?;
        q.validate()?;
        let dim = prior.len();
        match q.resolve(dim) {
            QuadMethod::TensorGauss => {
                let n = q.nodes_per_dim;
                let total = (n as f64).powi(dim as i32);
                if total > 1e6 {
                    return Err(Error::InvalidArgument(format!(
                        "tensor sample with {n}^{dim} nodes is too large for the Bayes criterion"
                    )));
                }
                let rules: Vec<_> = prior.priors().iter().map(|p| p.rule(n)).collect();
                let mut betas = Vec::new();
                let mut probs = Vec::new();
                let mut idx = vec![0usize; dim];
                loop {
                    betas.push((0..dim).map(|j| rules[j].0[idx[j]]).collect());
                    probs.push((0..dim).map(|j| rules[j].1[idx[j]]).product());
                    let mut j = dim;
                    loop {
                        if j == 0 {
                            return Self::from_betas(spec, x, betas, probs);
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] < n {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
            }
            _ => Self::monte_carlo(spec, x, prior, q.samples, q.seed),
        }
    }

    /// Degenerate sample at one coefficient vector.
    pub fn point(spec: &ModelSpec, x: &DesignMatrix, beta: &[f64]) -> Result<Self> {
        Self::from_betas(spec, x, vec![beta.to_vec()], vec![1.0])
    }

    pub fn from_betas(
        spec: &ModelSpec,
        x: &DesignMatrix,
        betas: Vec<Vec<f64>>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        check_len("sample probabilities", betas.len(), probs.len())?;
        let weights = betas
            .iter()
            .map(|b| weights(spec, x, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenSample {
            betas,
            probs,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability-weighted mean of the weight vectors.
    pub fn mean_weights(&self) -> Vec<f64> {
        let n = self.weights.first().map_or(0, Vec::len);
        let mut m = vec![0.0; n];
        for (w, pr) in self.weights.iter().zip(&self.probs) {
            for (a, b) in m.iter_mut().zip(w) {
                *a += pr * b;
            }
        }
        m
    }
}

/// phi(p) = sum_s pi_s log|X' W_s P X|; -inf when any sample is singular.
pub fn bayes_objective(x: &DesignMatrix, sample: &FrozenSample, p: &Allocation) -> Result<f64> {
    check_len("allocation", x.n_rows(), p.len())?;
    let Some(w0) = sample.weights.first() else {
        return Err(Error::InvalidArgument("empty sample".into()));
    };
    let mut ev = Evaluator::new(x, w0)?;
    let mut phi = 0.0;
    for (w, pr) in sample.weights.iter().zip(&sample.probs) {
        ev.set_weights(w)?;
        let l = ev.log_f(p.as_slice());
        if l == f64::NEG_INFINITY {
            return Ok(l);
        }
        phi += pr * l;
    }
    Ok(phi)
}

fn eval_sample<'a>(
    ev: &mut Evaluator<'a>,
    sample: &'a FrozenSample,
    p: &[f64],
    logs: &mut [f64],
) -> Result<f64> {
    let mut phi = 0.0;
    for (s, w) in sample.weights.iter().enumerate() {
        ev.set_weights(w)?;
        logs[s] = ev.log_f(p);
        phi += sample.probs[s] * logs[s];
    }
    Ok(phi)
}

const GOLDEN_ITERS: usize = 60;
/// Sweep gain, relative to max(1, |phi|), below which the Bayes ascent stops.
pub const BAYES_TOL: f64 = 1e-8;

/// Coordinate ascent on phi along lift-one paths. Each restriction
/// d log(1-z) + sum_s pi_s log(b_s + (a_s - b_s) z) is concave and is
/// maximized by golden section, with z = 0 checked separately.
pub fn bayes_design(
    x: &DesignMatrix,
    sample: &FrozenSample,
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    config.validate()?;
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let n = x.n_rows();
    let d = x.d() as f64;
    let mut p = match &config.start {
        Start::User(a) => {
            check_len("start allocation", n, a.len())?;
            a.as_slice().to_vec()
        }
        _ => vec![1.0 / n as f64; n],
    };
    let mut ev = Evaluator::new(x, &sample.weights[0])?;
    let mut logs = vec![0.0; sample.len()];
    let mut phi = eval_sample(&mut ev, sample, &p, &mut logs)?;
    if !phi.is_finite() {
        return Err(Error::NotEstimable);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scratch = Vec::new();
    let mut cand = Vec::new();
    let mut cand_logs = vec![0.0; sample.len()];
    let mut ab = vec![(0.0, 0.0); sample.len()];
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(phi);
    }
    let mut rounds = 0;
    let mut converged = false;
    while rounds < config.max_rounds {
        rounds += 1;
        let start = phi;
        order.shuffle(&mut rng);
        for &i in &order {
            if p[i] >= 1.0 {
                continue;
            }
            for (s, w) in sample.weights.iter().enumerate() {
                ev.set_weights(w)?;
                let c = lift_one_coeffs(&mut ev, &p, i, logs[s], &mut scratch)?;
                ab[s] = (c.a, c.b);
            }
            let h = |z: f64| -> f64 {
                let mut v = d * (1.0 - z).ln();
                for ((a, b), pr) in ab.iter().zip(&sample.probs) {
                    v += pr * (b + (a - b) * z).ln();
                }
                v
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut c1 = hi - g * (hi - lo);
            let mut c2 = lo + g * (hi - lo);
            let (mut h1, mut h2) = (h(c1), h(c2));
            for _ in 0..GOLDEN_ITERS {
                if h1 >= h2 {
                    hi = c2;
                    c2 = c1;
                    h2 = h1;
                    c1 = hi - g * (hi - lo);
                    h1 = h(c1);
                } else {
                    lo = c1;
                    c1 = c2;
                    h1 = h2;
                    c2 = lo + g * (hi - lo);
                    h2 = h(c2);
                }
            }
            let mut z = 0.5 * (lo + hi);
            let mut hz = h(z);
            let h0 = h(0.0);
            if h0 >= hz {
                z = 0.0;
                hz = h0;
            }
            let here = h(p[i]);
            if !(hz > here) || z == p[i] {
                continue;
            }
            lift_path(&p, i, z, &mut cand);
            let phi_c = eval_sample(&mut ev, sample, &cand, &mut cand_logs)?;
            if phi_c > phi {
                std::mem::swap(&mut p, &mut cand);
                std::mem::swap(&mut logs, &mut cand_logs);
                phi = phi_c;
                if config.record_trace {
                    trace.push(phi);
                }
            }
        }
        if phi - start <= BAYES_TOL * phi.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let alloc = Allocation::new(p)?;
    let phi = bayes_objective(x, sample, &alloc)?;
    Ok(DesignReport {
        support_size: alloc.support_size(),
        allocation: DesignAllocation::Real(alloc),
        objective: phi.exp(),
        log_objective: phi,
        rounds_used: rounds,
        converged,
        verification: None,
        trace,
    })
}

/// exp((phi1 - phi2)/(d+1)).
pub fn relative_efficiency(phi1: f64, phi2: f64, d: usize) -> f64 {
    ((phi1 - phi2) / (d as f64 + 1.0)).exp()
}

/// Bayes criterion values of named designs and the efficiency of one
/// against another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub phi_values: BTreeMap<String, f64>,
    pub design: String,
    pub reference: String,
    pub relative_efficiency: f64,
    pub d_plus_1: usize,
}

impl EfficiencyReport {
    pub fn new(
        phi_values: BTreeMap<String, f64>,
        design: &str,
        reference: &str,
        d: usize,
    ) -> Result<Self> {
        let get = |k: &str| {
            phi_values
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no design named {k}")))
        };
        let (a, b) = (get(design)?, get(reference)?);
        Ok(EfficiencyReport {
            relative_efficiency: relative_efficiency(a, b, d),
            phi_values,
            design: design.into(),
            reference: reference.into(),
            d_plus_1: d + 1,
        })
    }
}
