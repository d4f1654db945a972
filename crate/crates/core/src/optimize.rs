//! Lift-one, modified lift-one and exchange optimizers, plus the optimality
//! checks used to certify their output.

use crate::criterion::{
    exchange_coeffs, lift_one_coeffs, lift_path, maximize_exchange_int,
    maximize_exchange_real, maximize_lift_one, subset_det, Allocation, Evaluator,
    IntAllocation,
};
use crate::error::{check_len, Error, Result};
use crate::model::DesignMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    LiftOne,
    LiftOneModified,
    ExchangeReal,
    ExchangeInt,
}

/// Starting allocation. `Uniform` spreads mass evenly over the points with
/// positive weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Uniform,
    RandomDirichlet,
    User(Allocation),
    UserCounts(IntAllocation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_rounds: usize,
    /// Relative objective gain over one sweep below which the run may stop.
    pub tol_rel: f64,
    /// Optimality residual (as reported by [`verify_optimal`]) a low-gain
    /// sweep must reach before the run stops.
    pub residual_tol: f64,
    pub seed: u64,
    pub mode: Mode,
    pub start: Start,
    /// Keep the objective after every accepted step.
    pub record_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_rounds: 10_000,
            tol_rel: 1e-10,
            residual_tol: 1e-9,
            seed: 0,
            mode: Mode::LiftOneModified,
            start: Start::Uniform,
            record_trace: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be at least 1".into()));
        }
        if !(self.tol_rel > 0.0) || !(self.residual_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum DesignAllocation {
    Real(Allocation),
    Integer(IntAllocation),
}

impl DesignAllocation {
    /// Proportions; integer counts are divided by their total.
    pub fn proportions(&self) -> Allocation {
        match self {
            DesignAllocation::Real(p) => p.clone(),
            DesignAllocation::Integer(n) => n.proportions(),
        }
    }
    pub fn support_size(&self) -> usize {
        match self {
            DesignAllocation::Real(p) => p.support_size(),
            DesignAllocation::Integer(n) => n.support_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTag {
    CaseIZeroOk,
    CaseIiInteriorOk,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub tags: Vec<ConditionTag>,
    /// Per-index violation relative to f(p); zero or negative when satisfied.
    pub violations: Vec<f64>,
    pub max_violation: f64,
    pub tol: f64,
    pub optimal: bool,
}

impl VerificationResult {
    pub fn violated_indices(&self) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| self.tags[i] == ConditionTag::Violated)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub allocation: DesignAllocation,
    /// f at the returned allocation (for integer designs, at the counts).
    pub objective: f64,
    pub log_objective: f64,
    pub rounds_used: usize,
    pub converged: bool,
    pub support_size: usize,
    pub verification: Option<VerificationResult>,
    /// log objective after every accepted step, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl DesignReport {
    pub fn proportions(&self) -> Allocation {
        self.allocation.proportions()
    }
}

/// Default tolerance of [`verify_optimal`].
pub const VERIFY_TOL: f64 = 1e-8;

/// Checks the first-order characterization at every index: a zero
/// coordinate needs f_i(1/2) <= (d+2)/2^{d+1} f(p); a positive one needs
/// p_i <= 1/(d+1) and f_i(0) = (1 - p_i(d+1))/(1 - p_i)^{d+1} f(p).
pub fn verify_optimal(
    x: &DesignMatrix,
    w: &[f64],
    p: &Allocation,
    tol: f64,
) -> Result<VerificationResult> {
    check_len("allocation", x.n_rows(), p.len())?;
    let mut ev = Evaluator::new(x, w)?;
    let p = p.as_slice();
    let log_f = ev.log_f(p);
    if log_f == f64::NEG_INFINITY {
        return Err(Error::CharacterizationInapplicable);
    }
    let mut scratch = Vec::new();
    let mut tags = Vec::with_capacity(p.len());
    let mut violations = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let v = residual(&mut ev, p, i, log_f, &mut scratch);
        tags.push(if v > tol {
            ConditionTag::Violated
        } else if p[i] == 0.0 {
            ConditionTag::CaseIZeroOk
        } else {
            ConditionTag::CaseIiInteriorOk
        });
        violations.push(v);
    }
    let max_violation = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(VerificationResult {
        optimal: tags.iter().all(|t| *t != ConditionTag::Violated),
        tags,
        violations,
        max_violation,
        tol,
    })
}

// Violation of the characterization at index i, relative to f(p).
fn residual(
    ev: &mut Evaluator<'_>,
    p: &[f64],
    i: usize,
    log_f: f64,
    scratch: &mut Vec<f64>,
) -> f64 {
    let d = ev.d() as i32;
    let dp1 = d as f64 + 1.0;
    let pi = p[i];
    if pi == 0.0 {
        lift_path(p, i, 0.5, scratch);
        let half = (ev.log_f(scratch) - log_f).exp();
        half - (dp1 + 1.0) / 2f64.powi(d + 1)
    } else if pi >= 1.0 {
        f64::INFINITY
    } else {
        lift_path(p, i, 0.0, scratch);
        let f0 = (ev.log_f(scratch) - log_f).exp();
        let target = (1.0 - pi * dp1) / (1.0 - pi).powi(d + 1);
        (f0 - target).abs().max(pi * dp1 - 1.0)
    }
}

fn max_residual(ev: &mut Evaluator<'_>, p: &[f64], log_f: f64, scratch: &mut Vec<f64>) -> f64 {
    let mut q = p.to_vec();
    renormalize(&mut q);
    (0..q.len())
        .map(|i| residual(ev, &q, i, log_f, scratch))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn integral_matrix(x: &DesignMatrix) -> bool {
    (0..x.n_rows()).all(|i| x.row(i).iter().all(|v| v.fract() == 0.0))
}

/// Whether the uniform design on the (d+1)-set `support` is D-optimal:
/// for every i outside it, sum_{j in I} |X[{i} u I \ {j}]|^2 / w_j must not
/// exceed |X[I]|^2 / w_i.
pub fn verify_minimally_supported(
    x: &DesignMatrix,
    w: &[f64],
    support: &[usize],
) -> Result<bool> {
    check_len("weight vector", x.n_rows(), w.len())?;
    check_len("support", x.n_cols(), support.len())?;
    let mut set = support.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() != support.len() || set.iter().any(|&i| i >= x.n_rows()) {
        return Err(Error::InvalidArgument(format!(
            "support {support:?} must hold distinct row indices"
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument(
            "all weights must be positive".into(),
        ));
    }
    // Integer matrices have integer minors; rounding removes LU noise.
    let exact = integral_matrix(x);
    let det = |idx: &[usize]| {
        let v = subset_det(x, idx);
        if exact {
            v.round()
        } else {
            v
        }
    };
    let base = det(&set);
    if base == 0.0 || base.abs() < 1e-12 {
        return Err(Error::SingularSupport);
    }
    let base2 = base * base;
    for i in (0..x.n_rows()).filter(|i| !set.contains(i)) {
        let mut lhs = 0.0;
        for (pos, &j) in set.iter().enumerate() {
            let mut idx = set.clone();
            idx[pos] = i;
            let dt = det(&idx);
            lhs += dt * dt / w[j];
        }
        if lhs > base2 / w[i] {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest-volume (d+1)-subset built greedily: repeatedly add the row whose
/// weighted residual after projection on the chosen rows is largest.
pub fn greedy_support(x: &DesignMatrix, w: &[f64]) -> Option<Vec<usize>> {
    let n = x.n_rows();
    let c = x.n_cols();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut chosen = Vec::new();
    for _ in 0..c {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for i in (0..n).filter(|i| !chosen.contains(i) && w[*i] > 0.0) {
            let mut r = x.row(i).to_vec();
            for b in &basis {
                let dot: f64 = r.iter().zip(b).map(|(u, v)| u * v).sum();
                r.iter_mut().zip(b).for_each(|(u, v)| *u -= dot * v);
            }
            let nrm2: f64 = r.iter().map(|v| v * v).sum();
            let score = w[i] * nrm2;
            if best.as_ref().map_or(true, |b| score > b.0) {
                best = Some((score, i, r));
            }
        }
        let (score, i, r) = best?;
        if score <= 1e-12 * w[i].max(1e-300) {
            return None;
        }
        let nrm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        basis.push(r.into_iter().map(|v| v / nrm).collect());
        chosen.push(i);
    }
    chosen.sort_unstable();
    Some(chosen)
}

fn dirichlet_start(w: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut p: Vec<f64> = w
        .iter()
        .map(|&wi| if wi > 0.0 { Exp1.sample(rng) } else { 0.0 })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn uniform_start(w: &[f64]) -> Vec<f64> {
    let m = w.iter().filter(|&&v| v > 0.0).count().max(1) as f64;
    w.iter().map(|&v| if v > 0.0 { 1.0 / m } else { 0.0 }).collect()
}

const MAX_RESTARTS: usize = 20;

/// Closed-form steps are accepted unless the recomputed log objective drops
/// by more than this times max(1, |log f|), which only happens through
/// roundoff.
pub const ACCEPT_SLACK: f64 = 1e-13;

fn accept(lc: f64, lf: f64) -> bool {
    lc >= lf - ACCEPT_SLACK * lf.abs().max(1.0)
}

fn real_start(
    ev: &mut Evaluator<'_>,
    config: &OptimizerConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<f64>, f64)> {
    let w = ev.w();
    let user = |p: Vec<f64>, ev: &mut Evaluator<'_>| {
        check_len("start allocation", w.len(), p.len())?;
        let l = ev.log_f(&p);
        if l > f64::NEG_INFINITY {
            Ok((p, l))
        } else {
            Err(Error::InvalidArgument(
                "user start allocation has a singular information matrix".into(),
            ))
        }
    };
    match &config.start {
        Start::User(p) => user(p.as_slice().to_vec(), ev),
        Start::UserCounts(n) => user(n.proportions().into_vec(), ev),
        Start::Uniform => {
            let p = uniform_start(w);
            let l = ev.log_f(&p);
            if l > f64::NEG_INFINITY {
                Ok((p, l))
            } else {
                Err(Error::NotEstimable)
            }
        }
        Start::RandomDirichlet => {
            for _ in 0..MAX_RESTARTS {
                let p = dirichlet_start(w, rng);
                let l = ev.log_f(&p);
                if l > f64::NEG_INFINITY {
                    return Ok((p, l));
                }
            }
            Err(Error::NotEstimable)
        }
    }
}

/// Weights rescaled so the largest is 1, and the factor removed.
fn normalize_weights(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = w.iter().copied().fold(0.0, f64::max);
    if !(m > 0.0) {
        return Err(Error::NotEstimable);
    }
    Ok((w.iter().map(|v| v / m).collect(), m))
}

fn renormalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
}

/// Line search along the net displacement of a sweep, t >= 1 from `prev`.
/// log f is concave along any line, so doubling then golden section finds
/// the best t in the feasible range. Returns true if `p` was replaced.
fn extrapolate(
    ev: &mut Evaluator<'_>,
    prev: &[f64],
    p: &mut Vec<f64>,
    lf: &mut f64,
    cand: &mut Vec<f64>,
) -> bool {
    let n = p.len();
    let dir: Vec<f64> = (0..n).map(|i| p[i] - prev[i]).collect();
    let mut t_max = f64::INFINITY;
    for i in 0..n {
        if dir[i] < 0.0 {
            t_max = t_max.min(prev[i] / -dir[i]);
        }
    }
    if !(t_max > 1.0) {
        return false;
    }
    let mut eval = |t: f64, cand: &mut Vec<f64>| -> f64 {
        cand.clear();
        cand.extend((0..n).map(|i| {
            if t >= t_max && dir[i] < 0.0 && prev[i] / -dir[i] <= t_max {
                0.0
            } else {
                (prev[i] + t * dir[i]).max(0.0)
            }
        }));
        renormalize(cand);
        ev.log_f(cand)
    };
    // bracket [lo, hi] around the best of 1, 2, 4, ...
    let (mut lo, mut mid, mut f_mid) = (1.0, 1.0, *lf);
    let hi;
    let mut t: f64 = 2.0;
    loop {
        let tt = t.min(t_max);
        let v = eval(tt, cand);
        if v > f_mid {
            lo = mid;
            mid = tt;
            f_mid = v;
            if tt >= t_max {
                hi = t_max;
                break;
            }
            t *= 2.0;
        } else {
            hi = tt;
            break;
        }
    }
    if mid == 1.0 {
        return false;
    }
    if hi > mid {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        for _ in 0..40 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if eval(c, cand) >= eval(d, cand) {
                b = d;
            } else {
                a = c;
            }
        }
        let tt = 0.5 * (a + b);
        let v = eval(tt, cand);
        if v > f_mid {
            mid = tt;
            f_mid = v;
        }
    }
    eval(mid, cand);
    std::mem::swap(p, cand);
    *lf = f_mid;
    true
}

struct Progress {
    rounds: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn lift_one_impl(
    x: &DesignMatrix,
    w: &[f64],
    config: &OptimizerConfig,
    modified: bool,
) -> Result<DesignReport> {
    config.validate()?;
    let (wn, scale) = normalize_weights(w)?;
    let mut ev = Evaluator::new(x, &wn)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (mut p, mut lf) = real_start(&mut ev, config, &mut rng)?;
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cand = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    let mut prev = Vec::with_capacity(n);
    let mut prog = Progress {
        rounds: 0,
        converged: false,
        trace: Vec::new(),
    };
    if config.record_trace {
        prog.trace.push(lf);
    }
    while prog.rounds < config.max_rounds {
        prog.rounds += 1;
        let l_start = lf;
        if modified && prog.rounds % 10 == 0 {
            let mut best: Option<(f64, usize, f64)> = None;
            for i in 0..n {
                if p[i] >= 1.0 {
                    continue;
                }
                let c = lift_one_coeffs(&mut ev, &p, i, lf, &mut scratch)?;
                let (z, v) = maximize_lift_one(&c);
                if best.map_or(true, |b| v > b.0) {
                    best = Some((v, i, z));
                }
            }
            if let Some((v, i, z)) = best {
                if v > 1.0 && z != p[i] {
                    lift_path(&p, i, z, &mut cand);
                    let lc = ev.log_f(&cand);
                    if accept(lc, lf) {
                        std::mem::swap(&mut p, &mut cand);
                        lf = lc;
                        if config.record_trace {
                            prog.trace.push(lf);
                        }
                    }
                }
            }
        } else {
            prev.clone_from(&p);
            order.shuffle(&mut rng);
            for &i in &order {
                if p[i] >= 1.0 {
                    continue;
                }
                let c = lift_one_coeffs(&mut ev, &p, i, lf, &mut scratch)?;
                let (z, _) = maximize_lift_one(&c);
                if z == p[i] {
                    continue;
                }
                lift_path(&p, i, z, &mut cand);
                let lc = ev.log_f(&cand);
                if accept(lc, lf) {
                                        std::mem::swap(&mut p, &mut cand);
                    lf = lc;
                    if config.record_trace {
                        prog.trace.push(lf);
                    }
                }
            }
            if lf > l_start && extrapolate(&mut ev, &prev, &mut p, &mut lf, &mut cand) {
                if config.record_trace {
                    prog.trace.push(lf);
                }
            }
        }
        let sweep = !(modified && prog.rounds % 10 == 0);
        if sweep
            && lf - l_start <= config.tol_rel
            && max_residual(&mut ev, &p, lf, &mut cand) <= config.residual_tol
        {
            prog.converged = true;
            break;
        }
    }
    finish_real(x, w, p, scale, prog)
}

fn finish_real(
    x: &DesignMatrix,
    w: &[f64],
    mut p: Vec<f64>,
    scale: f64,
    prog: Progress,
) -> Result<DesignReport> {
    renormalize(&mut p);
    let alloc = Allocation::from_vec_unchecked(p);
    let log_objective = Evaluator::new(x, w)?.log_f(alloc.as_slice());
    let verification = Some(verify_optimal(x, w, &alloc, VERIFY_TOL)?);
    let shift = x.n_cols() as f64 * scale.ln();
    Ok(DesignReport {
        support_size: alloc.support_size(),
        allocation: DesignAllocation::Real(alloc),
        objective: log_objective.exp(),
        log_objective,
        rounds_used: prog.rounds,
        converged: prog.converged,
        verification,
        trace: prog.trace.into_iter().map(|v| v + shift).collect(),
    })
}

/// Plain lift-one: coordinate ascent over a fresh random order each sweep.
pub fn lift_one(x: &DesignMatrix, w: &[f64], config: &OptimizerConfig) -> Result<DesignReport> {
    lift_one_impl(x, w, config, false)
}

/// Lift-one where every 10th round applies the best single-coordinate
/// update from the incumbent (lowest index on ties).
pub fn lift_one_modified(
    x: &DesignMatrix,
    w: &[f64],
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    lift_one_impl(x, w, config, true)
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            v.push((i, j));
        }
    }
    v
}

/// Pairwise exchange on real proportions.
pub fn exchange_real(
    x: &DesignMatrix,
    w: &[f64],
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    config.validate()?;
    let (wn, scale) = normalize_weights(w)?;
    let mut ev = Evaluator::new(x, &wn)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (mut p, mut lf) = real_start(&mut ev, config, &mut rng)?;
    let mut pairs = all_pairs(p.len());
    let mut scratch = Vec::with_capacity(p.len());
    let mut prog = Progress {
        rounds: 0,
        converged: false,
        trace: Vec::new(),
    };
    if config.record_trace {
        prog.trace.push(lf);
    }
    while prog.rounds < config.max_rounds {
        prog.rounds += 1;
        let l_start = lf;
        pairs.shuffle(&mut rng);
        for &(i, j) in &pairs {
            let Some(c) = exchange_coeffs(&mut ev, &p, i, j, lf, &mut scratch) else {
                continue;
            };
            let (z, _) = maximize_exchange_real(&c);
            if z == p[i] {
                continue;
            }
            let (oi, oj) = (p[i], p[j]);
            p[i] = z;
            p[j] = c.budget - z;
            let lc = ev.log_f(&p);
            if accept(lc, lf) {
                                lf = lc;
                if config.record_trace {
                    prog.trace.push(lf);
                }
            } else {
                p[i] = oi;
                p[j] = oj;
            }
        }
        if lf - l_start <= config.tol_rel
            && max_residual(&mut ev, &p, lf, &mut scratch) <= config.residual_tol
        {
            prog.converged = true;
            break;
        }
    }
    finish_real(x, w, p, scale, prog)
}

/// Largest-remainder rounding of total * p.
pub fn round_allocation(p: &[f64], total: u64) -> Vec<u64> {
    let t = total as f64;
    let mut counts: Vec<u64> = p.iter().map(|v| (v * t).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut rem: Vec<(usize, f64)> = p
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v * t - (v * t).floor()))
        .collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in rem.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

fn int_start(
    x: &DesignMatrix,
    wn: &[f64],
    n_total: u64,
    config: &OptimizerConfig,
) -> Result<Vec<u64>> {
    if let Start::UserCounts(n) = &config.start {
        check_len("start allocation", wn.len(), n.len())?;
        if n.total() != n_total {
            return Err(Error::InvalidArgument(format!(
                "start counts total {} differ from n_total {n_total}",
                n.total()
            )));
        }
        return Ok(n.counts().to_vec());
    }
    let real_cfg = OptimizerConfig {
        mode: Mode::LiftOneModified,
        record_trace: false,
        start: match &config.start {
            Start::UserCounts(_) => Start::Uniform,
            s => s.clone(),
        },
        ..config.clone()
    };
    let real = lift_one_modified(x, wn, &real_cfg)?;
    let counts = round_allocation(real.proportions().as_slice(), n_total);
    let q: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut ev = Evaluator::new(x, wn)?;
    if ev.log_f(&q) > f64::NEG_INFINITY {
        return Ok(counts);
    }
    let support = greedy_support(x, wn).ok_or(Error::NotEstimable)?;
    let rest = n_total - support.len() as u64;
    let mut counts = round_allocation(real.proportions().as_slice(), rest);
    for i in support {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Pairwise exchange on integer run counts summing to `n_total`.
pub fn exchange_int(
    x: &DesignMatrix,
    w: &[f64],
    n_total: u64,
    config: &OptimizerConfig,
) -> Result<DesignReport> {
    config.validate()?;
    if n_total < x.n_cols() as u64 {
        return Err(Error::InvalidArgument(format!(
            "n_total = {n_total} is below the {} model parameters",
            x.n_cols()
        )));
    }
    let (wn, scale) = normalize_weights(w)?;
    let counts = int_start(x, &wn, n_total, config)?;
    let mut ev = Evaluator::new(x, &wn)?;
    let mut q: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut lf = ev.log_f(&q);
    if lf == f64::NEG_INFINITY {
        return Err(Error::NotEstimable);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut pairs = all_pairs(q.len());
    let mut scratch = Vec::with_capacity(q.len());
    let mut prog = Progress {
        rounds: 0,
        converged: false,
        trace: Vec::new(),
    };
    if config.record_trace {
        prog.trace.push(lf);
    }
    while prog.rounds < config.max_rounds {
        prog.rounds += 1;
        let mut changed = false;
        pairs.shuffle(&mut rng);
        for &(i, j) in &pairs {
            let Some(c) = exchange_coeffs(&mut ev, &q, i, j, lf, &mut scratch) else {
                continue;
            };
            let (z, _) = maximize_exchange_int(&c);
            let z = z as f64;
            if z == q[i] {
                continue;
            }
            let (oi, oj) = (q[i], q[j]);
            q[i] = z;
            q[j] = c.budget - z;
            let lc = ev.log_f(&q);
            if lc > lf {
                lf = lc;
                changed = true;
                if config.record_trace {
                    prog.trace.push(lf);
                }
            } else {
                q[i] = oi;
                q[j] = oj;
            }
        }
        if !changed {
            prog.converged = true;
            break;
        }
    }
    let counts = IntAllocation::new(q.iter().map(|&v| v.round() as u64).collect())?;
    let log_objective = Evaluator::new(x, w)?.log_f(&counts.as_f64());
    let props = counts.proportions();
    let verification = Some(verify_optimal(x, w, &props, VERIFY_TOL)?);
    let shift = x.n_cols() as f64 * scale.ln();
    Ok(DesignReport {
        support_size: counts.support_size(),
        allocation: DesignAllocation::Integer(counts),
        objective: log_objective.exp(),
        log_objective,
        rounds_used: prog.rounds,
        converged: prog.converged,
        verification,
        trace: prog.trace.into_iter().map(|v| v + shift).collect(),
    })
}

/// Runs the optimizer selected by `config.mode`; `n_total` is required for
/// the integer exchange.
pub fn optimize(
    x: &DesignMatrix,
    w: &[f64],
    config: &OptimizerConfig,
    n_total: Option<u64>,
) -> Result<DesignReport> {
    match config.mode {
        Mode::LiftOne => lift_one(x, w, config),
        Mode::LiftOneModified => lift_one_modified(x, w, config),
        Mode::ExchangeReal => exchange_real(x, w, config),
        Mode::ExchangeInt => {
            let n = n_total.ok_or_else(|| {
                Error::InvalidArgument("integer exchange needs n_total".into())
            })?;
            exchange_int(x, w, n, config)
        }
    }
}
