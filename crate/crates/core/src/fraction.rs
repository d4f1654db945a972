//! Fractions: exhaustive best-support search, the 2^3 regular-fraction
//! conditions, support selection heuristics and most robust minimally
//! supported designs.

use crate::criterion::{
    binomial, for_each_subset, subset_det, Allocation, Evaluator, ORACLE_CAP,
};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::DesignMatrix;
use crate::optimize::{exchange_int, lift_one_modified, DesignAllocation, OptimizerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSpec {
    /// Row indices, ascending.
    pub support: Vec<usize>,
    /// Full-length allocation, zero off the support.
    pub allocation: Allocation,
    pub log_objective: f64,
    /// X restricted to the support has full column rank.
    pub estimable: bool,
    /// Found by a heuristic rather than exhaustive search.
    pub heuristic: bool,
}

/// Relative slack under which two subset objectives count as tied.
pub const TIE_TOL: f64 = 1e-10;

fn finish(x: &DesignMatrix, w: &[f64], alloc: Allocation, heuristic: bool) -> Result<FractionSpec> {
    let support = alloc.support();
    let log_objective = Evaluator::new(x, w)?.log_f(alloc.as_slice());
    Ok(FractionSpec {
        estimable: support_rank(x, &support) == x.n_cols(),
        support,
        allocation: alloc,
        log_objective,
        heuristic,
    })
}

fn support_rank(x: &DesignMatrix, rows: &[usize]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let sub = x.select_rows(rows);
    let data: Vec<f64> = (0..sub.n_rows()).flat_map(|i| sub.row(i).to_vec()).collect();
    linalg::rank(&data, sub.n_rows(), sub.n_cols(), 1e-9)
}

fn integral(x: &DesignMatrix) -> bool {
    (0..x.n_rows()).all(|i| x.row(i).iter().all(|v| v.fract() == 0.0))
}

// |X[I]|, rounded to an integer when X is integral.
fn minor(x: &DesignMatrix, s: &[usize], exact: bool) -> f64 {
    let dt = subset_det(x, s);
    if exact {
        dt.round()
    } else if dt.abs() < 1e-12 {
        0.0
    } else {
        dt
    }
}

fn log_minor_term(x: &DesignMatrix, w: &[f64], s: &[usize], exact: bool) -> f64 {
    let dt = minor(x, s, exact);
    (dt * dt).ln() + s.iter().map(|&i| w[i].ln()).sum::<f64>()
}

fn collect_subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::with_capacity(binomial(n, m) as usize);
    for_each_subset(n, m, |s| all.push(s.to_vec()));
    all
}

/// First subset (lexicographic) whose value is within TIE_TOL of the max.
fn pick(values: &[f64]) -> Option<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    let floor = best - TIE_TOL * best.abs().max(1.0);
    values.iter().position(|&v| v >= floor)
}

/// Best design supported on at most `m` rows, by exhaustive search over
/// m-subsets. With m = d+1 the objective is |X[I]|^2 prod w_i and the
/// allocation is uniform; otherwise each subset is optimized by modified
/// lift-one. Beyond the enumeration cap this falls back to `top_p`.
pub fn best_fraction(x: &DesignMatrix, w: &[f64], m: usize) -> Result<FractionSpec> {
    check_len("weight vector", x.n_rows(), w.len())?;
    let n = x.n_rows();
    let c = x.n_cols();
    if m < c || m > n {
        return Err(Error::InvalidArgument(format!(
            "fraction size {m} must lie in [{c}, {n}]"
        )));
    }
    if binomial(n, m) > ORACLE_CAP {
        let mut f = fraction_select(x, w, m, Strategy::TopP)?;
        f.heuristic = true;
        return Ok(f);
    }
    let subsets = collect_subsets(n, m);
    if m == c {
        let exact = integral(x);
        let vals: Vec<f64> = subsets
            .par_iter()
            .map(|s| log_minor_term(x, w, s, exact))
            .collect();
        let i = pick(&vals).ok_or(Error::NoEstimableSubset(m))?;
        return finish(x, w, Allocation::uniform_on(n, &subsets[i]), false);
    }
    let cfg = OptimizerConfig::default();
    let results: Vec<Option<(f64, Vec<f64>)>> = subsets
        .par_iter()
        .map(|s| {
            let sub = x.select_rows(s);
            let ws: Vec<f64> = s.iter().map(|&i| w[i]).collect();
            if support_rank(x, s) < c || ws.iter().filter(|&&v| v > 0.0).count() < c {
                return None;
            }
            let r = lift_one_modified(&sub, &ws, &cfg).ok()?;
            Some((r.log_objective, r.proportions().into_vec()))
        })
        .collect();
    let vals: Vec<f64> = results
        .iter()
        .map(|r| r.as_ref().map_or(f64::NEG_INFINITY, |r| r.0))
        .collect();
    let i = pick(&vals).ok_or(Error::NoEstimableSubset(m))?;
    let (_, ps) = results[i].clone().expect("picked subset has a result");
    let mut p = vec![0.0; n];
    for (&row, v) in subsets[i].iter().zip(ps) {
        p[row] = v;
    }
    finish(x, w, Allocation::from_vec_unchecked(p), false)
}

/// Best half-fraction: supports of size 2^{k-1}.
pub fn best_half_fraction(x: &DesignMatrix, w: &[f64]) -> Result<FractionSpec> {
    best_fraction(x, w, x.n_rows() / 2)
}

/// Weight-symmetry tolerance for theorem hypotheses, relative.
pub const SYMMETRY_TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= SYMMETRY_TOL * a.abs().max(b.abs())
}

/// Whether the regular half-fractions {1,4,6,7} and {2,3,5,8} (1-based)
/// are D-optimal among half-fractions of the 2^3 main-effects model. Needs
/// w_1 = w_5, w_2 = w_6, w_3 = w_7, w_4 = w_8.
pub fn regular_fraction_optimal_23(w: &[f64]) -> Result<bool> {
    check_len("weight vector", 8, w.len())?;
    for i in 0..4 {
        if !close(w[i], w[i + 4]) {
            return Err(Error::HypothesisViolated(format!(
                "w_{} = {} differs from w_{} = {}",
                i + 1,
                w[i],
                i + 5,
                w[i + 4]
            )));
        }
    }
    let q = &w[..4];
    let mn = q.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = q.iter().copied().fold(0.0, f64::max);
    Ok(4.0 * mn >= mx)
}

// log((2e^t - 1)/(e^t - 2)); +inf where e^t <= 2 leaves the bound vacuous.
fn beta0_bound(t: f64) -> f64 {
    let e = t.exp();
    if e <= 2.0 {
        f64::INFINITY
    } else {
        ((2.0 * e - 1.0) / (e - 2.0)).ln()
    }
}

/// Closed-form region, logit link and beta_1 = 0, where the regular
/// half-fractions of the 2^3 main-effects model are D-optimal.
pub fn regular_fraction_region_logit_23(beta0: f64, beta2: f64, beta3: f64) -> bool {
    let ln2 = std::f64::consts::LN_2;
    let (a2, a3) = (beta2.abs(), beta3.abs());
    let s = a2 + a3;
    let hi = a2.max(a3);
    let lo = a2.min(a3);
    let el = (-lo).exp();
    let ridge = (1.0 + el + (1.0 + el + el * el).sqrt()).ln();
    let b0 = beta0.abs();
    if s <= ln2 {
        return true;
    }
    if hi <= ridge {
        return b0 <= beta0_bound(s);
    }
    hi <= beta0_bound(lo) && b0 <= beta0_bound(hi) - lo
}

/// The two-clause special case with beta_1 = beta_2 = 0.
pub fn regular_fraction_region_logit_23_b2zero(beta0: f64, beta3: f64) -> bool {
    let a3 = beta3.abs();
    a3 <= std::f64::consts::LN_2 || beta0.abs() <= beta0_bound(a3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    TopW,
    TopP,
    Exchange,
    Enumerate,
}

fn top_indices(v: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

// Swap rows into the support until X[support] has full column rank: the
// highest-w outside row that raises the rank replaces the lowest-w chosen
// row whose removal keeps it.
fn repair(x: &DesignMatrix, w: &[f64], chosen: &mut Vec<usize>) -> Result<()> {
    let c = x.n_cols();
    let m = chosen.len();
    let mut rank = support_rank(x, chosen);
    while rank < c {
        let mut outside: Vec<usize> = (0..x.n_rows()).filter(|i| !chosen.contains(i)).collect();
        outside.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        let mut inside = chosen.clone();
        inside.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
        let mut done = false;
        'outer: for &cand in &outside {
            for &victim in &inside {
                let trial: Vec<usize> = chosen
                    .iter()
                    .map(|&i| if i == victim { cand } else { i })
                    .collect();
                let r = support_rank(x, &trial);
                if r > rank {
                    *chosen = trial;
                    rank = r;
                    done = true;
                    break 'outer;
                }
            }
        }
        if !done {
            return Err(Error::NoEstimableSubset(m));
        }
    }
    chosen.sort_unstable();
    Ok(())
}

/// Picks an m-row fraction with one of the heuristics (or exhaustive
/// search for `Enumerate`).
pub fn fraction_select(
    x: &DesignMatrix,
    w: &[f64],
    m: usize,
    strategy: Strategy,
) -> Result<FractionSpec> {
    check_len("weight vector", x.n_rows(), w.len())?;
    let n = x.n_rows();
    if m < x.n_cols() || m > n {
        return Err(Error::InvalidArgument(format!(
            "fraction size {m} must lie in [{}, {n}]",
            x.n_cols()
        )));
    }
    let cfg = OptimizerConfig::default();
    match strategy {
        Strategy::Enumerate => best_fraction(x, w, m),
        Strategy::TopW => {
            let mut chosen = top_indices(w, m);
            repair(x, w, &mut chosen)?;
            finish(x, w, Allocation::uniform_on(n, &chosen), true)
        }
        Strategy::TopP => {
            let r = lift_one_modified(x, w, &cfg)?;
            let p = r.proportions().into_vec();
            let keep = top_indices(&p, m);
            let mut q = vec![0.0; n];
            let s: f64 = keep.iter().map(|&i| p[i]).sum();
            for &i in &keep {
                q[i] = p[i] / s;
            }
            finish(x, w, Allocation::from_vec_unchecked(q), true)
        }
        Strategy::Exchange => {
            let r = exchange_int(x, w, m as u64, &cfg)?;
            let DesignAllocation::Integer(counts) = r.allocation else {
                return Err(Error::Internal("exchange returned real allocation".into()));
            };
            finish(x, w, counts.proportions(), true)
        }
    }
}

/// Whether the robustness guarantee applies: k >= 3 and d(d+1) <= 2^{k+1} - 4.
pub fn robust_bound_applies(k: usize, d: usize) -> bool {
    k >= 3 && d * (d + 1) + 4 <= 1usize << (k + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustMinSupport {
    pub fraction: FractionSpec,
    pub max_loss: f64,
    pub bound_guaranteed: bool,
}

fn log_abs_minor(x: &DesignMatrix, s: &[usize], exact: bool) -> f64 {
    minor(x, s, exact).abs().ln()
}

// Greedy volume start followed by single-row swaps while |X[I]| grows.
fn max_minor_exchange(x: &DesignMatrix) -> Result<Vec<usize>> {
    let ones = vec![1.0; x.n_rows()];
    let mut set = crate::optimize::greedy_support(x, &ones)
        .ok_or(Error::NoEstimableSubset(x.n_cols()))?;
    let exact = integral(x);
    let mut cur = log_abs_minor(x, &set, exact);
    loop {
        let mut improved = false;
        for pos in 0..set.len() {
            for cand in 0..x.n_rows() {
                if set.contains(&cand) {
                    continue;
                }
                let mut t = set.clone();
                t[pos] = cand;
                let v = log_abs_minor(x, &t, exact);
                if v > cur + 1e-12 {
                    set = t;
                    cur = v;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    set.sort_unstable();
    Ok(set)
}

/// Uniform design on a (d+1)-set maximizing |X[I]|^2, with maximum relative
/// loss 1 - a/b over w in [a, b]^{2^k}.
pub fn most_robust_minsupport(x: &DesignMatrix, a: f64, b: f64) -> Result<RobustMinSupport> {
    if !(a > 0.0 && a <= b && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < a <= b, got a = {a}, b = {b}"
        )));
    }
    let n = x.n_rows();
    let c = x.n_cols();
    let k = n.trailing_zeros() as usize;
    let (set, heuristic) = if binomial(n, c) <= ORACLE_CAP {
        let subsets = collect_subsets(n, c);
        let exact = integral(x);
        let vals: Vec<f64> = subsets
            .par_iter()
            .map(|s| log_abs_minor(x, s, exact))
            .collect();
        let i = pick(&vals).ok_or(Error::NoEstimableSubset(c))?;
        (subsets[i].clone(), false)
    } else {
        (max_minor_exchange(x)?, true)
    };
    let ones = vec![1.0; n];
    let fraction = finish(x, &ones, Allocation::uniform_on(n, &set), heuristic)?;
    Ok(RobustMinSupport {
        fraction,
        max_loss: 1.0 - a / b,
        bound_guaranteed: n.is_power_of_two() && robust_bound_applies(k, c - 1),
    })
}

/// Disjoint image of `support` under a factor sign flip. Flips are tried as
/// the full flip first, then factor masks in ascending order; factor 1 is
/// the most significant bit of the row index. Returns the image (ascending)
/// and the mask.
pub fn disjoint_twin(x: &DesignMatrix, support: &[usize]) -> Result<(Vec<usize>, usize)> {
    let n = x.n_rows();
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument("row count is not a power of two".into()));
    }
    if let Some(&bad) = support.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("row {bad} out of range")));
    }
    let k = n.trailing_zeros() as usize;
    let full = n - 1;
    let order = std::iter::once(full).chain(1..full);
    for mask in order {
        let image: Vec<usize> = support.iter().map(|&i| i ^ mask).collect();
        if image.iter().all(|i| !support.contains(i)) {
            let mut image = image;
            image.sort_unstable();
            return Ok((image, mask));
        }
    }
    let d = x.n_cols() - 1;
    if robust_bound_applies(k, d) && support.len() == d + 1 {
        Err(Error::Internal(
            "no sign flip maps the index set to a disjoint one".into(),
        ))
    } else {
        Err(Error::HypothesisViolated(
            "no disjoint sign-flip image exists for this index set".into(),
        ))
    }
}

/// Loss of the uniform design on `support` against the minimally supported
/// design on its disjoint twin, with w = b on the twin and a elsewhere.
/// Equals 1 - a/b whenever |X[I]| = |X[I']|.
pub fn adversarial_minsupport_loss(
    x: &DesignMatrix,
    support: &[usize],
    a: f64,
    b: f64,
) -> Result<(Vec<usize>, f64)> {
    let (twin, _) = disjoint_twin(x, support)?;
    let n = x.n_rows();
    let mut w = vec![a; n];
    for &i in &twin {
        w[i] = b;
    }
    let mut ev = Evaluator::new(x, &w)?;
    let lp = ev.log_f(Allocation::uniform_on(n, support).as_slice());
    let lq = ev.log_f(Allocation::uniform_on(n, &twin).as_slice());
    if lq == f64::NEG_INFINITY {
        return Err(Error::SingularSupport);
    }
    let loss = 1.0 - ((lp - lq) / x.n_cols() as f64).exp();
    Ok((twin, loss))
}

/// Negative losses down to this are roundoff and reported as zero.
pub const LOSS_SLACK: f64 = 1e-9;

/// R(p, w) = 1 - (f(p)/f(p_w))^{1/(d+1)} with p_w from modified lift-one.
pub fn relative_loss(x: &DesignMatrix, p: &Allocation, w: &[f64]) -> Result<f64> {
    let opt = lift_one_modified(x, w, &OptimizerConfig::default())?;
    relative_loss_against(x, p, w, opt.log_objective)
}

/// Relative loss against a known optimal log objective.
pub fn relative_loss_against(
    x: &DesignMatrix,
    p: &Allocation,
    w: &[f64],
    log_opt: f64,
) -> Result<f64> {
    check_len("allocation", x.n_rows(), p.len())?;
    if log_opt == f64::NEG_INFINITY {
        return Err(Error::NotEstimable);
    }
    let lp = Evaluator::new(x, w)?.log_f(p.as_slice());
    let r = 1.0 - ((lp - log_opt) / x.n_cols() as f64).exp();
    if r < -LOSS_SLACK {
        return Err(Error::Internal(format!(
            "design beats the reference optimum (loss {r})"
        )));
    }
    Ok(r.clamp(0.0, 1.0))
}
