//! The D-criterion f(p) = |X'WX|, its one- and two-coordinate restrictions,
//! the subset-expansion oracle and the uniqueness diagnostic.

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::DesignMatrix;
use serde::{Deserialize, Serialize};

/// Real-valued proportions on the design points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(Vec<f64>);

pub const SUM_TOL: f64 = 1e-12;

impl Allocation {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidAllocation("empty allocation".into()));
        }
        if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidAllocation(format!(
                "entries must be finite and nonnegative, found {v}"
            )));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidAllocation(format!(
                "entries sum to {s}, not 1"
            )));
        }
        Ok(Allocation(p))
    }

    /// Rescales nonnegative entries to sum to one; the input sum must be
    /// within `tol` of 1.
    pub fn normalized(p: Vec<f64>, tol: f64) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if !(s.is_finite() && (s - 1.0).abs() <= tol) {
            return Err(Error::InvalidAllocation(format!(
                "entries sum to {s}, not 1"
            )));
        }
        Self::new(p.into_iter().map(|v| v / s).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Allocation(vec![1.0 / n as f64; n])
    }

    /// Uniform on the listed indices, zero elsewhere.
    pub fn uniform_on(n: usize, support: &[usize]) -> Self {
        let mut p = vec![0.0; n];
        for &i in support {
            p[i] = 1.0 / support.len() as f64;
        }
        Allocation(p)
    }

    pub(crate) fn from_vec_unchecked(p: Vec<f64>) -> Self {
        Allocation(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > 0.0).collect()
    }
    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Integer run counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntAllocation {
    counts: Vec<u64>,
    total: u64,
}

impl IntAllocation {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidAllocation("total run count is zero".into()));
        }
        Ok(IntAllocation { counts, total })
    }
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
    pub fn total(&self) -> u64 {
        self.total
    }
    pub fn len(&self) -> usize {
        self.counts.len()
    }
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
    pub fn support_size(&self) -> usize {
        self.counts.iter().filter(|&&v| v > 0).count()
    }
    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
    pub fn proportions(&self) -> Allocation {
        let t = self.total as f64;
        Allocation(self.counts.iter().map(|&c| c as f64 / t).collect())
    }
}

/// Borrowed allocation of either kind.
#[derive(Debug, Clone, Copy)]
pub enum AllocationRef<'a> {
    Real(&'a Allocation),
    Integer(&'a IntAllocation),
}

impl<'a> From<&'a Allocation> for AllocationRef<'a> {
    fn from(a: &'a Allocation) -> Self {
        AllocationRef::Real(a)
    }
}
impl<'a> From<&'a IntAllocation> for AllocationRef<'a> {
    fn from(a: &'a IntAllocation) -> Self {
        AllocationRef::Integer(a)
    }
}

pub(crate) fn check_weights(x: &DesignMatrix, w: &[f64]) -> Result<()> {
    check_len("weight vector", x.n_rows(), w.len())?;
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weights must be finite and nonnegative, found {v}"
        )));
    }
    Ok(())
}

/// Reusable evaluator of det(sum_i q_i w_i x_i x_i') for arbitrary q >= 0.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    x: &'a DesignMatrix,
    w: &'a [f64],
    buf: Vec<f64>,
    zbuf: Vec<f64>,
    order: Vec<(f64, usize)>,
    expansion: Option<Expansion>,
    logs: Vec<f64>,
}

/// Nonzero terms of the subset expansion: flattened (d+1)-subsets with
/// log |X[I]|^2.
#[derive(Debug, Clone)]
struct Expansion {
    idx: Vec<u16>,
    log_det2: Vec<f64>,
}

/// Largest subset count for which ill-conditioned evaluations fall back to
/// the exact positive expansion.
const EXPANSION_CAP: u128 = 20_000;

/// Squared-pivot ratio below which the QR value is considered unreliable.
const PIVOT_RATIO_FLOOR: f64 = 1e-8;

fn build_expansion(x: &DesignMatrix) -> Option<Expansion> {
    let n = x.n_rows();
    let c = x.n_cols();
    if binomial(n, c) > EXPANSION_CAP {
        return None;
    }
    let exact = (0..n).all(|i| x.row(i).iter().all(|v| v.fract() == 0.0));
    let mut idx = Vec::new();
    let mut log_det2 = Vec::new();
    for_each_subset(n, c, |s| {
        let mut dt = subset_det(x, s);
        if exact {
            dt = dt.round();
        } else if dt.abs() < 1e-12 {
            dt = 0.0;
        }
        if dt != 0.0 {
            idx.extend(s.iter().map(|&i| i as u16));
            log_det2.push((dt * dt).ln());
        }
    });
    Some(Expansion { idx, log_det2 })
}

impl<'a> Evaluator<'a> {
    pub fn new(x: &'a DesignMatrix, w: &'a [f64]) -> Result<Self> {
        check_weights(x, w)?;
        let n = x.n_cols();
        Ok(Evaluator {
            x,
            w,
            buf: vec![0.0; n * n],
            zbuf: Vec::new(),
            order: Vec::new(),
            expansion: build_expansion(x),
            logs: Vec::new(),
        })
    }

    /// Swaps in another weight vector, keeping the X-only precomputation.
    pub fn set_weights(&mut self, w: &'a [f64]) -> Result<()> {
        check_weights(self.x, w)?;
        self.w = w;
        Ok(())
    }

    pub fn x(&self) -> &'a DesignMatrix {
        self.x
    }
    pub fn w(&self) -> &'a [f64] {
        self.w
    }
    pub fn n_points(&self) -> usize {
        self.x.n_rows()
    }
    pub fn d(&self) -> usize {
        self.x.d()
    }

    fn fill(&mut self, q: &[f64]) {
        let n = self.x.n_cols();
        self.buf.iter_mut().for_each(|v| *v = 0.0);
        for (i, (&qi, &wi)) in q.iter().zip(self.w).enumerate() {
            let s = qi * wi;
            if s == 0.0 {
                continue;
            }
            let r = self.x.row(i);
            for a in 0..n {
                let ra = s * r[a];
                for b in a..n {
                    self.buf[a * n + b] += ra * r[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                self.buf[a * n + b] = self.buf[b * n + a];
            }
        }
    }

    /// Information matrix, row-major.
    pub fn matrix(&mut self, q: &[f64]) -> Vec<f64> {
        self.fill(q);
        self.buf.clone()
    }

    /// f(q) = exp(log_f(q)).
    pub fn f(&mut self, q: &[f64]) -> f64 {
        self.log_f(q).exp()
    }

    /// log f(q), evaluated as log det(Z'Z) with Z = diag(sqrt(q w)) X through
    /// a QR factorization, which keeps relative accuracy when the weights
    /// span many orders of magnitude. Returns -inf for singular matrices.
    pub fn log_f(&mut self, q: &[f64]) -> f64 {
        let c = self.x.n_cols();
        self.order.clear();
        for (i, (&qi, &wi)) in q.iter().zip(self.w).enumerate() {
            let s = qi * wi;
            if s > 0.0 {
                let r = self.x.row(i);
                let n2: f64 = r.iter().map(|v| v * v).sum();
                self.order.push((s * n2, i));
            }
        }
        if self.order.len() < c {
            return f64::NEG_INFINITY;
        }
        self.order
            .sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        self.zbuf.clear();
        for &(_, i) in &self.order {
            let s = (q[i] * self.w[i]).sqrt();
            self.zbuf.extend(self.x.row(i).iter().map(|v| v * s));
        }
        let (l, ratio) = linalg::gram_logdet_qr_pivots(&mut self.zbuf, self.order.len(), c);
        if ratio < PIVOT_RATIO_FLOOR && self.expansion.is_some() {
            return self.log_f_expansion(q);
        }
        l
    }

    /// log f(q) from the subset expansion, summed in log space. Every term
    /// is nonnegative and the minors are exact, so this stays accurate when
    /// rows with extremely small weight are needed for estimability.
    fn log_f_expansion(&mut self, q: &[f64]) -> f64 {
        let Some(ex) = self.expansion.as_ref() else {
            return f64::NEG_INFINITY;
        };
        let c = self.x.n_cols();
        self.logs.clear();
        self.logs
            .extend(q.iter().zip(self.w).map(|(&qi, &wi)| (qi * wi).ln()));
        let term = |t: usize| -> f64 {
            ex.idx[t * c..(t + 1) * c]
                .iter()
                .map(|&i| self.logs[i as usize])
                .sum::<f64>()
                + ex.log_det2[t]
        };
        let n_terms = ex.log_det2.len();
        let mut mx = f64::NEG_INFINITY;
        for t in 0..n_terms {
            mx = mx.max(term(t));
        }
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        let mut s = 0.0;
        for t in 0..n_terms {
            s += (term(t) - mx).exp();
        }
        mx + s.ln()
    }
}

/// Sum_i p_i w_i x_i x_i' as a row-major (d+1) x (d+1) matrix.
pub fn info_matrix(x: &DesignMatrix, w: &[f64], p: &Allocation) -> Result<Vec<f64>> {
    check_len("allocation", x.n_rows(), p.len())?;
    Ok(Evaluator::new(x, w)?.matrix(p.as_slice()))
}

/// f(p) = |X'WX|.
pub fn det_objective(x: &DesignMatrix, w: &[f64], p: &Allocation) -> Result<f64> {
    check_len("allocation", x.n_rows(), p.len())?;
    Ok(Evaluator::new(x, w)?.f(p.as_slice()))
}

/// Default cap on the number of subset terms the oracle will enumerate.
pub const ORACLE_CAP: u128 = 2_000_000;

pub fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Calls `visit` on every r-subset of 0..n in lexicographic order.
pub fn for_each_subset(n: usize, r: usize, mut visit: impl FnMut(&[usize])) {
    if r > n {
        return;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        visit(&idx);
        let mut pos = r;
        while pos > 0 {
            pos -= 1;
            if idx[pos] < n - r + pos {
                idx[pos] += 1;
                for t in pos + 1..r {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return;
            }
        }
        if r == 0 {
            return;
        }
    }
}

/// |X[I]|, the determinant of the rows in I.
pub fn subset_det(x: &DesignMatrix, idx: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
    linalg::det_rows(&rows)
}

/// f(p) through the subset expansion
/// sum over (d+1)-subsets I of |X[I]|^2 prod_{i in I} p_i w_i.
pub fn det_oracle(x: &DesignMatrix, w: &[f64], p: &Allocation) -> Result<f64> {
    det_oracle_with_cap(x, w, p, ORACLE_CAP)
}

pub fn det_oracle_with_cap(
    x: &DesignMatrix,
    w: &[f64],
    p: &Allocation,
    cap: u128,
) -> Result<f64> {
    check_weights(x, w)?;
    check_len("allocation", x.n_rows(), p.len())?;
    let n = x.n_rows();
    let r = x.n_cols();
    let terms = binomial(n, r);
    if terms > cap {
        return Err(Error::OracleInfeasible { terms, cap });
    }
    let q: Vec<f64> = p.as_slice().iter().zip(w).map(|(a, b)| a * b).collect();
    // Neumaier-compensated sum, fixed order.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for_each_subset(n, r, |idx| {
        let prod: f64 = idx.iter().map(|&i| q[i]).product();
        if prod == 0.0 {
            return;
        }
        let dt = subset_det(x, idx);
        let term = dt * dt * prod;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    });
    Ok(sum + comp)
}

/// Coefficients of f_i(z) = a z (1-z)^d + b (1-z)^{d+1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftOneCoefficients {
    pub a: f64,
    pub b: f64,
    pub d: usize,
    pub i: usize,
}

impl LiftOneCoefficients {
    pub fn eval(&self, z: f64) -> f64 {
        let om = 1.0 - z;
        let pd = om.powi(self.d as i32);
        self.a * z * pd + self.b * pd * om
    }
}

/// The allocation on the lift-one path through p at coordinate i.
pub fn lift_path(p: &[f64], i: usize, z: f64, out: &mut Vec<f64>) {
    let s = (1.0 - z) / (1.0 - p[i]);
    out.clear();
    out.extend(p.iter().map(|&v| v * s));
    out[i] = z;
}

/// Lift-one coefficients divided by f(p), given log f(p) > -inf.
pub(crate) fn lift_one_coeffs(
    ev: &mut Evaluator<'_>,
    p: &[f64],
    i: usize,
    log_f: f64,
    scratch: &mut Vec<f64>,
) -> Result<LiftOneCoefficients> {
    let d = ev.d();
    let pi = p[i];
    if pi >= 1.0 {
        return Err(Error::DegenerateCoordinate(i));
    }
    // g(z) = f_i(z) / (1-z)^d = b + (a-b) z is linear and known at z = p_i.
    // The second point is z = 0 unless p_i is small, where z = 1/2 avoids
    // dividing by p_i. z = 0 keeps b exactly zero for essential rows.
    let g_p = 1.0 / (1.0 - pi).powi(d as i32);
    let (a, b) = if pi >= 0.25 / (d as f64 + 1.0) {
        lift_path(p, i, 0.0, scratch);
        let b = (ev.log_f(scratch) - log_f).exp();
        (b + (g_p - b) / pi, b)
    } else {
        lift_path(p, i, 0.5, scratch);
        let g_h = (ev.log_f(scratch) - log_f).exp() * 2f64.powi(d as i32);
        let slope = (g_p - g_h) / (pi - 0.5);
        let b = g_h - 0.5 * slope;
        (b + slope, b)
    };
    Ok(LiftOneCoefficients {
        a: a.max(0.0),
        b: b.max(0.0),
        d,
        i,
    })
}

/// Recovers (a, b) for coordinate i with one extra determinant: f_i(0) when
/// p_i >= 1/(4(d+1)), otherwise f_i(1/2).
pub fn lift_one_restriction(
    x: &DesignMatrix,
    w: &[f64],
    p: &Allocation,
    i: usize,
) -> Result<LiftOneCoefficients> {
    check_len("allocation", x.n_rows(), p.len())?;
    if i >= p.len() {
        return Err(Error::InvalidArgument(format!("index {i} out of range")));
    }
    let mut ev = Evaluator::new(x, w)?;
    let log_f = ev.log_f(p.as_slice());
    if log_f == f64::NEG_INFINITY {
        return Err(Error::CharacterizationInapplicable);
    }
    let mut scratch = Vec::new();
    let c = lift_one_coeffs(&mut ev, p.as_slice(), i, log_f, &mut scratch)?;
    let f = log_f.exp();
    Ok(LiftOneCoefficients {
        a: c.a * f,
        b: c.b * f,
        ..c
    })
}

/// Maximizer of the lift-one restriction on [0, 1].
pub fn maximize_lift_one(c: &LiftOneCoefficients) -> (f64, f64) {
    let d = c.d as f64;
    if c.a <= c.b * (d + 1.0) {
        return (0.0, c.b);
    }
    let z = (c.a - c.b * (d + 1.0)) / ((c.a - c.b) * (d + 1.0));
    (z, c.eval(z))
}

/// Coefficients of f_ij(z) = A z (e-z) + B z + C (e-z) + D, where z is the
/// mass at i and e - z the mass at j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub budget: f64,
    pub i: usize,
    pub j: usize,
    /// Current mass at i.
    pub current: f64,
}

impl ExchangeCoefficients {
    pub fn eval(&self, z: f64) -> f64 {
        let e = self.budget;
        self.a * z * (e - z) + self.b * z + self.c * (e - z) + self.d
    }
}

/// Exchange coefficients divided by exp(log_ref).
pub(crate) fn exchange_coeffs(
    ev: &mut Evaluator<'_>,
    q: &[f64],
    i: usize,
    j: usize,
    log_ref: f64,
    scratch: &mut Vec<f64>,
) -> Option<ExchangeCoefficients> {
    let e = q[i] + q[j];
    if e <= 0.0 {
        return None;
    }
    scratch.clear();
    scratch.extend_from_slice(q);
    let mut at = |zi: f64, zj: f64| -> f64 {
        scratch[i] = zi;
        scratch[j] = zj;
        (ev.log_f(scratch) - log_ref).exp()
    };
    let d = at(0.0, 0.0);
    let f0 = at(0.0, e);
    let fe = at(e, 0.0);
    let fh = at(e / 2.0, e / 2.0);
    let a = 2.0 / (e * e) * (2.0 * fh - f0 - fe);
    let b = (fe - d) / e;
    let c = (f0 - d) / e;
    Some(ExchangeCoefficients {
        a,
        b,
        c,
        d,
        budget: e,
        i,
        j,
        current: q[i],
    })
}

/// Quadratic restriction along the exchange path for the pair (i, j).
/// Returns `None` when the pair carries no mass and should be skipped.
pub fn exchange_restriction(
    x: &DesignMatrix,
    w: &[f64],
    alloc: AllocationRef<'_>,
    i: usize,
    j: usize,
) -> Result<Option<ExchangeCoefficients>> {
    let q = match alloc {
        AllocationRef::Real(p) => p.as_slice().to_vec(),
        AllocationRef::Integer(n) => n.as_f64(),
    };
    check_len("allocation", x.n_rows(), q.len())?;
    if i >= q.len() || j >= q.len() || i == j {
        return Err(Error::InvalidArgument(format!("invalid pair ({i}, {j})")));
    }
    let mut ev = Evaluator::new(x, w)?;
    let mut scratch = Vec::new();
    Ok(exchange_coeffs(&mut ev, &q, i, j, 0.0, &mut scratch))
}

fn endpoint_choice(c: &ExchangeCoefficients, hi: f64) -> (f64, f64) {
    let (v0, vh) = (c.eval(0.0), c.eval(hi));
    if v0 > vh {
        (0.0, v0)
    } else if vh > v0 {
        (hi, vh)
    } else {
        (c.current, c.eval(c.current))
    }
}

/// Real-valued maximizer of the exchange restriction on [0, e].
pub fn maximize_exchange_real(c: &ExchangeCoefficients) -> (f64, f64) {
    let e = c.budget;
    if !(c.a > 0.0) {
        return endpoint_choice(c, e);
    }
    let delta = (e * c.a + c.b - c.c) / (2.0 * c.a);
    if delta <= 0.0 {
        (0.0, e * c.c + c.d)
    } else if delta >= e {
        (e, e * c.b + c.d)
    } else {
        let s = e * c.a + c.b - c.c;
        (delta, e * c.c + c.d + s * s / (4.0 * c.a))
    }
}

/// Integer maximizer of the exchange restriction on {0, ..., m}.
pub fn maximize_exchange_int(c: &ExchangeCoefficients) -> (u64, f64) {
    let m = c.budget.round();
    if !(c.a > 0.0) {
        let (z, v) = endpoint_choice(c, m);
        return (z.round() as u64, v);
    }
    let s = m * c.a + c.b - c.c;
    let delta = (s / (2.0 * c.a)).round().clamp(0.0, m);
    let value = m * c.c + c.d + s * delta - c.a * delta * delta;
    (delta as u64, value)
}

/// Rank of X_w = [1, w*g_1, ..., w*g_s] over the distinct pairwise Schur
/// products g of the columns of X, and the dimension 2^k - rank of the
/// affine set of allocations sharing one information matrix.
pub fn uniqueness_rank(x: &DesignMatrix, w: &[f64]) -> Result<(usize, usize)> {
    let (data, n, m) = schur_matrix(x, w)?;
    let r = linalg::rank(&data, n, m, 1e-9);
    Ok((r, n - r))
}

/// Row-major X_w with its dimensions.
pub fn schur_matrix(x: &DesignMatrix, w: &[f64]) -> Result<(Vec<f64>, usize, usize)> {
    check_len("weight vector", x.n_rows(), w.len())?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite weight".into()));
    }
    let n = x.n_rows();
    let c = x.n_cols();
    let mut prods: Vec<Vec<f64>> = Vec::new();
    for a in 0..c {
        for b in a..c {
            let g: Vec<f64> = (0..n).map(|i| x.get(i, a) * x.get(i, b)).collect();
            if !prods.contains(&g) {
                prods.push(g);
            }
        }
    }
    let m = prods.len() + 1;
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        data.push(1.0);
        for g in &prods {
            data.push(w[i] * g[i]);
        }
    }
    Ok((data, n, m))
}
