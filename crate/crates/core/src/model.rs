//! Factorial model specification, canonical design matrix and GLM weights.

use crate::error::{check_len, Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

/// Link function of the binary-response GLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
    Loglog,
    Cloglog,
}

impl Link {
    pub const ALL: [Link; 4] = [Link::Logit, Link::Probit, Link::Loglog, Link::Cloglog];

    pub fn name(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
            Link::Loglog => "loglog",
            Link::Cloglog => "cloglog",
        }
    }

    /// Location of the maximum of nu.
    pub fn nu_argmax(self) -> f64 {
        match self {
            Link::Logit | Link::Probit => 0.0,
            Link::Cloglog => cloglog_argmax(),
            Link::Loglog => -cloglog_argmax(),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            "loglog" | "log-log" => Ok(Link::Loglog),
            "cloglog" | "complementary-log-log" => Ok(Link::Cloglog),
            _ => Err(Error::InvalidModel(format!("unknown link '{s}'"))),
        }
    }
}

// Solves t = 2(1 - e^{-t}); the cloglog weight peaks at eta = ln t.
fn cloglog_argmax() -> f64 {
    let mut t: f64 = 1.6;
    for _ in 0..50 {
        let g = t - 2.0 * (1.0 - (-t).exp());
        let dg = 1.0 - 2.0 * (-t).exp();
        let step = g / dg;
        t -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    t.ln()
}

/// Number of factors, effect list and link. Effects hold 1-based factor
/// indices; the intercept is the empty effect and always comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    k: usize,
    effects: Vec<Vec<usize>>,
    link: Link,
}

/// Largest supported number of factors.
pub const MAX_FACTORS: usize = 16;

impl ModelSpec {
    pub fn new(k: usize, effects: Vec<Vec<usize>>, link: Link) -> Result<Self> {
        if k == 0 || k > MAX_FACTORS {
            return Err(Error::InvalidModel(format!(
                "number of factors must be in 1..={MAX_FACTORS}, got {k}"
            )));
        }
        let mut norm: Vec<Vec<usize>> = Vec::with_capacity(effects.len());
        for e in effects {
            let mut e = e;
            e.sort_unstable();
            if e.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidModel(format!(
                    "effect {e:?} repeats a factor"
                )));
            }
            if let Some(&f) = e.iter().find(|&&f| f == 0 || f > k) {
                return Err(Error::InvalidModel(format!(
                    "factor index {f} out of range 1..={k}"
                )));
            }
            if norm.contains(&e) {
                return Err(Error::InvalidModel(format!("duplicate effect {e:?}")));
            }
            norm.push(e);
        }
        if norm.first().map_or(true, |e| !e.is_empty()) {
            return Err(Error::InvalidModel(
                "the intercept must be listed first".into(),
            ));
        }
        if norm.len() < 2 {
            return Err(Error::InvalidModel(
                "the model needs at least one effect besides the intercept".into(),
            ));
        }
        if norm.len() > 1usize << k {
            return Err(Error::InvalidModel(format!(
                "{} parameters exceed the {} design points",
                norm.len(),
                1usize << k
            )));
        }
        Ok(ModelSpec {
            k,
            effects: norm,
            link,
        })
    }

    /// Intercept plus all k main effects.
    pub fn main_effects(k: usize, link: Link) -> Result<Self> {
        let mut effects = vec![vec![]];
        effects.extend((1..=k).map(|j| vec![j]));
        Self::new(k, effects, link)
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn effects(&self) -> &[Vec<usize>] {
        &self.effects
    }
    pub fn link(&self) -> Link {
        self.link
    }
    pub fn with_link(&self, link: Link) -> Self {
        ModelSpec {
            link,
            ..self.clone()
        }
    }
    /// Number of non-intercept parameters.
    pub fn d(&self) -> usize {
        self.effects.len() - 1
    }
    pub fn n_params(&self) -> usize {
        self.effects.len()
    }
    pub fn n_points(&self) -> usize {
        1 << self.k
    }
}

/// Level (+1 or -1) of factor `factor` (1-based) in row `row` (0-based).
pub fn level(k: usize, row: usize, factor: usize) -> f64 {
    if (row >> (k - factor)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Row-major model matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    /// Arbitrary rows; used for toy models and restricted supports.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidModel("empty design matrix".into()));
        }
        if cols > rows.len() {
            return Err(Error::InvalidModel(format!(
                "{cols} columns exceed {} rows",
                rows.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("design matrix row", cols, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("non-finite design entry".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(DesignMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }
    pub fn n_cols(&self) -> usize {
        self.cols
    }
    pub fn d(&self) -> usize {
        self.cols - 1
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
    /// Submatrix made of the listed rows.
    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Canonical 2^k x (d+1) matrix: row i encodes i in binary with factor 1 as
/// the most significant bit, bit 0 meaning level +1.
pub fn build_design_matrix(spec: &ModelSpec) -> DesignMatrix {
    let k = spec.k;
    let rows = spec.n_points();
    let cols = spec.n_params();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for e in &spec.effects {
            data.push(e.iter().map(|&f| level(k, r, f)).product());
        }
    }
    DesignMatrix { rows, cols, data }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_phi(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

// Mills ratio Q(x)/phi(x) by backward continued fraction, x > 6.
fn mills_ratio(x: f64) -> f64 {
    let mut t = 0.0;
    for n in (1..=80).rev() {
        t = n as f64 / (x + t);
    }
    1.0 / (x + t)
}

fn log_nu_probit(eta: f64) -> f64 {
    let x = eta.abs();
    if x <= 6.0 {
        let q = 0.5 * erfc(x * FRAC_1_SQRT_2);
        2.0 * log_phi(x) - (1.0 - q).ln() - q.ln()
    } else {
        let r = mills_ratio(x);
        let q = (log_phi(x) + r.ln()).exp();
        log_phi(x) - (-q).ln_1p() - r.ln()
    }
}

// ln(expm1(t)) for t = e^eta without overflow or underflow.
fn ln_expm1_exp(eta: f64) -> f64 {
    if eta < -12.0 {
        let t = eta.exp();
        eta + (t / 2.0 + t * t / 6.0).ln_1p()
    } else {
        let t = eta.exp();
        if t > 30.0 {
            t + (-(-t).exp()).ln_1p()
        } else {
            t.exp_m1().ln()
        }
    }
}

/// Natural log of nu(eta); finite for every finite eta.
pub fn log_nu(link: Link, eta: f64) -> f64 {
    match link {
        Link::Logit => {
            let a = eta.abs();
            -a - 2.0 * (-a).exp().ln_1p()
        }
        Link::Probit => log_nu_probit(eta),
        Link::Cloglog => 2.0 * eta - ln_expm1_exp(eta),
        Link::Loglog => -2.0 * eta - ln_expm1_exp(-eta),
    }
}

/// GLM information weight nu(eta) = (dpi/deta)^2 / (pi (1 - pi)).
pub fn nu(link: Link, eta: f64) -> f64 {
    if link == Link::Logit && eta.abs() < 30.0 {
        let e = eta.exp();
        return 1.0 / (2.0 + e + 1.0 / e);
    }
    log_nu(link, eta).exp()
}

/// Upper bound of nu for each link: 1/4, 2/pi, and the cloglog peak value.
pub fn nu_max(link: Link) -> f64 {
    match link {
        Link::Logit => 0.25,
        Link::Probit => 2.0 / PI,
        _ => nu(link, link.nu_argmax()),
    }
}

/// Per-row linear predictors X beta.
pub fn linear_predictor(x: &DesignMatrix, beta: &[f64]) -> Result<Vec<f64>> {
    check_len("coefficient vector", x.n_cols(), beta.len())?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("non-finite coefficient".into()));
    }
    Ok((0..x.n_rows())
        .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// w_i = nu(x_i' beta).
pub fn weights(spec: &ModelSpec, x: &DesignMatrix, beta: &[f64]) -> Result<Vec<f64>> {
    check_len("coefficient vector", spec.n_params(), beta.len())?;
    Ok(linear_predictor(x, beta)?
        .into_iter()
        .map(|eta| nu(spec.link, eta))
        .collect())
}

/// Range [a, b] of the weights over all rows when each coefficient ranges
/// over its own interval.
pub fn weight_range(spec: &ModelSpec, boxes: &[(f64, f64)]) -> Result<(f64, f64)> {
    check_len("coefficient boxes", spec.n_params(), boxes.len())?;
    for &(lo, hi) in boxes {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "empty or unbounded interval [{lo}, {hi}]"
            )));
        }
    }
    let x = build_design_matrix(spec);
    let link = spec.link;
    let peak = link.nu_argmax();
    let mut wmin = f64::INFINITY;
    let mut wmax = 0.0f64;
    for i in 0..x.n_rows() {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (xv, &(bl, bh)) in x.row(i).iter().zip(boxes) {
            let (a, b) = (xv * bl, xv * bh);
            lo += a.min(b);
            hi += a.max(b);
        }
        wmin = wmin.min(nu(link, lo)).min(nu(link, hi));
        wmax = wmax.max(nu(link, peak.clamp(lo, hi)));
    }
    Ok((wmin, wmax))
}
