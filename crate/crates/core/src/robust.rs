//! Relative loss of efficiency over simulated coefficient scenarios.

use crate::bayes::PriorSpec;
use crate::criterion::{Allocation, Evaluator};
use crate::error::{check_len, Error, Result};
use crate::fraction::LOSS_SLACK;
use crate::model::{weights, DesignMatrix, ModelSpec};
use crate::optimize::{lift_one_modified, OptimizerConfig};
use crate::rng::rng_for;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Simulated weight vectors with their locally optimal designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenarios {
    pub betas: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub optima: Vec<Allocation>,
    pub log_opt: Vec<f64>,
}

impl Scenarios {
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Draws `reps` coefficient vectors (replicate r seeded from
/// `derive_seed(seed, "robust", r)`) and solves each local problem.
pub fn simulate_scenarios(
    spec: &ModelSpec,
    x: &DesignMatrix,
    prior: &PriorSpec,
    reps: usize,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<Scenarios> {
    check_len("prior", spec.n_params(), prior.len())?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, Allocation, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, "robust", r as u64);
            let beta = prior.sample(&mut rng);
            let w = weights(spec, x, &beta)?;
            let opt = lift_one_modified(x, &w, config)?;
            Ok((beta, w, opt.proportions(), opt.log_objective))
        })
        .collect::<Result<_>>()?;
    let mut s = Scenarios {
        betas: Vec::with_capacity(reps),
        weights: Vec::with_capacity(reps),
        optima: Vec::with_capacity(reps),
        log_opt: Vec::with_capacity(reps),
    };
    for (b, w, p, l) in rows {
        s.betas.push(b);
        s.weights.push(w);
        s.optima.push(p);
        s.log_opt.push(l);
    }
    Ok(s)
}

pub const DEFAULT_LEVELS: [f64; 4] = [0.90, 0.95, 0.99, 1.0];

/// Quantile with linear interpolation between order statistics
/// (h = (n-1)q); `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Key used for a quantile level in reports, e.g. "R99" or "R99.5".
pub fn level_key(q: f64) -> String {
    let pct = q * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("R{}", pct.round() as i64)
    } else {
        format!("R{pct}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub losses: Vec<f64>,
    pub quantiles: BTreeMap<String, f64>,
    pub mean: f64,
    pub sd: f64,
}

fn losses_for(x: &DesignMatrix, scen: &Scenarios, p: &Allocation) -> Result<Vec<f64>> {
    check_len("allocation", x.n_rows(), p.len())?;
    let c = x.n_cols() as f64;
    let mut ev = Evaluator::new(x, &scen.weights[0])?;
    let mut out = Vec::with_capacity(scen.len());
    for (w, &lo) in scen.weights.iter().zip(&scen.log_opt) {
        ev.set_weights(w)?;
        let lp = ev.log_f(p.as_slice());
        let r = 1.0 - ((lp - lo) / c).exp();
        if r < -LOSS_SLACK {
            return Err(Error::Internal(format!(
                "design beats the scenario optimum (loss {r})"
            )));
        }
        out.push(r.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Loss quantiles, mean and sd of design `p` over the scenarios.
pub fn robustness_report(
    x: &DesignMatrix,
    scen: &Scenarios,
    p: &Allocation,
    levels: &[f64],
) -> Result<RobustnessReport> {
    if scen.is_empty() {
        return Err(Error::InvalidArgument("no scenarios".into()));
    }
    let losses = losses_for(x, scen, p)?;
    let mut sorted = losses.clone();
    sorted.sort_by(f64::total_cmp);
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let sd = if losses.len() > 1 {
        (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let quantiles = levels
        .iter()
        .map(|&q| (level_key(q), quantile(&sorted, q)))
        .collect();
    Ok(RobustnessReport {
        losses,
        quantiles,
        mean,
        sd,
    })
}

/// Simulates scenarios from the prior and reports the losses of `p`.
pub fn robustness_scan(
    spec: &ModelSpec,
    x: &DesignMatrix,
    p: &Allocation,
    prior: &PriorSpec,
    reps: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    let scen = simulate_scenarios(spec, x, prior, reps, seed, &OptimizerConfig::default())?;
    robustness_report(x, &scen, p, &DEFAULT_LEVELS)
}

/// For every level, the smallest quantile attained by any scenario's own
/// optimal design over the whole scenario set.
pub fn best_scenario_optimum(
    x: &DesignMatrix,
    scen: &Scenarios,
    levels: &[f64],
) -> Result<BTreeMap<String, f64>> {
    let per: Vec<Vec<f64>> = scen
        .optima
        .par_iter()
        .map(|p| {
            let mut l = losses_for(x, scen, p)?;
            l.sort_by(f64::total_cmp);
            Ok(levels.iter().map(|&q| quantile(&l, q)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let m = per.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            (level_key(q), m)
        })
        .collect())
}
