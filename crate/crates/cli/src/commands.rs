//! Subcommand implementations. Rows are reported 1-based.

use anyhow::{bail, Context};
use doptfact::bayes::{
    bayes_design, bayes_objective, expected_weights, relative_efficiency, EfficiencyReport,
    ExpectedWeights, FrozenSample,
};
use doptfact::criterion::{subset_det, uniqueness_rank, Allocation, Evaluator, IntAllocation};
use doptfact::fraction::{
    best_half_fraction, fraction_select, regular_fraction_optimal_23,
    regular_fraction_region_logit_23, Strategy,
};
use doptfact::model::{nu, weights, Link, ModelSpec};
use doptfact::optimize::{
    lift_one_modified, optimize, verify_minimally_supported, verify_optimal, DesignAllocation,
    DesignReport, Mode, VERIFY_TOL,
};
use doptfact::robust::{best_scenario_optimum, level_key, robustness_report, simulate_scenarios};
use doptfact::Error;
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{Params, RunConfig};
use crate::output::{num, pct, Bundle, Table};
use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DesignKind {
    Local,
    Ew,
    Bayes,
}

fn rows1(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|i| i + 1).collect()
}

fn allocation_table(
    cfg: &RunConfig,
    wname: &str,
    w: &[f64],
    p: &[f64],
    counts: Option<&[u64]>,
) -> Table {
    let mut header = vec!["row".to_string()];
    header.extend(cfg.factors.iter().cloned());
    header.push(wname.into());
    header.push("p".into());
    if counts.is_some() {
        header.push("n".into());
    }
    let mut t = Table::new(header);
    for i in 0..p.len() {
        let mut r = vec![(i + 1).to_string()];
        r.extend(cfg.levels(i).iter().map(|&v| num(v)));
        r.push(num(w[i]));
        r.push(num(p[i]));
        if let Some(c) = counts {
            r.push(c[i].to_string());
        }
        t.push(r);
    }
    t
}

fn report_json(r: &DesignReport) -> Value {
    let p = r.proportions();
    let mut v = json!({
        "allocation": p.as_slice(),
        "objective": r.objective,
        "log_objective": r.log_objective,
        "support": rows1(&p.support()),
        "support_size": r.support_size,
        "rounds_used": r.rounds_used,
        "converged": r.converged,
    });
    if let DesignAllocation::Integer(n) = &r.allocation {
        v["counts"] = json!(n.counts());
        v["n_total"] = json!(n.total());
    }
    if let Some(ver) = &r.verification {
        v["verification"] = json!({
            "optimal": ver.optimal,
            "max_violation": ver.max_violation,
            "tol": ver.tol,
            "violated": rows1(&ver.violated_indices()),
        });
    }
    v
}

fn counts_of(r: &DesignReport) -> Option<&[u64]> {
    match &r.allocation {
        DesignAllocation::Integer(n) => Some(n.counts()),
        DesignAllocation::Real(_) => None,
    }
}

fn log_f(cfg: &RunConfig, w: &[f64], p: &Allocation) -> anyhow::Result<f64> {
    Ok(Evaluator::new(&cfg.x, w)?.log_f(p.as_slice()))
}

fn ew_json(e: &ExpectedWeights) -> Value {
    json!({
        "values": e.values,
        "error": e.error,
        "max_error": e.max_error(),
        "method": e.method,
        "evaluations": e.evaluations,
    })
}

/// Weights for commands that accept either beta or a prior: w(beta) or E(w).
fn working_weights(cfg: &RunConfig) -> anyhow::Result<(Vec<f64>, &'static str, Option<Value>)> {
    match &cfg.params {
        Params::Beta(b) => Ok((weights(&cfg.spec, &cfg.x, b)?, "w", None)),
        Params::Prior(p) => {
            let e = expected_weights(&cfg.spec, &cfg.x, p, &cfg.quadrature)?;
            let j = ew_json(&e);
            Ok((e.values, "E(w)", Some(j)))
        }
    }
}

fn summary_design(b: &mut Bundle, cfg: &RunConfig, title: &str, r: &DesignReport) {
    b.line(title);
    b.line(format!(
        "  log objective {}   support {} of {}   rounds {}   converged {}",
        num(r.log_objective),
        r.support_size,
        cfg.x.n_rows(),
        r.rounds_used,
        r.converged
    ));
    let p = r.proportions();
    let counts = counts_of(r);
    for i in p.support() {
        let lv: String = cfg
            .levels(i)
            .iter()
            .map(|&v| if v > 0.0 { '+' } else { '-' })
            .collect();
        match counts {
            Some(c) => b.line(format!("  row {:>3}  {lv}  n = {}", i + 1, c[i])),
            None => b.line(format!("  row {:>3}  {lv}  p = {:.4}", i + 1, p.as_slice()[i])),
        }
    }
    if let Some(v) = &r.verification {
        let what = if counts.is_some() { "proportions as a continuous design" } else { "verification" };
        b.line(format!(
            "  {what}: {} (max violation {:.2e})",
            if v.optimal { "optimal" } else { "not optimal" },
            v.max_violation
        ));
    }
}

pub fn design(
    cfg: &RunConfig,
    kind: DesignKind,
    integer: Option<u64>,
    no_bayes: bool,
) -> anyhow::Result<Bundle> {
    let x = &cfg.x;
    let d = x.d();
    let n = x.n_rows();
    let mut opt = cfg.optimizer.clone();
    let n_total = match integer {
        Some(t) => {
            opt.mode = Mode::ExchangeInt;
            Some(t)
        }
        None => cfg.n_total,
    };
    if opt.mode == Mode::ExchangeInt && n_total.is_none() {
        bail!(Invalid("integer exchange needs --integer or n_total".into()));
    }
    let uniform = Allocation::uniform(n);
    let mut result = Map::new();
    let mut b;
    match kind {
        DesignKind::Local => {
            let beta = cfg.beta()?;
            let w = weights(&cfg.spec, x, beta)?;
            let r = optimize(x, &w, &opt, n_total)?;
            let p = r.proportions();
            let eff = relative_efficiency(log_f(cfg, &w, &uniform)?, log_f(cfg, &w, &p)?, d);
            result.insert("kind".into(), json!("local"));
            result.insert("beta".into(), json!(beta));
            result.insert("weights".into(), json!(w));
            result.insert("efficiency".into(), json!({ "uniform_vs_design": eff }));
            b = Bundle::new(Value::Null);
            b.converged = r.converged;
            summary_design(&mut b, cfg, "locally D-optimal design", &r);
            b.line(format!("  uniform design efficiency {}", pct(eff)));
            b.table("allocation.csv", allocation_table(cfg, "w", &w, p.as_slice(), counts_of(&r)));
            result.insert("design".into(), report_json(&r));
        }
        DesignKind::Ew => {
            let prior = cfg.prior()?;
            let e = expected_weights(&cfg.spec, x, prior, &cfg.quadrature)?;
            let r = optimize(x, &e.values, &opt, n_total)?;
            let p = r.proportions();
            let eff = relative_efficiency(
                log_f(cfg, &e.values, &uniform)?,
                log_f(cfg, &e.values, &p)?,
                d,
            );
            result.insert("kind".into(), json!("ew"));
            result.insert("expected_weights".into(), ew_json(&e));
            b = Bundle::new(Value::Null);
            b.converged = r.converged;
            summary_design(&mut b, cfg, "EW D-optimal design", &r);
            b.line(format!("  uniform design efficiency under E(w) {}", pct(eff)));
            let mut effs = json!({ "uniform_vs_design": eff });
            if !no_bayes {
                let sample = FrozenSample::monte_carlo(&cfg.spec, x, prior, cfg.bayes_samples, cfg.seed)?;
                let bay = bayes_design(x, &sample, &cfg.optimizer)?;
                b.converged &= bay.converged;
                let mut phi = BTreeMap::new();
                phi.insert("ew".to_string(), bayes_objective(x, &sample, &p)?);
                phi.insert("uniform".to_string(), bayes_objective(x, &sample, &uniform)?);
                phi.insert("bayes".to_string(), bay.log_objective);
                let ew_b = EfficiencyReport::new(phi.clone(), "ew", "bayes", d)?;
                let un_b = EfficiencyReport::new(phi, "uniform", "bayes", d)?;
                b.line(format!(
                    "  relative efficiency vs Bayes design: EW {}   uniform {}",
                    pct(ew_b.relative_efficiency),
                    pct(un_b.relative_efficiency)
                ));
                effs["ew_vs_bayes"] = json!(ew_b.relative_efficiency);
                effs["uniform_vs_bayes"] = json!(un_b.relative_efficiency);
                effs["phi"] = json!(ew_b.phi_values);
                effs["bayes_samples"] = json!(sample.len());
                result.insert("bayes_design".into(), report_json(&bay));
            }
            result.insert("efficiency".into(), effs);
            b.table(
                "allocation.csv",
                allocation_table(cfg, "E(w)", &e.values, p.as_slice(), counts_of(&r)),
            );
            result.insert("design".into(), report_json(&r));
        }
        DesignKind::Bayes => {
            if integer.is_some() {
                bail!(Invalid("--integer applies to local and ew designs only".into()));
            }
            let prior = cfg.prior()?;
            let sample = FrozenSample::monte_carlo(&cfg.spec, x, prior, cfg.bayes_samples, cfg.seed)?;
            let r = bayes_design(x, &sample, &cfg.optimizer)?;
            let p = r.proportions();
            let mut phi = BTreeMap::new();
            phi.insert("uniform".to_string(), bayes_objective(x, &sample, &uniform)?);
            phi.insert("bayes".to_string(), r.log_objective);
            let un_b = EfficiencyReport::new(phi, "uniform", "bayes", d)?;
            result.insert("kind".into(), json!("bayes"));
            result.insert(
                "efficiency".into(),
                json!({
                    "uniform_vs_design": un_b.relative_efficiency,
                    "phi": un_b.phi_values,
                    "bayes_samples": sample.len(),
                }),
            );
            b = Bundle::new(Value::Null);
            b.converged = r.converged;
            summary_design(&mut b, cfg, "Bayes D-optimal design", &r);
            b.line(format!("  uniform design efficiency {}", pct(un_b.relative_efficiency)));
            let mw = sample.mean_weights();
            b.table("allocation.csv", allocation_table(cfg, "mean w", &mw, p.as_slice(), None));
            result.insert("design".into(), report_json(&r));
        }
    }
    let dj = result["design"].clone();
    result.insert("allocation".into(), dj["allocation"].clone());
    if let Some(c) = dj.get("counts") {
        result.insert("counts".into(), c.clone());
    }
    result.insert("labels".into(), json!(cfg.labels));
    b.doc = Value::Object(result);
    Ok(b)
}

const REGULAR_23: [[usize; 4]; 2] = [[0, 3, 5, 6], [1, 2, 4, 7]];

fn is_main_effects(spec: &ModelSpec) -> bool {
    ModelSpec::main_effects(spec.k(), spec.link()).is_ok_and(|m| m == *spec)
}

fn is_regular_23(support: &[usize]) -> bool {
    REGULAR_23.iter().any(|r| r[..] == *support)
}

pub fn fraction(
    cfg: &RunConfig,
    m: Option<usize>,
    strategy: Strategy,
    region_grid: Option<&Path>,
) -> anyhow::Result<Bundle> {
    let x = &cfg.x;
    let d = x.d();
    let Some(m) = m.or(cfg.m) else {
        bail!(Invalid("fraction size missing: give --m or m in the config".into()));
    };
    let (w, wname, ew) = working_weights(cfg)?;
    let frac = fraction_select(x, &w, m, strategy)?;
    let opt = lift_one_modified(x, &w, &cfg.optimizer)?;
    let eff = relative_efficiency(frac.log_objective, opt.log_objective, d);
    let mut b = Bundle::new(Value::Null);
    b.converged = opt.converged;
    let mut result = json!({
        "m": m,
        "strategy": strategy,
        "weights": w,
        "support": rows1(&frac.support),
        "allocation": frac.allocation.as_slice(),
        "log_objective": frac.log_objective,
        "estimable": frac.estimable,
        "heuristic": frac.heuristic,
        "efficiency_vs_optimum": eff,
        "optimum": report_json(&opt),
    });
    if let Some(e) = ew {
        result["expected_weights"] = e;
    }
    b.line(format!("fraction of {m} rows ({strategy:?})"));
    b.line(format!("  support {:?}", rows1(&frac.support)));
    b.line(format!(
        "  efficiency vs unrestricted optimum {}   estimable {}",
        pct(eff),
        frac.estimable
    ));
    let main23 = cfg.spec.k() == 3 && is_main_effects(&cfg.spec);
    if main23 {
        let by_weights = match regular_fraction_optimal_23(&w) {
            Ok(v) => Some(v),
            Err(Error::HypothesisViolated(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let region = match (&cfg.params, cfg.spec.link()) {
            (Params::Beta(bt), Link::Logit) if bt[1] == 0.0 => {
                Some(regular_fraction_region_logit_23(bt[0], bt[2], bt[3]))
            }
            _ => None,
        };
        let verdict = region.or(by_weights);
        result["regular_fraction"] = json!({
            "optimal": verdict,
            "weights_condition": by_weights,
            "logit_region": region,
            "selected_is_regular": is_regular_23(&frac.support),
        });
        if let Some(v) = verdict {
            b.line(format!("  regular fraction optimal: {v}"));
        }
    }
    if let Some(path) = region_grid {
        if !main23 || cfg.spec.link() != Link::Logit {
            bail!(Invalid("--region-grid needs the 2^3 main-effects logit model".into()));
        }
        let t = region_grid_table(&cfg.spec, cfg)?;
        std::fs::write(path, t.to_csv()?)
            .with_context(|| format!("writing {}", path.display()))?;
        b.line(format!("  region grid written to {}", path.display()));
    }
    b.table(
        "fraction.csv",
        allocation_table(cfg, wname, &w, frac.allocation.as_slice(), None),
    );
    b.doc = result;
    Ok(b)
}

pub const GRID_N: usize = 60;
pub const GRID_LIM: f64 = 6.0;

/// Cell-centre grid over (beta0, beta3) in [-6, 6]^2 with beta1 = beta2 = 0:
/// the closed-form region next to the exhaustive half-fraction search.
fn region_grid_table(spec: &ModelSpec, cfg: &RunConfig) -> anyhow::Result<Table> {
    let mut t = Table::new(["beta0", "beta3", "region", "exhaustive"]);
    let h = 2.0 * GRID_LIM / GRID_N as f64;
    for i in 0..GRID_N {
        let b0 = -GRID_LIM + (i as f64 + 0.5) * h;
        for j in 0..GRID_N {
            let b3 = -GRID_LIM + (j as f64 + 0.5) * h;
            let w = weights(spec, &cfg.x, &[b0, 0.0, 0.0, b3])?;
            let best = best_half_fraction(&cfg.x, &w)?;
            let region = regular_fraction_region_logit_23(b0, 0.0, b3);
            t.push(vec![
                num(b0),
                num(b3),
                (region as u8).to_string(),
                (is_regular_23(&best.support) as u8).to_string(),
            ]);
        }
    }
    Ok(t)
}

pub fn robust(cfg: &RunConfig, designs: &[String], reps: Option<usize>) -> anyhow::Result<Bundle> {
    let x = &cfg.x;
    let n = x.n_rows();
    let prior = cfg.prior()?;
    let Some(reps) = reps.or(cfg.reps) else {
        bail!(Invalid("replicate count missing: give --reps or reps in the config".into()));
    };
    if designs.is_empty() {
        bail!(Invalid("no designs listed".into()));
    }
    let scen = simulate_scenarios(&cfg.spec, x, prior, reps, cfg.seed, &cfg.optimizer)?;
    let mut b = Bundle::new(Value::Null);
    let mut out = Vec::new();
    let mut columns: Vec<(String, BTreeMap<String, f64>, Option<(f64, f64)>)> = Vec::new();
    let mut losses_t = vec!["rep".to_string()];
    let mut loss_cols: Vec<Vec<f64>> = Vec::new();
    for name in designs {
        let p = match name.as_str() {
            "uniform" => Some(Allocation::uniform(n)),
            "ew" => {
                let e = expected_weights(&cfg.spec, x, prior, &cfg.quadrature)?;
                let r = lift_one_modified(x, &e.values, &cfg.optimizer)?;
                b.converged &= r.converged;
                Some(r.proportions())
            }
            "ebeta" => {
                let w = weights(&cfg.spec, x, &prior.mean())?;
                let r = lift_one_modified(x, &w, &cfg.optimizer)?;
                b.converged &= r.converged;
                Some(r.proportions())
            }
            "bayes" => {
                let sample = FrozenSample::monte_carlo(&cfg.spec, x, prior, cfg.bayes_samples, cfg.seed)?;
                let r = bayes_design(x, &sample, &cfg.optimizer)?;
                b.converged &= r.converged;
                Some(r.proportions())
            }
            "most-robust" => None,
            other => bail!(Invalid(format!(
                "unknown design '{other}' (use uniform, ew, ebeta, bayes, most-robust)"
            ))),
        };
        match p {
            Some(p) => {
                let rep = robustness_report(x, &scen, &p, &cfg.quantiles)?;
                out.push(json!({
                    "design": name,
                    "allocation": p.as_slice(),
                    "quantiles": rep.quantiles,
                    "mean": rep.mean,
                    "sd": rep.sd,
                }));
                columns.push((name.clone(), rep.quantiles.clone(), Some((rep.mean, rep.sd))));
                losses_t.push(name.clone());
                loss_cols.push(rep.losses);
            }
            None => {
                let q = best_scenario_optimum(x, &scen, &cfg.quantiles)?;
                out.push(json!({ "design": name, "quantiles": q }));
                columns.push((name.clone(), q, None));
            }
        }
    }
    let sizes: Vec<usize> = scen.optima.iter().map(Allocation::support_size).collect();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in &sizes {
        *hist.entry(s).or_default() += 1;
    }
    let mean_support = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    b.doc = json!({
        "reps": reps,
        "levels": cfg.quantiles,
        "designs": out,
        "support_size": { "mean": mean_support, "histogram": hist },
    });

    let mut lt = Table::new(losses_t);
    for r in 0..scen.len() {
        let mut row = vec![r.to_string()];
        row.extend(loss_cols.iter().map(|c| num(c[r])));
        lt.push(row);
    }
    b.table("losses.csv", lt);
    let mut st = Table::new(
        ["rep", "support_size", "log_objective"]
            .into_iter()
            .map(String::from)
            .chain(cfg.labels.iter().cloned()),
    );
    for r in 0..scen.len() {
        let mut row = vec![r.to_string(), sizes[r].to_string(), num(scen.log_opt[r])];
        row.extend(scen.betas[r].iter().map(|&v| num(v)));
        st.push(row);
    }
    b.table("scenarios.csv", st);
    let mut ht = Table::new(["support_size", "count"]);
    for (s, c) in &hist {
        ht.push(vec![s.to_string(), c.to_string()]);
    }
    b.table("support_histogram.csv", ht);

    b.line(format!("relative loss of efficiency over {reps} scenarios"));
    let mut head = format!("  {:<8}", "");
    for (name, _, _) in &columns {
        head.push_str(&format!("{name:>12}"));
    }
    b.line(head);
    let mut levels = cfg.quantiles.clone();
    levels.sort_by(|a, b| b.total_cmp(a));
    for q in levels {
        let key = level_key(q);
        let mut line = format!("  {key:<8}");
        for (_, qs, _) in &columns {
            line.push_str(&format!("{:>12.3}", qs[&key]));
        }
        b.line(line);
    }
    for (label, pick) in [("mean", 0), ("sd", 1)] {
        let mut line = format!("  {label:<8}");
        for (_, _, ms) in &columns {
            match ms {
                Some(v) => line.push_str(&format!("{:>12.3}", if pick == 0 { v.0 } else { v.1 })),
                None => line.push_str(&format!("{:>12}", "-")),
            }
        }
        b.line(line);
    }
    b.line(format!("  mean support size of scenario optima {mean_support:.3}"));
    Ok(b)
}

/// Reads proportions or run counts from CSV (column `n` or `p`, optionally
/// with a 1-based `row` column) or JSON (an array, or an object holding
/// `counts`/`n` or `allocation`/`p`, possibly under `result`).
pub fn read_allocation(path: &Path, n: usize) -> anyhow::Result<(Allocation, Option<Vec<u64>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json")
        || text.trim_start().starts_with(['[', '{']);
    let (values, counts_col) = if is_json {
        parse_json_allocation(&text)?
    } else {
        parse_csv_allocation(&text, n)?
    };
    if values.len() != n {
        bail!(Invalid(format!("allocation has {} entries, the design has {n} rows", values.len())));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        bail!(Invalid("allocation entries must be finite and nonnegative".into()));
    }
    let integral = values.iter().all(|v| v.fract() == 0.0);
    let sum: f64 = values.iter().sum();
    if counts_col || (integral && sum > 1.0) {
        if !integral {
            bail!(Invalid("run counts must be whole numbers".into()));
        }
        let c: Vec<u64> = values.iter().map(|&v| v as u64).collect();
        let a = IntAllocation::new(c.clone())?;
        return Ok((a.proportions(), Some(c)));
    }
    Ok((Allocation::normalized(values, 1e-6)?, None))
}

fn parse_json_allocation(text: &str) -> anyhow::Result<(Vec<f64>, bool)> {
    let v: Value = serde_json::from_str(text).map_err(|e| Invalid(format!("allocation: {e}")))?;
    let nums = |v: &Value| -> anyhow::Result<Vec<f64>> {
        serde_json::from_value(v.clone()).map_err(|e| Invalid(format!("allocation: {e}")).into())
    };
    match &v {
        Value::Array(_) => Ok((nums(&v)?, false)),
        Value::Object(_) => {
            let obj = v.get("result").unwrap_or(&v);
            for (key, counts) in [("counts", true), ("n", true), ("allocation", false), ("p", false)] {
                if let Some(a) = obj.get(key) {
                    return Ok((nums(a)?, counts));
                }
            }
            bail!(Invalid("allocation JSON needs counts, n, allocation or p".into()))
        }
        _ => bail!(Invalid("allocation JSON must be an array or an object".into())),
    }
}

fn parse_csv_allocation(text: &str, n: usize) -> anyhow::Result<(Vec<f64>, bool)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Invalid(format!("allocation: {e}")))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let (col, counts) = match (find("n"), find("p")) {
        (Some(c), _) => (c, true),
        (None, Some(c)) => (c, false),
        _ => bail!(Invalid("allocation CSV needs a column named n or p".into())),
    };
    let row_col = find("row");
    let mut vals = vec![f64::NAN; n];
    let mut seen = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Invalid(format!("allocation: {e}")))?;
        let v: f64 = rec[col]
            .parse()
            .map_err(|_| Invalid(format!("allocation line {}: bad number '{}'", line + 2, &rec[col])))?;
        let i = match row_col {
            Some(rc) => {
                let r: usize = rec[rc]
                    .parse()
                    .map_err(|_| Invalid(format!("allocation line {}: bad row", line + 2)))?;
                if r == 0 || r > n {
                    bail!(Invalid(format!("allocation row {r} out of range 1..={n}")));
                }
                r - 1
            }
            None => line,
        };
        if i >= n {
            bail!(Invalid(format!("allocation has more than {n} rows")));
        }
        if !vals[i].is_nan() {
            bail!(Invalid(format!("allocation row {} given twice", i + 1)));
        }
        vals[i] = v;
        seen += 1;
    }
    if seen != n {
        bail!(Invalid(format!("allocation lists {seen} rows, the design has {n}")));
    }
    Ok((vals, counts))
}

pub fn verify(cfg: &RunConfig, path: &Path) -> anyhow::Result<Bundle> {
    let x = &cfg.x;
    let (p, counts) = read_allocation(path, x.n_rows())?;
    let (w, wname, ew) = working_weights(cfg)?;
    let support = p.support();
    if support.len() == x.n_cols() && subset_det(x, &support).abs() < 0.5 {
        return Err(Error::SingularSupport)
            .with_context(|| format!("inestimable support {:?}", rows1(&support)));
    }
    let ver = verify_optimal(x, &w, &p, VERIFY_TOL)?;
    let (rank, dim) = uniqueness_rank(x, &w)?;
    let ps = p.as_slice();
    let uniform_on_support = ps
        .iter()
        .filter(|&&v| v > 0.0)
        .all(|&v| (v - 1.0 / support.len() as f64).abs() < 1e-9);
    let minimal = if support.len() == x.n_cols() && uniform_on_support {
        Some(verify_minimally_supported(x, &w, &support)?)
    } else {
        None
    };
    let violated = rows1(&ver.violated_indices());
    let verdict = if ver.optimal { "optimal" } else { "not optimal" };
    let per_index: Vec<Value> = (0..ps.len())
        .map(|i| {
            json!({
                "row": i + 1,
                "p": ps[i],
                "condition": ver.tags[i],
                "value": ver.violations[i],
            })
        })
        .collect();
    let mut doc = json!({
        "verdict": verdict,
        "optimal": ver.optimal,
        "max_violation": ver.max_violation,
        "tol": ver.tol,
        "violated": violated,
        "allocation": ps,
        "weights": w,
        "log_objective": log_f(cfg, &w, &p)?,
        "per_index": per_index,
        "uniqueness": { "rank": rank, "dimension": dim, "unique": dim == 0 },
        "minimally_supported_optimal": minimal,
    });
    if let Some(c) = &counts {
        doc["counts"] = json!(c);
    }
    if let Some(e) = ew {
        doc["expected_weights"] = e;
    }
    let mut b = Bundle::new(doc);
    b.line(format!("verdict: {verdict}"));
    if !violated.is_empty() {
        b.line(format!("  violated at rows {violated:?}"));
    }
    b.line(format!("  max violation {:.3e} (tol {:.0e})", ver.max_violation, ver.tol));
    b.line(format!(
        "  Schur-product rank {rank}; optimal allocations form a set of dimension {dim}"
    ));
    let mut t = Table::new(["row", wname, "p", "condition", "value"]);
    for i in 0..ps.len() {
        let tag = serde_json::to_value(ver.tags[i])?;
        t.push(vec![
            (i + 1).to_string(),
            num(w[i]),
            num(ps[i]),
            tag.as_str().unwrap_or_default().to_string(),
            num(ver.violations[i]),
        ]);
    }
    b.table("verify.csv", t);
    Ok(b)
}

pub const NU_ETA_MAX: f64 = 10.0;
pub const NU_STEPS: usize = 400;

pub fn weights_cmd(cfg: &RunConfig) -> anyhow::Result<Bundle> {
    let x = &cfg.x;
    let (w, wname, ew) = working_weights(cfg)?;
    let mut doc = json!({ "link": cfg.spec.link(), "labels": cfg.labels, "weights": w });
    let mut header: Vec<String> = vec!["row".into()];
    header.extend(cfg.factors.iter().cloned());
    let eta = match &cfg.params {
        Params::Beta(b) => {
            let e = doptfact::model::linear_predictor(x, b)?;
            doc["eta"] = json!(e);
            header.push("eta".into());
            Some(e)
        }
        Params::Prior(_) => None,
    };
    header.push(wname.into());
    if ew.is_some() {
        header.push("error".into());
    }
    let errs: Option<Vec<f64>> = ew
        .as_ref()
        .map(|e| serde_json::from_value(e["error"].clone()))
        .transpose()?;
    if let Some(e) = ew {
        doc["expected_weights"] = e;
    }
    let mut t = Table::new(header);
    for i in 0..x.n_rows() {
        let mut r = vec![(i + 1).to_string()];
        r.extend(cfg.levels(i).iter().map(|&v| num(v)));
        if let Some(e) = &eta {
            r.push(num(e[i]));
        }
        r.push(num(w[i]));
        if let Some(e) = &errs {
            r.push(num(e[i]));
        }
        t.push(r);
    }
    let mut b = Bundle::new(doc);
    b.line(format!("{wname} per design point ({} link)", cfg.spec.link()));
    for i in 0..x.n_rows() {
        b.line(format!("  row {:>3}  {}", i + 1, num(w[i])));
    }
    b.table("weights.csv", t);
    b.table("nu_curve.csv", nu_curve());
    Ok(b)
}

/// nu(eta) for every link on an even grid over [-10, 10].
pub fn nu_curve() -> Table {
    let mut t = Table::new(
        std::iter::once("eta".to_string()).chain(Link::ALL.iter().map(|l| l.name().to_string())),
    );
    for s in 0..=NU_STEPS {
        let eta = -NU_ETA_MAX + 2.0 * NU_ETA_MAX * s as f64 / NU_STEPS as f64;
        let mut r = vec![num(eta)];
        r.extend(Link::ALL.iter().map(|&l| num(nu(l, eta))));
        t.push(r);
    }
    t
}
