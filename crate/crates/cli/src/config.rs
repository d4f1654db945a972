//! Run configuration: the JSON file format and its resolution into library
//! types.

use anyhow::{bail, Context};
use doptfact::bayes::{Prior, PriorSpec, QuadMethod, QuadratureConfig};
use doptfact::model::{build_design_matrix, DesignMatrix, Link, ModelSpec};
use doptfact::optimize::{Mode, OptimizerConfig};
use serde::Deserialize;
use serde_json::Value;
use std::path::Path;

use crate::Invalid;

pub const SCHEMA: &str = "doptfact/1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: String,
    factors: Option<Vec<String>>,
    k: Option<usize>,
    effects: Option<Vec<String>>,
    link: Option<Link>,
    beta: Option<Value>,
    prior: Option<Value>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    optimizer: OptimizerSettings,
    #[serde(default)]
    quadrature: QuadSettings,
    bayes_samples: Option<usize>,
    n_total: Option<u64>,
    m: Option<usize>,
    reps: Option<usize>,
    quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OptimizerSettings {
    max_rounds: usize,
    tol_rel: f64,
    residual_tol: f64,
    mode: Mode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSettings {
            max_rounds: d.max_rounds,
            tol_rel: d.tol_rel,
            residual_tol: d.residual_tol,
            mode: d.mode,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct QuadSettings {
    method: QuadMethod,
    nodes_per_dim: usize,
    samples: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        let d = QuadratureConfig::default();
        QuadSettings {
            method: d.method,
            nodes_per_dim: d.nodes_per_dim,
            samples: d.samples,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Params {
    Beta(Vec<f64>),
    Prior(PriorSpec),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub x: DesignMatrix,
    pub factors: Vec<String>,
    /// "intercept" followed by effect labels such as "A" or "A:B".
    pub labels: Vec<String>,
    pub params: Params,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub quadrature: QuadratureConfig,
    pub bayes_samples: usize,
    pub n_total: Option<u64>,
    pub m: Option<usize>,
    pub reps: Option<usize>,
    pub quantiles: Vec<f64>,
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
}

fn parse_effect(label: &str, names: &[String]) -> anyhow::Result<Vec<usize>> {
    let mut e = Vec::new();
    for part in label.split(':') {
        let part = part.trim();
        let Some(i) = names.iter().position(|n| n == part) else {
            bail!(Invalid(format!(
                "effect '{label}': unknown factor '{part}' (factors are {})",
                names.join(", ")
            )));
        };
        e.push(i + 1);
    }
    e.sort_unstable();
    Ok(e)
}

fn effect_label(e: &[usize], names: &[String]) -> String {
    if e.is_empty() {
        return "intercept".into();
    }
    e.iter().map(|&i| names[i - 1].as_str()).collect::<Vec<_>>().join(":")
}

// A parameter list given either positionally or keyed by effect label.
fn by_label<T: serde::de::DeserializeOwned>(
    what: &str,
    v: Value,
    spec: &ModelSpec,
    names: &[String],
    labels: &[String],
) -> anyhow::Result<Vec<T>> {
    match v {
        Value::Array(_) => {
            let list: Vec<T> = serde_json::from_value(v).map_err(|e| Invalid(format!("{what}: {e}")))?;
            if list.len() != labels.len() {
                bail!(Invalid(format!(
                    "{what} has {} entries but the model has {} parameters ({})",
                    list.len(),
                    labels.len(),
                    labels.join(", ")
                )));
            }
            Ok(list)
        }
        Value::Object(map) => {
            let mut slots: Vec<Option<T>> = (0..labels.len()).map(|_| None).collect();
            for (key, val) in map {
                let idx = if key == "intercept" {
                    0
                } else {
                    let e = parse_effect(&key, names)?;
                    match spec.effects().iter().position(|f| *f == e) {
                        Some(i) => i,
                        None => bail!(Invalid(format!("{what}: '{key}' is not a model effect"))),
                    }
                };
                if slots[idx].is_some() {
                    bail!(Invalid(format!("{what}: '{key}' given twice")));
                }
                let t: T = serde_json::from_value(val).map_err(|e| Invalid(format!("{what}.{key}: {e}")))?;
                slots[idx] = Some(t);
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| Invalid(format!("{what}: missing '{}'", labels[i])).into()))
                .collect()
        }
        _ => bail!(Invalid(format!("{what} must be an array or an object"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Invalid(e.to_string()))?;
        if raw.schema != SCHEMA {
            bail!(Invalid(format!("schema must be \"{SCHEMA}\", got \"{}\"", raw.schema)));
        }
        let names = match (raw.factors, raw.k) {
            (Some(f), Some(k)) if f.len() != k => {
                bail!(Invalid(format!("k = {k} but {} factor names given", f.len())))
            }
            (Some(f), _) => f,
            (None, Some(k)) if (1..=16).contains(&k) => default_names(k),
            (None, Some(k)) => bail!(Invalid(format!("k must be in 1..=16, got {k}"))),
            (None, None) => bail!(Invalid("give either factors or k".into())),
        };
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(':') || n == "intercept" {
                bail!(Invalid(format!("bad factor name '{n}'")));
            }
            if names[..i].contains(n) {
                bail!(Invalid(format!("duplicate factor name '{n}'")));
            }
        }
        let k = names.len();
        let link = raw.link.unwrap_or(Link::Logit);
        let spec = match raw.effects {
            None => ModelSpec::main_effects(k, link)?,
            Some(list) => {
                let mut effects = vec![vec![]];
                for l in &list {
                    effects.push(parse_effect(l, &names)?);
                }
                ModelSpec::new(k, effects, link)?
            }
        };
        let labels: Vec<String> = spec.effects().iter().map(|e| effect_label(e, &names)).collect();
        let params = match (raw.beta, raw.prior) {
            (Some(_), Some(_)) => bail!(Invalid("give beta or prior, not both".into())),
            (Some(b), None) => {
                let beta: Vec<f64> = by_label("beta", b, &spec, &names, &labels)?;
                if beta.iter().any(|v| !v.is_finite()) {
                    bail!(Invalid("beta values must be finite".into()));
                }
                Params::Beta(beta)
            }
            (None, Some(p)) => {
                let priors: Vec<Prior> = by_label("prior", p, &spec, &names, &labels)?;
                Params::Prior(PriorSpec::new(priors)?)
            }
            (None, None) => bail!(Invalid("give beta or prior".into())),
        };
        let o = raw.optimizer;
        let optimizer = OptimizerConfig {
            max_rounds: o.max_rounds,
            tol_rel: o.tol_rel,
            residual_tol: o.residual_tol,
            seed: raw.seed,
            mode: o.mode,
            ..OptimizerConfig::default()
        };
        optimizer.validate()?;
        let q = raw.quadrature;
        let quadrature = QuadratureConfig {
            method: q.method,
            nodes_per_dim: q.nodes_per_dim,
            samples: q.samples,
            seed: 0,
        };
        quadrature.validate()?;
        let quantiles = raw
            .quantiles
            .unwrap_or_else(|| doptfact::robust::DEFAULT_LEVELS.to_vec());
        if quantiles.is_empty() || quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            bail!(Invalid("quantiles must be a nonempty list in [0, 1]".into()));
        }
        let bayes_samples = raw.bayes_samples.unwrap_or(10_000);
        if bayes_samples == 0 {
            bail!(Invalid("bayes_samples must be positive".into()));
        }
        let x = build_design_matrix(&spec);
        let mut cfg = RunConfig {
            spec,
            x,
            factors: names,
            labels,
            params,
            seed: 0,
            optimizer,
            quadrature,
            bayes_samples,
            n_total: raw.n_total,
            m: raw.m,
            reps: raw.reps,
            quantiles,
        };
        cfg.set_seed(raw.seed);
        Ok(cfg)
    }

    /// Master seed; the quadrature shift is derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.optimizer.seed = seed;
        self.quadrature.seed = doptfact::rng::derive_seed(seed, "quadrature", 0);
    }

    pub fn beta(&self) -> anyhow::Result<&[f64]> {
        match &self.params {
            Params::Beta(b) => Ok(b),
            Params::Prior(_) => bail!(Invalid("this command needs beta values, not a prior".into())),
        }
    }

    pub fn prior(&self) -> anyhow::Result<&PriorSpec> {
        match &self.params {
            Params::Prior(p) => Ok(p),
            Params::Beta(_) => bail!(Invalid("this command needs a prior, not beta values".into())),
        }
    }

    /// Levels of row `i` as +1/-1 per factor.
    pub fn levels(&self, i: usize) -> Vec<f64> {
        let k = self.spec.k();
        (1..=k).map(|j| doptfact::model::level(k, i, j)).collect()
    }
}
