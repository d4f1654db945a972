//! Result documents, CSV tables and the plain-text summary.

use anyhow::Context;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;

/// Formats `v` with 12 significant digits, fixed notation for moderate
/// magnitudes and exponent notation otherwise.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mant.to_string()))
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub struct Meta {
    pub command: String,
    pub seed: u64,
    pub reproducible: bool,
}

pub struct Bundle {
    pub doc: Value,
    pub tables: Vec<(String, Table)>,
    pub summary: String,
    pub converged: bool,
}

impl Bundle {
    pub fn new(doc: Value) -> Self {
        Bundle {
            doc,
            tables: Vec::new(),
            summary: String::new(),
            converged: true,
        }
    }

    pub fn table(&mut self, file: &str, t: Table) {
        self.tables.push((file.into(), t));
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.summary, "{}", s.as_ref());
    }
}

pub fn document(meta: &Meta, result: Value) -> Value {
    let mut m = json!({
        "schema": crate::config::SCHEMA,
        "command": meta.command,
        "version": env!("CARGO_PKG_VERSION"),
        "rng_algorithm": doptfact::rng::RNG_ALGORITHM,
        "seed": meta.seed,
    });
    if !meta.reproducible {
        let t = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        m["timestamp"] = json!(t);
    }
    json!({ "meta": m, "result": result })
}

pub fn to_json(doc: &Value) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("json");
    s.push('\n');
    s
}

/// Writes result.json and the tables into `dir` and prints the summary, or
/// prints the JSON document when no directory is given.
pub fn emit(meta: &Meta, bundle: &Bundle, dir: Option<&Path>) -> anyhow::Result<()> {
    let doc = to_json(&document(meta, bundle.doc.clone()));
    match dir {
        None => print!("{doc}"),
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("result.json");
            std::fs::write(&path, doc).with_context(|| format!("writing {}", path.display()))?;
            for (name, t) in &bundle.tables {
                let path = dir.join(name);
                std::fs::write(&path, t.to_csv()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", bundle.summary);
        }
    }
    Ok(())
}

pub fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(num(1.0 / 6.0), "0.166666666667");
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(-3.0), "-3");
        assert_eq!(num(3.06e-7), "3.06e-7");
        assert_eq!(num(123456.0), "123456");
        assert_eq!(num(0.99999999999999), "1");
        assert_eq!(num(2e15), "2e15");
    }

    #[test]
    fn csv_uses_lf() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
