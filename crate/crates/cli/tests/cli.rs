use doptfact::criterion::{det_objective, IntAllocation};
use doptfact::model::{build_design_matrix, Link, ModelSpec};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doptfact"))
        .args(args)
        .output()
        .expect("spawn doptfact")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn ew_design_for_the_running_example() {
    let c = config("ew_2x3.json");
    let v = json(&["design", "ew", "--config", c.to_str().unwrap(), "--reproducible"]);
    let r = &v["result"];
    let p = floats(&r["allocation"]);
    assert!(p[0] < 1e-6 && p[7] < 1e-6);
    for x in &p[1..7] {
        assert!((x - 1.0 / 6.0).abs() < 1e-4);
    }
    let e = floats(&r["expected_weights"]["values"]);
    assert!((e[0] - 0.0425).abs() < 5e-4 && (e[1] - 0.1192).abs() < 5e-4);
    let eff = r["efficiency"]["ew_vs_bayes"].as_f64().unwrap();
    assert!(eff > 0.995 && eff <= 1.0 + 1e-9, "{eff}");
    assert_eq!(r["design"]["support"], serde_json::json!([2, 3, 4, 5, 6, 7]));
    assert_eq!(v["meta"]["schema"], "doptfact/1");
    assert!(v["meta"].get("timestamp").is_none());
}

#[test]
fn integer_ew_design_for_forty_runs() {
    let c = config("odor_ew.json");
    let v = json(&["design", "ew", "--config", c.to_str().unwrap(), "--integer", "40", "--no-bayes"]);
    let r = &v["result"];
    let counts: Vec<u64> = r["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<u64>(), 40);
    let ew = floats(&r["expected_weights"]["values"]);
    let x = build_design_matrix(&ModelSpec::main_effects(4, Link::Logit).unwrap());
    let mut published = vec![0u64; 16];
    for (row, n) in [
        (2, 3),
        (3, 4),
        (4, 3),
        (6, 4),
        (7, 3),
        (8, 3),
        (9, 4),
        (10, 3),
        (11, 2),
        (12, 1),
        (13, 3),
        (14, 3),
        (15, 4),
    ] {
        published[row - 1] = n;
    }
    let ours = det_objective(&x, &ew, &IntAllocation::new(counts).unwrap().proportions()).unwrap();
    let theirs =
        det_objective(&x, &ew, &IntAllocation::new(published).unwrap().proportions()).unwrap();
    assert!(ours >= theirs * (1.0 - 1e-9), "{ours} < {theirs}");
}

#[test]
fn windshield_half_fraction() {
    let c = config("windshield.json");
    let v = json(&["fraction", "--config", c.to_str().unwrap()]);
    let r = &v["result"];
    assert_eq!(r["support"], serde_json::json!([1, 2, 4, 5, 6, 7, 10, 13]));
    let p = floats(&r["allocation"]);
    for (row, want) in [(1, 0.178), (2, 0.059), (4, 0.147), (5, 0.044), (6, 0.178), (7, 0.163), (10, 0.074), (13, 0.158)] {
        assert!((p[row - 1] - want).abs() < 0.01, "row {row}");
    }
}

#[test]
fn regular_fraction_verdict_for_the_2x3_model() {
    let c = config("fraction_2x3.json");
    let out = run(&["fraction", "--config", c.to_str().unwrap(), "--out", tempfile::tempdir().unwrap().path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("regular fraction optimal: true"), "{text}");
    let v = json(&["fraction", "--config", c.to_str().unwrap()]);
    assert_eq!(v["result"]["regular_fraction"]["selected_is_regular"], true);
    assert_eq!(v["result"]["regular_fraction"]["logit_region"], true);
}

#[test]
fn region_grid_agrees_with_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    let c = config("fraction_2x3.json");
    let out = run(&["fraction", "--config", c.to_str().unwrap(), "--region-grid", grid.to_str().unwrap()]);
    assert!(out.status.success());
    let mut rd = csv::Reader::from_path(&grid).unwrap();
    let h = rd.headers().unwrap().clone();
    assert_eq!(&h, &csv::StringRecord::from(vec!["beta0", "beta3", "region", "exhaustive"]));
    let recs: Vec<_> = rd.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 3600);
    assert!(recs.iter().all(|r| r[2] == r[3]));
}

#[test]
fn zero_coefficients_give_the_uniform_design() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(
        dir.path(),
        "zero.json",
        r#"{"schema": "doptfact/1", "k": 3, "beta": [0, 0, 0, 0]}"#,
    );
    let v = json(&["design", "local", "--config", c.to_str().unwrap()]);
    for p in floats(&v["result"]["allocation"]) {
        assert!((p - 0.125).abs() < 1e-6);
    }
    assert!((v["result"]["efficiency"]["uniform_vs_design"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn reproducible_output_is_byte_identical() {
    let c = config("ew_2x3.json");
    let args = ["design", "bayes", "--config", c.to_str().unwrap(), "--reproducible", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let c = config("robust_2x4.json");
        let out = run(&["robust", "--config", c.to_str().unwrap(), "--reps", "50", "--reproducible", "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    for f in ["result.json", "losses.csv", "scenarios.csv"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"schema": "doptfact/1", "k": 2, "beta": [0, 1, 1], "colour": "red"}"#,
    );
    let out = run(&["design", "local", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let both = write(
        dir.path(),
        "both.json",
        r#"{"schema": "doptfact/1", "k": 1, "beta": [0, 1],
            "prior": [{"dist": "uniform", "lo": 0, "hi": 1}, {"dist": "uniform", "lo": 0, "hi": 1}]}"#,
    );
    assert_eq!(run(&["design", "local", "--config", both.to_str().unwrap()]).status.code(), Some(2));
    let short = write(dir.path(), "short.json", r#"{"schema": "doptfact/1", "k": 2, "beta": [0, 1]}"#);
    assert_eq!(run(&["design", "local", "--config", short.to_str().unwrap()]).status.code(), Some(2));
    let c = config("windshield.json");
    assert_eq!(run(&["design", "ew", "--config", c.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["design", "sideways", "--config", c.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn verify_round_trips_design_output() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("ew_2x3.json");
    let out = run(&["design", "ew", "--no-bayes", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["result.json", "allocation.csv"] {
        let a = dir.path().join(f);
        let v = json(&["verify", "--config", c.to_str().unwrap(), "--allocation", a.to_str().unwrap()]);
        assert_eq!(v["result"]["verdict"], "optimal", "{f}");
        assert_eq!(v["result"]["uniqueness"]["dimension"], 1);
    }
}

#[test]
fn verify_rejects_the_uniform_design() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "u.json", "[0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125]");
    let c = config("ew_2x3.json");
    let v = json(&["verify", "--config", c.to_str().unwrap(), "--allocation", a.to_str().unwrap()]);
    let r = &v["result"];
    assert_eq!(r["verdict"], "not optimal");
    assert_eq!(r["violated"].as_array().unwrap().len(), 8);
    let worst = r["per_index"]
        .as_array()
        .unwrap()
        .iter()
        .max_by(|a, b| a["value"].as_f64().unwrap().total_cmp(&b["value"].as_f64().unwrap()))
        .unwrap();
    assert!([1, 8].contains(&worst["row"].as_u64().unwrap()));
}

#[test]
fn verify_counts_csv_and_minimal_support() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.json", r#"{"schema": "doptfact/1", "k": 2, "beta": [0, 0, 0]}"#);
    let a = write(dir.path(), "a.csv", "row,n\n1,2\n2,2\n3,2\n4,2\n");
    let v = json(&["verify", "--config", c.to_str().unwrap(), "--allocation", a.to_str().unwrap()]);
    assert_eq!(v["result"]["verdict"], "optimal");
    assert_eq!(v["result"]["counts"], serde_json::json!([2, 2, 2, 2]));
    let m = write(dir.path(), "m.json", "[0.3333333333333333, 0.3333333333333333, 0.3333333333333334, 0]");
    let v = json(&["verify", "--config", c.to_str().unwrap(), "--allocation", m.to_str().unwrap()]);
    // v1 + v2 + v3 = 12 > v4 = 4
    assert_eq!(v["result"]["minimally_supported_optimal"], false);
    assert_eq!(v["result"]["verdict"], "not optimal");
}

#[test]
fn inestimable_support_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.json", "[0.25, 0.25, 0.25, 0.25, 0, 0, 0, 0]");
    let c = config("fraction_2x3.json");
    let out = run(&["verify", "--config", c.to_str().unwrap(), "--allocation", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inestimable support"));
    let wrong = write(dir.path(), "w.json", "[0.5, 0.5]");
    let out = run(&["verify", "--config", c.to_str().unwrap(), "--allocation", wrong.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn robust_with_one_replicate() {
    let c = config("robust_2x4.json");
    let v = json(&["robust", "--config", c.to_str().unwrap(), "--reps", "1", "--designs", "uniform,ebeta"]);
    let designs = v["result"]["designs"].as_array().unwrap();
    assert_eq!(designs.len(), 2);
    for d in designs {
        let q: Vec<f64> = d["quantiles"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(q.len(), 4);
        assert!(q.iter().all(|&x| x == q[0]));
    }
    let out = run(&["robust", "--config", c.to_str().unwrap(), "--reps", "1", "--designs", "wobbly"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn robust_tables() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("robust_signs.json");
    let out = run(&["robust", "--config", c.to_str().unwrap(), "--reps", "40", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("R99") && text.contains("most-robust"));
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 41);
    assert!(losses.starts_with("rep,uniform,ew,ebeta\n"));
    assert!(dir.path().join("support_histogram.csv").exists());
}

#[test]
fn weights_tables() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("windshield.json");
    let out = run(&["weights", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let curve = std::fs::read_to_string(dir.path().join("nu_curve.csv")).unwrap();
    assert!(curve.starts_with("eta,"));
    assert_eq!(curve.lines().count(), 402);
    let w = std::fs::read_to_string(dir.path().join("weights.csv")).unwrap();
    assert_eq!(w.lines().count(), 17);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    // eta for row 13 (A and B low, C and D high) is 2.27 in the windshield table
    let eta = floats(&v["result"]["eta"]);
    assert!((eta[12] - 2.3).abs() < 1e-12);
}

#[test]
fn integer_bayes_is_refused() {
    let c = config("ew_2x3.json");
    let out = run(&["design", "bayes", "--config", c.to_str().unwrap(), "--integer", "20"]);
    assert_eq!(out.status.code(), Some(2));
}
