use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcixnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the tool (metadata and header skipped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = run(dir.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["fcix", "egc", "emh", "netstats", "synth"] {
        assert!(text.contains(sub));
    }
    let egc_help = String::from_utf8_lossy(&run(dir.path(), &["egc", "--help"]).stdout).into_owned();
    for flag in ["--series", "--alpha", "--bootstrap", "--seed", "--lags", "--heatmaps", "--out"] {
        assert!(egc_help.contains(flag), "{flag}");
    }
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(dir.path(), &["fcix", "--prices", "p.csv"])), 2);
}

#[test]
fn constant_prices_give_zero_fcix() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("date,A,B,C\n");
    for d in 1..=6 {
        text.push_str(&format!("2021-03-0{d},100,100,100\n"));
    }
    std::fs::write(dir.path().join("p.csv"), text).unwrap();
    ok(dir.path(), &["fcix", "--prices", "p.csv", "--out", "f.csv"]);
    let body = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(body.starts_with("# {"));
    let r = rows(&dir.path().join("f.csv"));
    assert_eq!(r.len(), 5);
    for row in r {
        assert!(row[1].parse::<f64>().unwrap().abs() <= 1e-12, "{row:?}");
    }
}

#[test]
fn dispersion_spike_is_the_fcix_maximum() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.json"),
        r#"{"assets": 30, "regimes": [{"start": 25, "end": 26, "dispersion": 0.08}]}"#,
    )
    .unwrap();
    ok(dir.path(), &["synth", "panel", "--spec", "spec.json", "--length", "50", "--seed", "4", "--out", "p.csv"]);
    ok(dir.path(), &["fcix", "--prices", "p.csv", "--out", "f.csv", "--factors", "factors.json"]);
    let truth = json(&dir.path().join("p.truth.json"));
    let r = rows(&dir.path().join("f.csv"));
    let best = r
        .iter()
        .max_by(|a, b| a[1].parse::<f64>().unwrap().total_cmp(&b[1].parse::<f64>().unwrap()))
        .unwrap();
    assert_eq!(best[0], truth["peak_date"].as_str().unwrap());
    let factors = json(&dir.path().join("factors.json"));
    assert_eq!(factors["factors"][0]["z"].as_array().unwrap().len(), 49);
    assert_eq!(factors["meta"]["command"], "fcix");
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["fcix", "--prices", "nowhere/prices.csv", "--out", "f.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere/prices.csv"), "{}", stderr(&o));
}

#[test]
fn bad_price_cell_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.csv"), "date,AAPL,IBM\n1990-01-02,1,2\n1990-01-03,-1,2\n").unwrap();
    let o = run(dir.path(), &["fcix", "--prices", "p.csv", "--out", "f.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("AAPL") && stderr(&o).contains("1990-01-03"));
}

#[test]
fn exhausted_sweeps_exit_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), r#"{"assets": 10, "base_dispersion": 0.05}"#).unwrap();
    ok(dir.path(), &["synth", "panel", "--spec", "spec.json", "--length", "30", "--seed", "1", "--out", "p.csv"]);
    let o = run(dir.path(), &["fcix", "--prices", "p.csv", "--out", "f.csv", "--max-sweeps", "1", "--tol", "1e-15"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

const TRUTH: &str = r#"{"lags": [[[0.3, 0.0, 0.0], [0.6, 0.3, 0.0], [0.0, 0.0, 0.3]]]}"#;

#[test]
fn egc_network_heatmaps_and_score() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), TRUTH).unwrap();
    ok(dir.path(), &["synth", "var", "--spec", "t.json", "--length", "800", "--seed", "2", "--out", "d.csv"]);
    ok(
        dir.path(),
        &["egc", "--series", "d.csv", "--bootstrap", "200", "--seed", "3", "--out", "net.json", "--heatmaps", "hm"],
    );
    let net = json(&dir.path().join("net.json"));
    assert_eq!(net["meta"]["seed"], 3);
    assert_eq!(net["meta"]["resolved"]["lags"], 1);
    let lagged: Vec<(String, String)> = net["edges"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "lagged")
        .map(|e| (e["src"].as_str().unwrap().to_string(), e["dst"].as_str().unwrap().to_string()))
        .collect();
    assert_eq!(lagged, vec![("X0".to_string(), "X1".to_string())]);
    for kind in ["lagged", "instantaneous"] {
        for what in ["measure", "prob"] {
            let r = rows(&dir.path().join(format!("hm_{kind}_{what}.csv")));
            assert_eq!(r.len(), 3);
            assert!(r.iter().all(|row| row.len() == 4));
        }
    }
    let score: Value = serde_json::from_str(&ok(dir.path(), &["score", "--truth", "d.truth.json", "--network", "net.json"])).unwrap();
    assert_eq!(score["lagged"]["recall"], 1.0);
    assert_eq!(score["lagged"]["precision"], 1.0);
}

#[test]
fn egc_contract_violations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), TRUTH).unwrap();
    ok(dir.path(), &["synth", "var", "--spec", "t.json", "--length", "100", "--seed", "2", "--out", "d.csv"]);
    let zero = run(dir.path(), &["egc", "--series", "d.csv", "--bootstrap", "0", "--seed", "1", "--out", "n.json"]);
    assert_eq!(code(&zero), 2);
    let unseeded = run(dir.path(), &["egc", "--series", "d.csv", "--out", "n.json"]);
    assert_eq!(code(&unseeded), 2);
    let bad_lags = run(dir.path(), &["egc", "--series", "d.csv", "--lags", "zero", "--seed", "1", "--out", "n.json"]);
    assert_eq!(code(&bad_lags), 2);
    let column = run(dir.path(), &["egc", "--series", "d.csv", "--columns", "X0,NOPE", "--seed", "1", "--out", "n.json"]);
    assert_eq!(code(&column), 2);
    assert!(stderr(&column).contains("NOPE"));
}

#[test]
fn emh_with_monthly_news_pvalues_fails_to_reject() {
    let dir = tempfile::tempdir().unwrap();
    let p = "label,p\nEPU,0.081\nMON,0.564\nFIS,0.034\nTAX,0.114\nGOV,0.012\nHLTH,0.681\nSEC,0.239\nENT,0.788\nGREG,0.706\nTRD,0.528\nCPI,0.229\n";
    std::fs::write(dir.path().join("p.csv"), p).unwrap();
    let out = ok(dir.path(), &["emh", "--pvalues-file", "p.csv", "--method", "fisher", "--alpha", "0.01", "--out", "r.json"]);
    assert!(out.contains("T_F = 35.15") && out.contains("df = 22") && out.contains("fail_to_reject"), "{out}");
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["decision"], "fail_to_reject");
    assert!((r["statistic"].as_f64().unwrap() - 35.214).abs() <= 0.2);
    assert!((r["joint_p"].as_f64().unwrap() - 0.037).abs() <= 0.005);
}

#[test]
fn emh_bonferroni_rejects_with_reported_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.csv"), "label,p\nEMV,0.000\nEPU,0.036\n").unwrap();
    let out = ok(dir.path(), &["emh", "--pvalues-file", "p.csv", "--method", "bonferroni", "--alpha", "0.01"]);
    assert!(out.contains("-> reject"), "{out}");
    assert!(out.contains("0.001996"), "{out}");
    let unknown = run(dir.path(), &["emh", "--pvalues-file", "p.csv", "--method", "simes"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn emh_from_series() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), TRUTH).unwrap();
    ok(dir.path(), &["synth", "var", "--spec", "t.json", "--length", "600", "--seed", "5", "--out", "d.csv"]);
    let out = ok(
        dir.path(),
        &[
            "emh", "--series", "d.csv", "--target", "X1", "--news", "X0,X2", "--method", "bonferroni", "--bootstrap",
            "300", "--seed", "9", "--out", "r.json",
        ],
    );
    assert!(out.contains("-> reject"), "{out}");
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["components"][0]["p_value"].as_f64().unwrap(), 1.0 / 301.0);
    let missing = run(dir.path(), &["emh", "--series", "d.csv", "--target", "X9", "--news", "X0", "--seed", "1"]);
    assert_eq!(code(&missing), 2);
}

fn network(nodes: &[&str], edges: &[(&str, &str)]) -> String {
    let e: Vec<Value> = edges
        .iter()
        .map(|(s, d)| serde_json::json!({"src": s, "dst": d, "kind": "lagged", "measure": 0.1, "p": 0.001}))
        .collect();
    serde_json::json!({"nodes": nodes, "alpha": 0.01, "edges": e}).to_string()
}

#[test]
fn netstats_four_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let net = network(&["a", "b", "c", "d"], &[("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")]);
    std::fs::write(dir.path().join("n.json"), net).unwrap();
    ok(dir.path(), &["netstats", "--network", "n.json", "--out", "s.csv", "--dot", "n.dot"]);
    let g = json(&dir.path().join("s.global.json"));
    assert_eq!(g["diameter"], 3);
    assert_eq!(g["average_path_length"], 2.0);
    assert_eq!(g["density"].as_f64().unwrap(), 1.0 / 3.0);
    let dot = std::fs::read_to_string(dir.path().join("n.dot")).unwrap();
    assert!(dot.starts_with("// {") && dot.contains("digraph"));
    assert_eq!(rows(&dir.path().join("s.csv")).len(), 4);
}

#[test]
fn netstats_single_edge_hub_and_authority() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("n.json"), network(&["a", "b"], &[("a", "b")])).unwrap();
    ok(dir.path(), &["netstats", "--network", "n.json", "--out", "s.csv"]);
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(header, ["node", "authority", "hub", "pagerank", "betweenness", "bridging"]);
    let r = rows(&dir.path().join("s.csv"));
    let v = |row: usize, col: usize| r[row][col].parse::<f64>().unwrap();
    assert_eq!((v(0, 1), v(0, 2)), (0.0, 1.0));
    assert_eq!((v(1, 1), v(1, 2)), (1.0, 0.0));
}

#[test]
fn malformed_network_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("n.json"), r#"{"nodes": ["a"], "edges": [oops"#).unwrap();
    let o = run(dir.path(), &["netstats", "--network", "n.json", "--out", "s.csv"]);
    assert_eq!(code(&o), 2);
    std::fs::write(dir.path().join("n.json"), network(&["a", "b"], &[("a", "z")])).unwrap();
    assert_eq!(code(&run(dir.path(), &["netstats", "--network", "n.json", "--out", "s.csv"])), 2);
    let o = run(dir.path(), &["netstats", "--network", "n.json", "--out", "s.csv", "--kinds", "total"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_var_reruns_and_white_noise() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("z.json"), r#"{"lags": [[[0, 0], [0, 0]]], "seed": 99}"#).unwrap();
    ok(dir.path(), &["synth", "var", "--spec", "z.json", "--length", "4000", "--seed", "1", "--out", "a.csv"]);
    ok(dir.path(), &["synth", "var", "--spec", "z.json", "--length", "4000", "--seed", "1", "--out", "a2.csv", "--truth", "a.truth.json.2"]);
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("a2.csv")).unwrap();
    // only the recorded output paths differ
    let strip = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));

    let r = rows(&dir.path().join("a.csv"));
    let x: Vec<f64> = r.iter().map(|row| row[1].parse().unwrap()).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    assert!((cov / var).abs() <= 5.0 / n.sqrt());
    let truth = json(&dir.path().join("a.truth.json"));
    assert_eq!(truth["lagged"].as_array().unwrap().len(), 0);
    assert_eq!(truth["meta"]["seed"], 1);
}

#[test]
fn unstable_spec_reports_spectral_radius() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.json"), r#"{"lags": [[[0.9, 0.5], [0.5, 0.9]]]}"#).unwrap();
    let o = run(dir.path(), &["synth", "var", "--spec", "u.json", "--length", "100", "--seed", "1", "--out", "u.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("spectral radius 1.400000"), "{}", stderr(&o));
    assert!(!dir.path().join("u.csv").exists());
}
