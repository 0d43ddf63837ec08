use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rerand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rerand"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = rerand(args);
    assert!(
        out.status.success(),
        "rerand {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Smooth pseudo-random covariate value for unit `i`, column `k`.
fn cov(i: usize, k: usize) -> f64 {
    ((i * 7 + k * 13) as f64 * 0.618_034).sin() * 2.0 + ((i * k + 3) as f64).cos()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, body: &str) -> String {
        fs::write(self.path(name), body).unwrap();
        self.p(name)
    }

    fn covariates(&self, n: usize, j: usize) -> String {
        let mut s = String::from("unit_id");
        for k in 1..=j {
            write!(s, ",x{k}").unwrap();
        }
        s.push('\n');
        for i in 0..n {
            write!(s, "u{i}").unwrap();
            for k in 0..j {
                write!(s, ",{}", cov(i, k)).unwrap();
            }
            s.push('\n');
        }
        self.write("cov.csv", &s)
    }
}

#[test]
fn randomize_then_check() {
    let f = Fixture::new();
    let cov_path = f.covariates(80, 3);
    let scheme = f.write(
        "scheme.json",
        r#"{"model":"t","rule":"consensus","alpha_marginal":0.2,"alpha_joint":0.5}"#,
    );
    let out = f.p("design.json");
    ok(&[
        "randomize",
        "--covariates",
        &cov_path,
        "--arms",
        "30,50",
        "--scheme",
        &scheme,
        "--seed",
        "17",
        "--out",
        &out,
    ]);
    let design = json(Path::new(&out));
    let labels: Vec<u64> = design["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(labels.len(), 80);
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 30);
    assert_eq!(design["report"]["accepted"], Value::Bool(true));

    let again = f.p("design2.json");
    ok(&[
        "randomize",
        "--covariates",
        &cov_path,
        "--arms",
        "30,50",
        "--scheme",
        &scheme,
        "--seed",
        "17",
        "--out",
        &again,
    ]);
    assert_eq!(design, json(Path::new(&again)));

    // assignment file in reverse order, matched back by unit_id
    let mut csv = String::from("unit_id,z\n");
    for i in (0..80).rev() {
        writeln!(csv, "u{i},{}", if labels[i] == 1 { 1 } else { 0 }).unwrap();
    }
    let assign = f.write("assign.csv", &csv);
    let report = f.p("report.json");
    ok(&[
        "check",
        "--covariates",
        &cov_path,
        "--assignment",
        &assign,
        "--scheme",
        &scheme,
        "--out",
        &report,
    ]);
    let r = json(Path::new(&report));
    assert_eq!(r["accepted"], Value::Bool(true));
    assert_eq!(r["joint_pvalue"], design["report"]["joint_pvalue"]);
}

fn outcome_csv(n: usize, q: usize) -> String {
    let mut s = String::from("z,y,x1,x2\n");
    for i in 0..n {
        let z = i % q + 1;
        let (x1, x2) = (cov(i, 0), cov(i, 1));
        let y = 1.0 + 0.5 * z as f64 + 2.0 * x1 - x2 + 0.3 * cov(i, 5);
        writeln!(s, "{z},{y},{x1},{x2}").unwrap();
    }
    s
}

#[test]
fn estimate_two_arm_with_plugin() {
    let f = Fixture::new();
    let data = f.write("data.csv", &outcome_csv(120, 2));
    let scheme = f.write("scheme.json", r#"{"model":"t","rule":"joint","alpha_joint":0.55}"#);
    let plain = f.p("n.json");
    ok(&["estimate", "--data", &data, "--kind", "n", "--out", &plain]);
    let with = f.p("n_plugin.json");
    ok(&[
        "estimate",
        "--data",
        &data,
        "--kind",
        "n",
        "--plugin",
        "--scheme",
        &scheme,
        "--law-draws",
        "5000",
        "--out",
        &with,
    ]);
    let a = json(Path::new(&plain));
    let b = json(Path::new(&with));
    assert_eq!(a["point"], b["point"]);
    let width = |ci: &Value| ci["upper"].as_f64().unwrap() - ci["lower"].as_f64().unwrap();
    assert!(width(&b["plugin_ci"][0]) < width(&b["normal_ci"][0]));

    let lin = f.p("l.json");
    ok(&["estimate", "--data", &data, "--kind", "l", "--out", &lin]);
    let l = json(Path::new(&lin));
    // label 1 (treatment) adds 0.5 and label 2 adds 1.0
    assert!((l["point"][0].as_f64().unwrap() + 0.5).abs() < 0.3);
}

#[test]
fn estimate_multi_arm_contrast() {
    let f = Fixture::new();
    let data = f.write("data.csv", &outcome_csv(150, 3));
    let contrast = f.write("g.csv", "-1,1,0\n-1,0,1\n");
    let out = f.p("est.json");
    ok(&[
        "estimate",
        "--data",
        &data,
        "--kind",
        "f",
        "--contrast",
        &contrast,
        "--out",
        &out,
    ]);
    let e = json(Path::new(&out));
    let p: Vec<f64> = e["point"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(p.len(), 2);
    assert!((p[0] - 0.5).abs() < 0.3 && (p[1] - 1.0).abs() < 0.3, "{p:?}");

    let scheme = f.write("scheme.json", r#"{"model":"mlogit","rule":"joint","alpha_joint":0.5}"#);
    let pl = f.p("plugin.json");
    ok(&[
        "estimate",
        "--data",
        &data,
        "--kind",
        "n",
        "--contrast",
        &contrast,
        "--plugin",
        "--scheme",
        &scheme,
        "--law-draws",
        "3000",
        "--out",
        &pl,
    ]);
    assert_eq!(json(Path::new(&pl))["plugin_ci"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_writes_outputs() {
    let f = Fixture::new();
    let spec = f.write(
        "spec.json",
        r#"{"arm_sizes":[40,60],"j":2,"link":{"family":"cubic_sum"}}"#,
    );
    let schemes = f.write(
        "schemes.json",
        r#"[{"id":"tj","model":"t","rule":"joint","alpha_joint":0.3},{"model":"lm","rule":"marginal","alpha_marginal":0.1}]"#,
    );
    let out = f.p("sim");
    ok(&[
        "simulate",
        "--spec",
        &spec,
        "--schemes",
        &schemes,
        "--reps",
        "300",
        "--seed",
        "5",
        "--outdir",
        &out,
    ]);
    let summary = json(&f.path("sim/summary.json"));
    let ids: Vec<&str> = summary["schemes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["scheme_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["cre", "tj", "lm_marginal"]);
    let records = fs::read_to_string(f.path("sim/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 300);
    assert!(f.path("sim/histogram.csv").exists());

    let out2 = f.p("sim_re");
    ok(&[
        "simulate",
        "--spec",
        &spec,
        "--schemes",
        &schemes,
        "--reps",
        "150",
        "--seed",
        "5",
        "--outdir",
        &out2,
        "--design",
        "rerandomize",
    ]);
    let s2 = json(&f.path("sim_re/summary.json"));
    assert!(s2["schemes"].as_array().unwrap().iter().all(|s| s["accepted"] == 150));
}

#[test]
fn law_matches_sampling() {
    let f = Fixture::new();
    let out = f.p("law.json");
    ok(&["law", "--j", "4", "--alpha0", "0.7", "--out", &out]);
    let l = json(Path::new(&out));
    let (rho, sampled) = (l["rho"].as_f64().unwrap(), l["rho_sampled"].as_f64().unwrap());
    assert!((rho - sampled).abs() < 0.01);

    let cov_path = f.covariates(60, 2);
    let scheme = f.write("scheme.json", r#"{"model":"t","rule":"marginal","alpha_marginal":0.3}"#);
    let out2 = f.p("law2.json");
    ok(&[
        "law",
        "--j",
        "2",
        "--alpha0",
        "0.5",
        "--scheme",
        &scheme,
        "--covariates",
        &cov_path,
        "--arms",
        "20,40",
        "--draws",
        "20000",
        "--out",
        &out2,
    ]);
    let ratios = json(Path::new(&out2))["scheme"]["imbalance_variance_ratio"].clone();
    assert!(ratios.as_array().unwrap().iter().all(|r| r.as_f64().unwrap() < 1.0));
}

#[test]
fn bad_input_fails_cleanly() {
    let f = Fixture::new();
    let cov_path = f.covariates(20, 2);
    let scheme = f.write("scheme.json", r#"{"model":"t","rule":"joint","alpha_joint":0.5}"#);
    let out = rerand(&[
        "randomize",
        "--covariates",
        &cov_path,
        "--arms",
        "5,5",
        "--scheme",
        &scheme,
        "--seed",
        "1",
        "--out",
        &f.p("o.json"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let dup = f.write("dup.csv", "unit_id,x1\na,1\na,2\nb,3\n");
    let out = rerand(&[
        "randomize",
        "--covariates",
        &dup,
        "--arms",
        "1,2",
        "--scheme",
        &scheme,
        "--seed",
        "1",
        "--out",
        &f.p("o.json"),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate unit_id"));
}
