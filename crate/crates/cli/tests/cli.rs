use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DESIGN: &str = r#"{"cells":[{"assign_share":0.5,"elig_share":0.7,"propensity":0.37},{"assign_share":0.5,"elig_share":0.3,"propensity":0.8633333333333334}]}"#;
const SPEC: &str = r#"{"delta":1.0,"cost":{"kind":"power","scale":0.001,"exponent":4.0}}"#;
const DGP2_MOMENTS: &str = r#"{"family":"polynomial","moments":{"psi11":0.00079,"psi01":0.00025,"psi00":0.00033,"nu1":0.37,"elig_share":0.7},
 "mte_coeffs":[-0.0034,0.0268,-0.0288,0.003],
 "anchor":{"kind":"ate_norm","nus":[0.37,0.8633333333333334],"target":0.02432},"binary":true}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace { dir: TempDir::new().unwrap() };
        ws.write("design.json", DESIGN);
        ws.write("spec.json", SPEC);
        ws.write("moments.json", DGP2_MOMENTS);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, contents).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mtelab")).current_dir(self.dir.path()).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    /// Calibrated binary DGP2 in `cal/dgp.json`.
    fn dgp(&self) -> PathBuf {
        if !self.path("cal/dgp.json").exists() {
            self.ok(&["calibrate", "--input", "moments.json", "--out", "cal"]);
        }
        self.path("cal/dgp.json")
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn json(p: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(p)).unwrap()
}

#[test]
fn calibrate_round_trip_reproduces_moments() {
    let ws = Workspace::new();
    let dgp: mtelab::dgp::DgpSpec = serde_json::from_slice(&read(ws.dgp())).unwrap();
    let report = json(ws.path("cal/calibration_report.json"));
    let shift = report["binary_shift"].as_f64().unwrap();
    assert!(shift > 0.0);
    assert!(report["range_violation"].is_null());
    assert!(dgp.binary_outcome);
    // The binary shift moves both arms by the same constant.
    let psi01 = dgp.analytic_psi(0.37, None).unwrap().untreated.unwrap() - shift;
    let psi00 = dgp.analytic_psi(0.0, None).unwrap().untreated.unwrap() - shift;
    assert!((psi01 - 0.00025).abs() < 1e-12, "psi01 = {psi01}");
    assert!((psi00 - 0.00033).abs() < 1e-12, "psi00 = {psi00}");
    ws.ok(&["estimate", "--analytic", "--dgp", "cal/dgp.json", "--design", "design.json", "--out", "lam.json"]);
    let fit = json(ws.path("lam.json"));
    assert!(find_number(&fit, "residual").unwrap() < 1e-10);
}

#[test]
fn validate_design_reports_violations() {
    let ws = Workspace::new();
    ws.ok(&["validate-design", "--design", "design.json"]);
    ws.write(
        "bad.json",
        r#"{"cells":[{"assign_share":0.5,"elig_share":0.7,"propensity":0.37},{"assign_share":0.4,"elig_share":0.3,"propensity":0.37}]}"#,
    );
    let out = ws.run(&["validate-design", "--design", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty() || !out.stdout.is_empty());
}

#[test]
fn input_errors_exit_2() {
    let ws = Workspace::new();
    ws.write("broken.json", "{\"cells\": [");
    assert_eq!(ws.run(&["validate-design", "--design", "broken.json"]).status.code(), Some(2));
    assert_eq!(ws.run(&["validate-design", "--design", "missing.json"]).status.code(), Some(2));
    assert_eq!(ws.run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(ws.run(&["simulate", "--dgp", "x.json"]).status.code(), Some(2));
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn coincident_propensities_exit_3() {
    let ws = Workspace::new();
    let rows = "cell,z,d,n,y_sum,y_sumsq\n\
                0,0,0,1000,3,3\n0,1,0,500,2,2\n0,1,1,500,4,4\n\
                1,0,0,1000,3,3\n1,1,0,500,1,1\n1,1,1,500,5,5\n";
    ws.write("counts.csv", rows);
    let out = ws.run(&["estimate", "--counts", "counts.csv"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reproduce_exit_codes_follow_comparison() {
    let ws = Workspace::new();
    let out = ws.ok(&["reproduce", "--tables", "appendixA", "--out", "rep_a"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"), "{stdout}");
    assert!(ws.path("rep_a/reproduce.csv").exists());

    let out = ws.run(&["reproduce", "--tables", "table1", "--out", "rep_1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    assert_eq!(ws.run(&["reproduce", "--tables", "table9"]).status.code(), Some(2));
}

#[test]
fn simulate_bayes_decide_are_deterministic() {
    let ws = Workspace::new();
    ws.dgp();
    for tag in ["a", "b"] {
        let counts = format!("counts_{tag}.csv");
        ws.ok(&["simulate", "--dgp", "cal/dgp.json", "--design", "design.json", "--n", "200000", "--seed", "4", "--out", &counts]);
        ws.ok(&["bayes", "--counts", &counts, "--draws", "400", "--seed", "4", "--out", &format!("post_{tag}")]);
        ws.ok(&[
            "decide", "--spec", "spec.json", "--counts", &counts, "--draws", "400", "--seed", "4",
            "--truth", "cal/dgp.json", "--out", &format!("dec_{tag}.json"),
        ]);
    }
    for (a, b) in [("counts_a.csv", "counts_b.csv"), ("post_a/posterior.json", "post_b/posterior.json"), ("post_a/draws.csv", "post_b/draws.csv"), ("dec_a.json", "dec_b.json")] {
        assert_eq!(read(ws.path(a)), read(ws.path(b)), "{a} vs {b}");
    }
    ws.ok(&["simulate", "--dgp", "cal/dgp.json", "--design", "design.json", "--n", "200000", "--seed", "5", "--out", "counts_c.csv"]);
    assert_ne!(read(ws.path("counts_a.csv")), read(ws.path("counts_c.csv")));
}

#[test]
fn pipeline_is_deterministic_and_complete() {
    let ws = Workspace::new();
    ws.dgp();
    for out in ["p1", "p2"] {
        ws.ok(&[
            "pipeline", "--dgp", "cal/dgp.json", "--design", "design.json", "--spec", "spec.json",
            "--n", "400000", "--seed", "12", "--draws", "500", "--out", out,
        ]);
    }
    for f in ["lambda.json", "decision.json", "norms.csv", "mte_grid.csv", "summary.json", "counts.csv"] {
        assert_eq!(read(ws.path("p1").join(f)), read(ws.path("p2").join(f)), "{f}");
    }
    let grid = String::from_utf8(read(ws.path("p1/mte_grid.csv"))).unwrap();
    assert_eq!(grid.lines().count(), 1002);
}

#[test]
fn analytic_pipeline_recovers_the_optimum() {
    let ws = Workspace::new();
    ws.dgp();
    ws.ok(&["pipeline", "--dgp", "cal/dgp.json", "--design", "design.json", "--spec", "spec.json", "--analytic", "--out", "pa"]);
    let summary = serde_json::to_string(&json(ws.path("pa/summary.json"))).unwrap();
    let decision = json(ws.path("pa/decision.json"));
    let nu = find_number(&decision, "nu_star").unwrap_or_else(|| panic!("no nu_star in {summary}"));
    assert!((nu - 0.76).abs() < 0.01, "nu* = {nu}");
}

#[test]
fn sequential_is_deterministic() {
    let ws = Workspace::new();
    for out in ["s1", "s2"] {
        ws.ok(&["sequential", "--n", "100000", "--seed", "3", "--out", out]);
    }
    for f in ["sequential_counts.csv", "sequential_report.json"] {
        assert_eq!(read(ws.path("s1").join(f)), read(ws.path("s2").join(f)), "{f}");
    }
}

#[test]
fn compare_of_identical_curves_is_zero() {
    let ws = Workspace::new();
    ws.dgp();
    ws.ok(&["compare", "--truth", "cal/dgp.json", "--approx", "cal/dgp.json", "--out", "norms.json"]);
    let norms = json(ws.path("norms.json"));
    assert_eq!(find_number(&norms, "sup_norm"), Some(0.0));
}

fn find_number(v: &serde_json::Value, key: &str) -> Option<f64> {
    match v {
        serde_json::Value::Object(m) => m.get(key).and_then(|x| x.as_f64()).or_else(|| m.values().find_map(|x| find_number(x, key))),
        serde_json::Value::Array(a) => a.iter().find_map(|x| find_number(x, key)),
        _ => None,
    }
}
