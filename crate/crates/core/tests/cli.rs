use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn alefn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alefn")).current_dir(dir).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn describe_eguchi_hanson() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "eh.toml", "[metric]\nfamily = \"eguchi_hanson\"\na = 1.0\n");
    let out = alefn(t.path(), &["describe", "--metric", &c, "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n            4"), "{text}");
    assert!(text.contains("|Γ|          2"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("o/describe.json")).unwrap()).unwrap();
    let beta = json["result"]["ale_order"]["beta_fit"].as_f64().unwrap();
    assert!((beta - 4.0).abs() < 0.1, "{beta}");
    let csv = fs::read_to_string(t.path().join("o/describe.csv")).unwrap();
    assert!(csv.starts_with("rho,g_rr,v,scal\n"));
}

#[test]
fn cone_mu_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "cone.toml", "[metric]\nfamily = \"flat_cone\"\ngamma_order = 2\n");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let out = alefn(t.path(), &["functional", "mu", "--tau", "1", "--metric", &c, "--out", "o"]);
        assert_eq!(out.status.code(), Some(0));
        reports.push(fs::read(t.path().join("o/functional_mu.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let json: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    let mu = json["result"][0]["value"].as_f64().unwrap();
    assert!((mu + 2f64.ln()).abs() < 1e-3, "{mu}");
    assert_eq!(json["config"]["grid"]["q"].as_f64(), Some(1.02));
}

#[test]
fn sweep_on_cone_writes_table() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "cone.toml", "[metric]\nfamily = \"flat_cone\"\ngamma_order = 2\n");
    let out = alefn(t.path(), &["sweep", "--metric", &c, "--tau", "1e2:1e6:6", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(t.path().join("o/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("tau,w,prediction,residual"));
}

#[test]
fn config_errors_exit_three() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "bad.toml", "[metric]\nfamily = \"flat_cone\"\n\n[grid]\nqq = 1.1\n");
    let out = alefn(t.path(), &["describe", "--metric", &c]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("qq") && err.contains("line 5"), "{err}");
    let c = config(t.path(), "ok.toml", "[metric]\nfamily = \"flat_cone\"\n");
    let out = alefn(t.path(), &["describe", "--metric", &c, "--tol", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flagged_flow_exits_two() {
    let t = tempfile::tempdir().unwrap();
    let text = "[metric]\nfamily = \"conformal\"\nm = 2.0\nk = 0.1\nell = 0.5\n\
                [transform]\nradial_gauge = true\n\
                [flow]\nhorizon = 0.05\nlevels = 10\nsnapshots = 3\nt0s = [0.05]\n";
    let c = config(t.path(), "flow.toml", text);
    let out = alefn(t.path(), &["flow", "--metric", &c, "--out", "o", "--tol", "mass_drift=1e-14"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(t.path().join("o/flow.csv")).unwrap();
    assert!(csv.starts_with("t,mass,beta_fit,lambda_ale,lambda_dym_t0=0.05,defect"));
}
