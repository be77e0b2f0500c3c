use std::fs;
use std::path::Path;
use std::process::Command;

fn addcgp(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_addcgp")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_data(path: &Path, n: usize) {
    let mut s = String::from("x1,x2,x3,y\n");
    for i in 0..n {
        let a = (i as f64 * 0.618).fract();
        let b = (i as f64 * 0.414).fract();
        let c = (i as f64 * 0.732).fract();
        s.push_str(&format!("{a},{b},{c},{}\n", (3.0 * a).atan() + b * b));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn fit_predict_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    write_data(Path::new(&p("train.csv")), 40);
    fs::write(
        p("fit.json"),
        r#"{"knots": 6, "kernels": [{"family":"matern52","variance":1.0,"lengthscale":0.5},
            {"family":"matern52","variance":1.0,"lengthscale":0.5},
            {"family":"matern52","variance":1.0,"lengthscale":0.5}], "noise": 1e-4}"#,
    )
    .unwrap();
    addcgp(&["fit", "--data", &p("train.csv"), "--config", &p("fit.json"), "--out", &p("model.json"), "--debug-qp", &p("qp.json")]);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("model.json")).unwrap()).unwrap();
    assert_eq!(model["active"].as_array().unwrap().len(), 3);
    let qp: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("qp.json")).unwrap()).unwrap();
    assert!(qp["max_violation"].as_f64().unwrap() <= 1e-9);

    let out = addcgp(&["predict", "--model", &p("model.json"), "--data", &p("train.csv")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Q²"));

    addcgp(&[
        "sample", "--model", &p("model.json"), "--data", &p("train.csv"), "--n-samples", "30", "--out", &p("draws.csv"),
        "--summary", &p("summary.json"), "--mean-model", &p("mean.json"),
    ]);
    assert_eq!(fs::read_to_string(p("draws.csv")).unwrap().lines().count(), 31);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["coefficients"].as_array().unwrap().len(), 18);
}

#[test]
fn maxmod_writes_trace_and_benchmark_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
    write_data(Path::new(&p("train.csv")), 30);
    addcgp(&[
        "maxmod", "--data", &p("train.csv"), "--holdout", &p("train.csv"), "--max-iter", "3", "--trace", &p("trace.jsonl"),
        "--out", &p("mm.json"),
    ]);
    let trace = fs::read_to_string(p("trace.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["action"]["kind"], "activate");
    assert!(first["q2"].is_number());
    let mm: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("mm.json")).unwrap()).unwrap();
    assert_eq!(mm["default_rewards"], true);

    let out = addcgp(&["benchmark", "--target", "modatan", "--d", "3", "--n", "12", "--seeds", "0,1", "--test-budget", "200"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("d,m,n,seed,wall_time_mode,wall_time_mean,q2_gp_mean,q2_cgp_mode,q2_cgp_mean"));
    assert_eq!(table.lines().count(), 3);

    addcgp(&["flood", "--n", "500", "--lhd", "20", "--out", &p("flood.csv")]);
    let flood = fs::read_to_string(p("flood.csv")).unwrap();
    assert!(flood.lines().next().unwrap().ends_with(",H"));
    assert_eq!(flood.lines().count(), 21);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_addcgp"))
        .args(["benchmark", "--target", "branin", "--seeds", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown target"));
}
