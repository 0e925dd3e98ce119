use std::path::Path;
use std::process::{Command, Output};

fn driftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab")).args(args).output().expect("binary runs")
}

fn simulate_gbm(out: &Path) -> Output {
    driftlab(&[
        "simulate", "--model", "gbm", "--beta", "0.1", "--sigma", "0.3", "--x0", "1", "--t-end", "1", "--steps", "100",
        "--seed", "7", "--out", out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.csv");
    let o = simulate_gbm(&out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x"));
    assert_eq!(lines.count(), 101);
}

#[test]
fn mle_round_trip_converges() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("obs.csv");
    let o = driftlab(&[
        "simulate", "--model", "gbm", "--beta", "0.1", "--sigma", "0.3", "--t-end", "20", "--steps", "200", "--seed",
        "3", "--out", data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("fit.json");
    let o = driftlab(&["fit", "--method", "mle", "--model", "gbm", "--data", data.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["converged"], serde_json::Value::Bool(true));
    let sigma = v["theta_hat"][1].as_f64().unwrap();
    assert!((sigma - 0.3).abs() < 0.06, "sigma {sigma}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(simulate_gbm(&a).status.success());
    assert!(simulate_gbm(&b).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let fa = dir.path().join("fa.json");
    let fb = dir.path().join("fb.json");
    for f in [&fa, &fb] {
        let o = driftlab(&["fit", "--method", "ee", "--model", "gbm", "--fixed", "sigma", "--j", "50", "--data", a.to_str().unwrap(), "--seed", "5", "--out", f.to_str().unwrap()]);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(3));
    }
    assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noisy.csv");
    let o = driftlab(&[
        "simulate", "--model", "ou", "--gamma", "1", "--sigma", "0.5", "--t-end", "10", "--steps", "20", "--obs-scale",
        "0.2", "--seed", "11", "--out", data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("filter{threads}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_driftlab"))
            .env("DRIFTLAB_THREADS", threads)
            .args(["filter", "--model", "ou", "--obs-scale", "0.2", "--n-particles", "300", "--seed", "2"])
            .args(["--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "model = gbm\n[simulate]\nsteps = 10\nbogus_key = 1\n").unwrap();
    let out = dir.path().join("p.csv");
    let o = driftlab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
    assert!(!out.exists());
}

#[test]
fn config_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "model = brownian\nseed = 4\n[simulate]\nsteps = 10\n").unwrap();
    let out = dir.path().join("p.csv");
    let o = driftlab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 12);
    let o = driftlab(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "25", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 27);
}

#[test]
fn validation_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let missing = dir.path().join("missing.csv");
    let o = driftlab(&["fit", "--model", "gbm", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = driftlab(&["simulate", "--model", "heston", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = driftlab(&["simulate", "--model", "gbm", "--sigma", "-1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn collocate_and_diagnose_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noisy.csv");
    let o = driftlab(&[
        "simulate", "--model", "gbm", "--beta", "0.5", "--sigma", "0.05", "--t-end", "4", "--steps", "40", "--obs-scale",
        "0.02", "--seed", "9", "--out", data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let fit = dir.path().join("coll.json");
    let traj = dir.path().join("traj.csv");
    let o = driftlab(&[
        "collocate", "--model", "gbm", "--fixed", "sigma", "--lambda", "100", "--obs-scale", "0.02", "--report-points", "11",
        "--data", data.to_str().unwrap(), "--out", fit.to_str().unwrap(), "--trajectory-out", traj.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert!((v["theta_hat"][0].as_f64().unwrap() - 0.5).abs() < 0.1);
    assert_eq!(v["weight_mode"], "unweighted");
    let t = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(t.lines().next(), Some("t,x_fit,dxdt_fit"));
    assert_eq!(t.lines().count(), 12);

    let report = dir.path().join("report.json");
    let o = driftlab(&[
        "diagnose", "--model", "gbm", "--noisy", "true", "--obs-scale", "0.02", "--k", "30", "--seed", "1", "--fit",
        fit.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["replicates"], 30);
}
