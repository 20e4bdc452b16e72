use std::path::Path;
use std::process::{Command, Output};

use qtl::data::parse_feature_file;
use qtl::model::Checkpoint;
use qtl::train::RunReport;

fn qtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtl"))
        .args(args)
        .env_remove("QTL_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            l.strip_prefix(key)
                .map(|v| v.split_whitespace().next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no '{key}' in output:\n{text}"))
}

fn heron() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/heron_r2.json")
        .display()
        .to_string()
}

#[test]
fn calibrate_prints_heron_parameters() {
    let o = qtl(&["calibrate", "--calibration", &heron()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!((value(&text, "gamma_1q") / 1.28e-4 - 1.0).abs() < 0.01);
    assert!((value(&text, "lambda_2q") / 1.81e-4 - 1.0).abs() < 0.01);
}

#[test]
fn fidelity_brickwall_in_window() {
    let o = qtl(&["fidelity", "--template", "brickwall", "--calibration", &heron()]);
    assert!(o.status.success());
    let text = stdout(&o);
    for key in ["estimated_fidelity", "simulated_fidelity"] {
        let f = value(&text, key);
        assert!((0.94..=0.96).contains(&f), "{key}={f}");
    }
    assert_eq!(value(&text, "two_qubit_gates"), 9.0);
}

#[test]
fn fidelity_show_prints_program() {
    let o = qtl(&["fidelity", "--template", "ring", "--show", "--draws", "1"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().take(5).collect();
    assert!(lines[0].starts_with("RY(") && lines[0].ends_with(" q0"), "{text}");
    assert_eq!(lines[4], "CNOT q0 q1");
}

#[test]
fn grad_check_ring_exact_passes() {
    let o = qtl(&[
        "grad-check",
        "--variant",
        "ring_exact",
        "--seed",
        "3",
        "--instances",
        "10",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn grad_check_fails_on_impossible_tolerance() {
    let o = qtl(&[
        "grad-check",
        "--variant",
        "ring_noisy",
        "--instances",
        "2",
        "--tol",
        "1e-30",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(qtl(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qtl(&["synth", "--d", "3"]).status.code(), Some(2));
    assert_eq!(qtl(&["fidelity", "--template", "star"]).status.code(), Some(2));
    assert_eq!(
        qtl(&["calibrate", "--calibration", "/does/not/exist.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(qtl(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_feature_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "label,d=2,C=2\n0,1,2\n1,0.5\n").unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"variant": "classical", "train_data": "bad.csv"}"#,
    )
    .unwrap();
    let o = qtl(&[
        "train",
        "--config",
        dir.path().join("cfg.json").to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.csv:3"));
}

#[test]
fn synth_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train_csv = d.join("train.csv");
    let test_csv = d.join("test.csv");
    assert!(qtl(&[
        "synth",
        "--d",
        "8",
        "--n",
        "40",
        "--sep",
        "6",
        "--seed",
        "1",
        "--out",
        train_csv.to_str().unwrap()
    ])
    .status
    .success());
    assert!(qtl(&[
        "synth",
        "--d",
        "8",
        "--n",
        "10",
        "--sep",
        "6",
        "--seed",
        "1",
        "--out",
        test_csv.to_str().unwrap()
    ])
    .status
    .success());
    assert_eq!(parse_feature_file(&train_csv).unwrap().len(), 80);

    std::fs::write(
        d.join("cfg.json"),
        r#"{"variant": "ring_exact", "train_data": "train.csv", "test_data": "test.csv",
            "val_split": 0.75, "train": {"epochs": 3, "seed": 4, "optim": {"lr": 0.01}}}"#,
    )
    .unwrap();
    let report_path = d.join("report.json");
    let o = qtl(&[
        "train",
        "--config",
        d.join("cfg.json").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.history.len(), 3);
    assert_eq!((report.train_samples, report.val_samples), (60, 20));
    assert_eq!(report.quantum_trainables, 12);
    assert!(report.config.is_some());
    let test = report.test_metrics.clone().unwrap();

    let ckpt_path = d.join("report.ckpt.json");
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.seed, 4);
    assert_eq!(ckpt.into_model().unwrap().checksum(), report.model_checksum);

    let metrics_path = d.join("metrics.json");
    let o = qtl(&[
        "evaluate",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--data",
        test_csv.to_str().unwrap(),
        "--json",
        metrics_path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "accuracy"), (test.accuracy * 1e4).round() / 1e4);
    let m: qtl::train::Metrics = serde_json::from_str(&std::fs::read_to_string(&metrics_path).unwrap()).unwrap();
    assert_eq!(m, test);
}

fn train_once(dir: &Path, tag: &str, extra: &[&str], env_seed: Option<&str>) -> serde_json::Value {
    let out = dir.join(format!("{tag}.json"));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qtl"));
    cmd.args(extra)
        .args(["train", "--config"])
        .arg(dir.join("cfg.json"))
        .arg("--out")
        .arg(&out)
        .env_remove("QTL_SEED");
    if let Some(s) = env_seed {
        cmd.env("QTL_SEED", s);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    v["wall_time_s"] = serde_json::json!(0.0);
    v
}

#[test]
fn thread_count_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    qtl::data::generate_synthetic(6, 20, 4.0, 2)
        .unwrap()
        .write(&d.join("train.csv"))
        .unwrap();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"variant": "brickwall_noisy", "train_data": "train.csv", "shots": {"shots": 128, "seed": 0},
            "train": {"epochs": 2, "seed": 1}}"#,
    )
    .unwrap();
    let one = train_once(d, "t1", &["--threads", "1"], None);
    let four = train_once(d, "t4", &["--threads", "4"], None);
    assert_eq!(one, four);
    let env = train_once(d, "env", &[], Some("77"));
    assert_eq!(env["seed"], 77);
    assert_ne!(env["model_checksum"], one["model_checksum"]);
}
