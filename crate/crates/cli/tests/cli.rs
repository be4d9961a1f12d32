use std::path::Path;
use std::process::{Command, Output};

use frscn::linalg::MatrixRecord;
use frscn::model::ModelMeta;
use frscn::{Activation, FrscnModel, FuzzyRuleBank, ModelKind, NormalizationStats, SubReservoir, TimeSeriesDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn frscn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frscn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = frscn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

/// Small generated task in `dir/data`.
fn small_task(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&["gen-data", "--out", s(&data), "--sizes", "400,300,300", "--seed", "4"]);
    data
}

#[test]
fn gen_data_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-data", "--out", s(&a)]);
    ok(&["gen-data", "--out", s(&b)]);
    assert_eq!(rows(&a.join("train.csv")), 2000);
    assert_eq!(rows(&a.join("val.csv")), 1000);
    assert_eq!(rows(&a.join("test.csv")), 1000);
    for f in ["train.csv", "val.csv", "test.csv", "meta.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["washout"], 100);
    assert_eq!(meta["modes"]["test"], "paper-test");
}

#[test]
fn gen_data_sizes_flag() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--out", s(dir.path()), "--sizes", "200,100,100"]);
    assert_eq!(rows(&dir.path().join("train.csv")), 200);
    assert_eq!(rows(&dir.path().join("val.csv")), 100);
    assert_eq!(rows(&dir.path().join("test.csv")), 100);
}

#[test]
fn usage_errors_exit_with_2() {
    let out = frscn(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));

    let out = frscn(&["train", "--data", "x.csv", "--sc-alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"esn": {"nodez": 3}}"#).unwrap();
    let out = frscn(&["train", "--data", "x.csv", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodez"));

    assert_eq!(frscn(&["train", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn missing_file_is_a_runtime_error() {
    let out = frscn(&["train", "--data", "/nonexistent/train.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_config_flags() {
    let help = ok(&["train", "--help"]);
    for flag in ["--config", "--sc-n-max", "--sc-lambda-grid", "--fcm-fuzziness", "--esn-density", "--threads", "--model-kind"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn train_reports_monotone_trace_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_task(dir.path());
    let train = data.join("train.csv");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &Path| -> Vec<String> {
        ["train", "--data", s(&train), "--val", s(&data.join("val.csv")), "--out", s(out), "--rules", "3", "--sc-n-max", "20", "--seed", "9"]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };
    let text = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert!(text.contains("monotone (0 increases)"), "{text}");
    assert_eq!(std::fs::read(a.join("model.json")).unwrap(), std::fs::read(b.join("model.json")).unwrap());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["monotonicity_violations"], 0);
    assert_eq!(report["reports"].as_array().unwrap().len(), 3);
    assert!(report["val_nrmse"].as_f64().unwrap().is_finite());
}

#[test]
fn rscn_kind_is_frscn_with_one_rule() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_task(dir.path());
    let train = data.join("train.csv");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--data", s(&train), "--out", s(&a), "--model-kind", "rscn", "--sc-n-max", "15"]);
    ok(&["train", "--data", s(&train), "--out", s(&b), "--rules", "1", "--sc-n-max", "15"]);
    assert_eq!(std::fs::read(a.join("model.json")).unwrap(), std::fs::read(b.join("model.json")).unwrap());
}

#[test]
fn predict_eval_and_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_task(dir.path());
    let m = dir.path().join("m");
    ok(&["train", "--data", s(&data.join("train.csv")), "--out", s(&m), "--rules", "2", "--sc-n-max", "15"]);
    let model = m.join("model.json");
    let test = data.join("test.csv");

    let p = dir.path().join("p");
    ok(&["predict", "--model", s(&model), "--data", s(&test), "--out", s(&p), "--fire-stride", "10"]);
    assert_eq!(rows(&p.join("predictions.csv")), 200);
    assert_eq!(rows(&p.join("fire_strengths.csv")), 30);
    let header = std::fs::read_to_string(p.join("predictions.csv")).unwrap();
    assert!(header.starts_with("n,target_0,frscn_0\n"));

    let json = ok(&["eval", "--model", s(&model), "--data", s(&test), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["nrmse"].as_f64().unwrap().is_finite());
    assert_eq!(v["samples"], 200);

    let out = frscn(&["predict", "--model", s(&model), "--data", s(&test), "--inputs", "u", "--out", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2 inputs") && err.contains("1 inputs"), "{err}");
}

#[test]
fn eval_of_exact_fit_is_zero() {
    // target equals an input column, so the linear readout reproduces it
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("copy.csv");
    let mut rng = frscn::rng::seeded(1);
    let mut text = String::from("a,b,t\n");
    for _ in 0..300 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        text.push_str(&format!("{a:?},{b:?},{a:?}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let m = dir.path().join("m");
    let cols = ["--inputs", "a,b", "--targets", "t", "--washout", "20"];
    let mut args = vec!["train", "--data", s(&csv), "--out", s(&m), "--model-kind", "esn", "--esn-nodes", "5"];
    args.extend(cols);
    ok(&args);
    let model = m.join("model.json");
    let mut args = vec!["eval", "--model", s(&model), "--data", s(&csv), "--json"];
    args.extend(cols);
    let v: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert!(v["nrmse"].as_f64().unwrap() < 1e-9, "{v}");
}

#[test]
fn online_on_planted_readout_converges() {
    // hand-built two-rule model whose saturating nodes keep the stacked
    // features well excited by independent uniform inputs
    let dir = tempfile::tempdir().unwrap();
    let mut rng = frscn::rng::seeded(3);
    let n = 1100;
    let inputs = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
    let bank = FuzzyRuleBank::new(
        DMatrix::from_row_slice(2, 2, &[-0.5, -0.5, 0.5, 0.5]),
        DMatrix::from_element(2, 2, 0.5),
    )
    .unwrap();
    let subs: Vec<SubReservoir> = (0..2)
        .map(|i| {
            let sign = if i == 0 { 1.0 } else { -1.0 };
            SubReservoir::from_parts(
                DMatrix::from_row_slice(3, 2, &[4.0, 0.0, 0.0, 4.0 * sign, 3.0, -3.0]),
                DMatrix::zeros(3, 3),
                DVector::from_row_slice(&[0.3, -0.2, 0.1 * sign]),
                DMatrix::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0)),
                Activation::Tanh,
                0.9,
            )
            .unwrap()
        })
        .collect();
    let meta = ModelMeta {
        kind: ModelKind::Fesn,
        seed: 0,
        sc_config: None,
        fcm_config: None,
        esn_config: None,
    };
    let model = FrscnModel::new(bank, subs, NormalizationStats::identity(2, 1), meta).unwrap();
    let m = dir.path().join("m");
    std::fs::create_dir_all(&m).unwrap();
    model.save(&m.join("model.json")).unwrap();

    let g = model.stacked_features(&inputs).unwrap();
    let theta0 = model.stacked_theta();
    let planted = DMatrix::from_fn(theta0.nrows(), theta0.ncols(), |i, j| {
        theta0[(i, j)] + rng.random_range(-0.5..0.5)
    });
    let targets = &planted * &g;
    let fixture = TimeSeriesDataset::new(inputs, targets, 100, "planted").unwrap();
    let csv = dir.path().join("planted.csv");
    fixture
        .write_csv(&csv, &["y".into(), "u".into()], &["y_next".into()])
        .unwrap();
    let reference = dir.path().join("theta.json");
    std::fs::write(&reference, serde_json::to_string(&MatrixRecord::from(&planted)).unwrap()).unwrap();

    let o = dir.path().join("o");
    let text = ok(&[
        "online", "--model", s(&m.join("model.json")), "--data", s(&csv), "--reference", s(&reference), "--out", s(&o),
    ]);
    let line = text.lines().find(|l| l.starts_with("final deviation")).expect(&text);
    let dev: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(dev < 1e-3, "{text}");
    assert_eq!(rows(&o.join("online_errors.csv")), 1000);
    let updated = FrscnModel::load(&o.join("model.json")).unwrap();
    assert!((updated.stacked_theta() - &planted).norm() < 1e-3);
}

#[test]
fn gridsearch_single_cell_is_selected() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_task(dir.path());
    let o = dir.path().join("g");
    let text = ok(&[
        "gridsearch", "--data", s(&data.join("train.csv")), "--val", s(&data.join("val.csv")), "--out", s(&o),
        "--grid-rules", "2", "--grid-nodes", "10", "--trials", "1",
    ]);
    assert!(text.contains("selected rules=2 nodes=10"), "{text}");
    let grid = std::fs::read_to_string(o.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
    assert!(grid.lines().nth(1).unwrap().ends_with("true"), "{grid}");
    assert!(o.join("summary.json").exists());
}

#[test]
fn eval_runs_seeded_trials() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_task(dir.path());
    let o = dir.path().join("t");
    let (train, val, test) = (data.join("train.csv"), data.join("val.csv"), data.join("test.csv"));
    let args = [
        "eval", "--data", s(&train), "--val", s(&val), "--test", s(&test), "--trials", "2", "--rules", "2", "--sc-n-max", "10", "--out", s(&o), "--json",
    ];
    let a: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    let b: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(a["summary"]["successes"], 2);
    assert_eq!(a["summary"]["test"], b["summary"]["test"]);
    assert!(o.join("summary.json").exists());
}
