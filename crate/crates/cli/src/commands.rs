use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use frscn::dataset::{load_csv, TimeSeriesDataset};
use frscn::eval::{
    emit_report, evaluate, grid_search, nrmse, run_trials, train_model, write_fire_strengths, write_predictions,
    PredictionTable, Report, SyntheticTask, TaskData,
};
use frscn::linalg::MatrixRecord;
use frscn::online::{contraction_diagnostic, init_online, run_online};
use frscn::{FrscnModel, TrainReport};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::UsageError;

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => Err(UsageError(format!("--{flag} is required")).into()),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load(cfg: &RunConfig, path: &Path) -> Result<TimeSeriesDataset> {
    Ok(load_csv(path, &cfg.csv_spec()).with_context(|| format!("loading {}", path.display()))?)
}

fn load_model(cfg: &RunConfig) -> Result<FrscnModel> {
    let path = required(&cfg.model, "model")?;
    Ok(FrscnModel::load(path).with_context(|| format!("loading model {}", path.display()))?)
}

fn check_dims(model: &FrscnModel, ds: &TimeSeriesDataset) -> Result<()> {
    if model.input_dim() != ds.input_dim() || model.output_dim() != ds.output_dim() {
        bail!(
            "dimension mismatch: model has {} inputs x {} outputs, data `{}` has {} inputs x {} outputs",
            model.input_dim(),
            model.output_dim(),
            ds.name(),
            ds.input_dim(),
            ds.output_dim()
        );
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let task = SyntheticTask {
        train_len: cfg.sizes[0],
        val_len: cfg.sizes[1],
        test_len: cfg.sizes[2],
        washout: 0,
        data_seed: cfg.seed,
    };
    let data = task.generate()?;
    let inputs = ["y".to_string(), "u".to_string()];
    let targets = ["y_next".to_string()];
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let path = out.join(format!("{name}.csv"));
        ds.write_csv(&path, &inputs, &targets)?;
    }
    let meta = json!({
        "seed": cfg.seed,
        "sizes": cfg.sizes,
        "washout": cfg.washout,
        "modes": {"train": "train-random", "val": "train-random", "test": "paper-test"},
        "inputs": inputs,
        "targets": targets,
    });
    write_json(&out.join("meta.json"), &meta)?;
    println!(
        "wrote {} ({} / {} / {} rows)",
        out.display(),
        cfg.sizes[0],
        cfg.sizes[1],
        cfg.sizes[2]
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model_kind: &'a str,
    seed: u64,
    rules: usize,
    node_counts: Vec<usize>,
    train_nrmse: f64,
    val_nrmse: Option<f64>,
    wall_time_s: f64,
    monotonicity_violations: usize,
    reports: &'a [TrainReport],
    config: &'a RunConfig,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let train = load(cfg, required(&cfg.data, "data")?)?;
    let val = cfg.val.as_deref().map(|p| load(cfg, p)).transpose()?;
    let out = out_dir(cfg)?;
    let start = std::time::Instant::now();
    let trained = train_model(&cfg.model_spec(), &train, cfg.seed)?;
    let wall = start.elapsed().as_secs_f64();
    let model = &trained.model;
    let train_nrmse = evaluate(model, &train)?;
    let val_nrmse = match &val {
        Some(v) => {
            check_dims(model, v)?;
            Some(evaluate(model, v)?)
        }
        None => None,
    };
    let violations: usize = trained.reports.iter().map(|r| r.monotonicity_violations(1e-10)).sum();
    model.save(&out.join("model.json"))?;
    let summary = TrainSummary {
        model_kind: model.meta().kind.as_str(),
        seed: cfg.seed,
        rules: model.rule_count(),
        node_counts: model.node_counts(),
        train_nrmse,
        val_nrmse,
        wall_time_s: wall,
        monotonicity_violations: violations,
        reports: &trained.reports,
        config: cfg,
    };
    write_json(&out.join("train_report.json"), &summary)?;
    if cfg.json {
        println!("{}", serde_json::to_string(&json!({
            "model_kind": summary.model_kind,
            "node_counts": summary.node_counts,
            "train_nrmse": train_nrmse,
            "val_nrmse": val_nrmse,
            "monotonicity_violations": violations,
        }))?);
    } else {
        print!(
            "trained {} with {} rule(s), nodes {:?}: train NRMSE {:.6}",
            summary.model_kind, summary.rules, summary.node_counts, train_nrmse
        );
        if let Some(v) = val_nrmse {
            print!(", val NRMSE {v:.6}");
        }
        println!();
        if !trained.reports.is_empty() {
            let verdict = if violations == 0 { "monotone" } else { "NOT monotone" };
            println!("residual traces {verdict} ({violations} increases)");
        }
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let ds = load(cfg, required(&cfg.data, "data")?)?;
    check_dims(&model, &ds)?;
    let out = out_dir(cfg)?;
    let pred = model.predict(ds.inputs())?;
    let table = PredictionTable {
        washout: ds.washout(),
        targets: ds.targets().clone(),
        predictions: vec![(model.meta().kind.as_str().to_string(), pred)],
    };
    write_predictions(&table, &out.join("predictions.csv"))?;
    if model.rule_count() > 1 {
        let phi = model.fire_strengths(ds.inputs())?;
        write_fire_strengths(&phi, cfg.fire_stride, &out.join("fire_strengths.csv"))?;
    }
    println!("wrote {} rows to {}", ds.effective_len(), out.join("predictions.csv").display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    if cfg.model.is_some() {
        eval_model(cfg)
    } else {
        eval_trials(cfg)
    }
}

fn eval_model(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let ds = load(cfg, required(&cfg.data, "data")?)?;
    check_dims(&model, &ds)?;
    let pred = model.predict(ds.inputs())?;
    let value = nrmse(&pred, ds.targets(), ds.washout())?;
    if cfg.json {
        println!("{}", serde_json::to_string(&json!({
            "nrmse": value,
            "samples": ds.effective_len(),
            "washout": ds.washout(),
            "model_kind": model.meta().kind.as_str(),
        }))?);
    } else {
        println!("NRMSE {value:.6} over {} samples", ds.effective_len());
    }
    Ok(())
}

fn task_data(cfg: &RunConfig, need_test: bool) -> Result<TaskData> {
    let train = load(cfg, required(&cfg.data, "data")?)?;
    let val = load(cfg, required(&cfg.val, "val")?)?;
    let test = match &cfg.test {
        Some(p) => load(cfg, p)?,
        None if need_test => return Err(UsageError("--test is required".into()).into()),
        None => val.clone(),
    };
    Ok(TaskData { train, val, test })
}

fn eval_trials(cfg: &RunConfig) -> Result<()> {
    let data = task_data(cfg, true)?;
    let set = run_trials(&data, &cfg.model_spec(), cfg.trials, cfg.seed)?;
    if let Some(out) = &cfg.out {
        emit_report(
            &Report {
                trial_sets: vec![&set],
                ..Default::default()
            },
            out,
        )?;
    }
    let s = &set.summary;
    if cfg.json {
        println!("{}", serde_json::to_string(&json!({
            "model_kind": cfg.model_kind.as_str(),
            "summary": s,
        }))?);
    } else {
        println!(
            "{} trials of {}: {} succeeded, {} failed",
            cfg.trials,
            cfg.model_kind.as_str(),
            s.successes,
            s.failures
        );
        for (name, stat) in [("train", s.train), ("val", s.val), ("test", s.test)] {
            if let Some(st) = stat {
                println!(
                    "  {name:<5} NRMSE mean {:.6} std {:.6} median {:.6}",
                    st.mean, st.std, st.median
                );
            }
        }
    }
    Ok(())
}

pub fn online(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let ds = load(cfg, required(&cfg.data, "data")?)?;
    check_dims(&model, &ds)?;
    let out = out_dir(cfg)?;
    let state = init_online(&model, cfg.gain, cfg.init)?;
    let run = run_online(&model, state, &ds, true)?;
    let reference = match &cfg.reference {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let record: MatrixRecord =
                serde_json::from_str(&text).with_context(|| format!("reference {}", path.display()))?;
            let theta = record.to_matrix()?;
            if theta.shape() != run.state.theta().shape() {
                bail!(
                    "dimension mismatch: reference readout is {}x{}, model readout is {}x{}",
                    theta.nrows(),
                    theta.ncols(),
                    run.state.output_dim(),
                    run.state.feature_dim()
                );
            }
            theta
        }
        None => run.state.theta().clone(),
    };
    let deviation = contraction_diagnostic(&run.history, &reference);
    run.model.save(&out.join("model.json"))?;

    let path = out.join("online_errors.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    let l = run.errors.nrows();
    let mut header = vec!["step".to_string()];
    header.extend((0..l).map(|q| format!("error_{q}")));
    header.push("deviation".into());
    w.write_record(&header)?;
    for (s, dev) in deviation.iter().enumerate() {
        let mut row = vec![(s + 1).to_string()];
        row.extend(run.errors.column(s).iter().map(|v| format!("{v:?}")));
        row.push(format!("{dev:?}"));
        w.write_record(&row)?;
    }
    w.flush()?;

    let steps = run.errors.ncols();
    let rms = if steps == 0 {
        0.0
    } else {
        (run.errors.norm_squared() / run.errors.len() as f64).sqrt()
    };
    let last = deviation.last().copied();
    if cfg.json {
        println!("{}", serde_json::to_string(&json!({
            "steps": steps,
            "error_rms": rms,
            "final_deviation": last,
            "reference": cfg.reference.is_some(),
        }))?);
    } else {
        println!("online: {steps} steps, prior error RMS {rms:.6e} (normalized units)");
        if cfg.reference.is_some() {
            if let Some(d) = last {
                println!("final deviation {d:.6e}");
            }
        }
    }
    Ok(())
}

pub fn gridsearch(cfg: &RunConfig) -> Result<()> {
    let data = task_data(cfg, false)?;
    let out = out_dir(cfg)?;
    let result = grid_search(
        &data,
        &cfg.model_spec(),
        &cfg.grid_rules,
        &cfg.grid_nodes,
        cfg.trials,
        cfg.seed,
    )?;
    emit_report(
        &Report {
            grid: Some(&result),
            ..Default::default()
        },
        &out,
    )?;
    if cfg.json {
        println!("{}", serde_json::to_string(&json!({
            "selected": result.selected.map(|(q, n)| json!({"rules": q, "nodes": n})),
            "cells": result.cells,
        }))?);
    } else {
        println!("{:>6} {:>6} {:>14} {:>9}", "rules", "nodes", "mean val NRMSE", "failures");
        for c in &result.cells {
            let v = c.mean_val_nrmse.map_or("-".to_string(), |v| format!("{v:.6}"));
            println!("{:>6} {:>6} {:>14} {:>9}", c.rules, c.nodes, v, c.failures);
        }
        match result.selected {
            Some((q, n)) => println!("selected rules={q} nodes={n}"),
            None => println!("no cell succeeded"),
        }
    }
    Ok(())
}
