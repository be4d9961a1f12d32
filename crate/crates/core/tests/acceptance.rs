//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` gives a summary.

use std::sync::OnceLock;

use frscn::dataset::{generate_plant_sequence, piecewise_test_input, PlantMode};
use frscn::eval::{nrmse, run_trials, write_predictions, ModelSpec, PredictionTable, SyntheticTask, TaskData, TrialSet};
use frscn::linalg::{self, lstsq};
use frscn::model::{train_frscn, train_rscn};
use frscn::online::OnlineState;
use frscn::rng::{derive_seed, seeded};
use frscn::trainer::{ScTrainer, StepOutcome};
use frscn::{Activation, FcmConfig, FuzzyRuleBank, ModelKind, ScConfig, SubReservoir};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn verdict(id: u32, title: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id:>2} {title}: {detail}");
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

const TRIALS: usize = 10;
const BASE_SEED: u64 = 100;

struct Benchmark {
    frscn: TrialSet,
    fesn: TrialSet,
}

fn task() -> &'static TaskData {
    static TASK: OnceLock<TaskData> = OnceLock::new();
    TASK.get_or_init(|| SyntheticTask::default().generate().unwrap())
}

fn benchmark() -> &'static Benchmark {
    static RUNS: OnceLock<Benchmark> = OnceLock::new();
    RUNS.get_or_init(|| {
        let spec = ModelSpec {
            kind: ModelKind::Frscn,
            rules: 5,
            ..Default::default()
        }
        .with_size(100);
        let esn = ModelSpec {
            kind: ModelKind::Fesn,
            ..spec.clone()
        };
        Benchmark {
            frscn: run_trials(task(), &spec, TRIALS, BASE_SEED).unwrap(),
            fesn: run_trials(task(), &esn, TRIALS, BASE_SEED).unwrap(),
        }
    })
}

#[test]
fn criterion_01_synthetic_benchmark() {
    let set = &benchmark().frscn;
    let max_nodes = set.trials.iter().flat_map(|t| t.node_counts.iter()).max().copied().unwrap_or(0);
    let ok = set.failed.is_empty() && set.trials.len() == TRIALS;
    let train = set.summary.train.unwrap().median;
    let test = set.summary.test.unwrap().median;
    verdict(
        1,
        "synthetic benchmark Q=5",
        ok && max_nodes <= 100 && train <= 0.02 && test <= 0.06,
        format!(
            "{} trials, max nodes {max_nodes}, median train {train:.4} (<= 0.02), median test {test:.4} (<= 0.06)",
            set.trials.len()
        ),
    );
}

#[test]
fn criterion_02_model_ordering() {
    let b = benchmark();
    let ok = b.frscn.failed.is_empty() && b.fesn.failed.is_empty();
    let ours = b.frscn.summary.test.unwrap().median;
    let esn = b.fesn.summary.test.unwrap().median;
    verdict(
        2,
        "F-RSCN vs F-ESN",
        ok && ours <= esn,
        format!("median test F-RSCN {ours:.4} <= F-ESN {esn:.4} over {TRIALS} paired seeds"),
    );
}

#[test]
fn criterion_03_residual_monotonicity() {
    let b = benchmark();
    let traces: usize = b.frscn.trials.iter().map(|t| t.residual_traces.len()).sum();
    let violations: usize = b
        .frscn
        .trials
        .iter()
        .chain(b.fesn.trials.iter())
        .map(|t| t.monotonicity_violations(1e-10))
        .sum();
    verdict(
        3,
        "residual monotonicity",
        traces == TRIALS * 5 && violations == 0,
        format!("{traces} residual traces, {violations} increases beyond 1e-10"),
    );
}

#[test]
fn criterion_04_supervisory_step_bound() {
    let ds = generate_plant_sequence(1000, PlantMode::TrainRandom, 77).unwrap();
    let norm = frscn::NormalizationStats::fit(&ds);
    let ds = norm.apply(&ds).unwrap();
    let cfg = ScConfig {
        n_max: 40,
        ..Default::default()
    };
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut seed = 0;
    while checked < 100 {
        let mut trainer = ScTrainer::new(&ds, &cfg, seed).unwrap();
        seed += 1;
        while checked < 100 {
            let StepOutcome::Accepted(step) = trainer.step().unwrap() else {
                break;
            };
            let g = &step.candidate.state;
            let gg = g.dot(g);
            for e in step.residual_before.row_iter() {
                let e = e.transpose();
                // constructive output weight for the new node alone
                let beta = e.dot(g) / gg;
                let after = (&e - g * beta).norm_squared();
                let bound = (step.candidate.r + step.candidate.mu) * e.norm_squared();
                worst = worst.max(after - bound);
            }
            checked += 1;
        }
    }
    verdict(
        4,
        "supervisory one-step bound",
        worst <= 1e-8,
        format!("{checked} steps, max(‖e'‖² − (r+μ)‖e‖²) = {worst:.3e} (<= 1e-8)"),
    );
}

#[test]
fn criterion_05_echo_state_contraction() {
    let mut rng = seeded(5);
    let lambdas = ScConfig::default().lambda_grid;
    let mut max_sigma = 0.0_f64;
    let mut worst_ratio = 0.0_f64;
    for case in 0..100 {
        let n = rng.random_range(5..=60);
        let k = 2;
        let alpha = rng.random_range(0.5..1.0);
        let density = rng.random_range(0.01..=0.05);
        let lam = lambdas[rng.random_range(0..lambdas.len())];
        let mut w_r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density {
                    w_r[(i, j)] = rng.random_range(-lam..=lam);
                }
            }
            w_r[(i, i)] = rng.random_range(-lam..=lam);
        }
        let w_in = DMatrix::from_fn(n, k, |_, _| rng.random_range(-lam..=lam));
        let bias = DVector::from_fn(n, |_, _| rng.random_range(-lam..=lam));
        let res = SubReservoir::from_parts(w_in, w_r, bias, DMatrix::zeros(1, n + k), Activation::Tanh, alpha)
            .unwrap()
            .rescale_spectral(alpha)
            .unwrap();
        // independent oracle: full SVD
        let sigma = res.w_r().clone().singular_values().max();
        max_sigma = max_sigma.max(sigma);

        let u = DMatrix::from_fn(k, 200, |_, _| rng.random_range(-1.0..=1.0));
        let xa = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let xb = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let gap = res.echo_state_gap(&u, &xa, &xb).unwrap();
        let ratio = gap[199] / (&xa - &xb).norm();
        worst_ratio = worst_ratio.max(ratio);
        assert!(sigma.is_finite(), "case {case}");
    }
    verdict(
        5,
        "echo-state contraction",
        max_sigma < 1.0 && worst_ratio < 1e-6,
        format!("100 reservoirs, max σ_max {max_sigma:.6} (< 1), max gap(200)/gap(0) {worst_ratio:.3e} (< 1e-6)"),
    );
}

#[test]
fn criterion_06_online_convergence() {
    let (p, l, steps) = (8, 2, 500);
    let mut increases = 0;
    let mut worst_increase = 0.0_f64;
    let mut worst_final = 0.0_f64;
    // the same deviation measured in the metric of the information matrix
    let mut weighted_increases = 0;
    for seed in 0..20u64 {
        let mut rng = seeded(derive_seed(6, seed));
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let target = DMatrix::from_fn(l, p, |_, _| normal());
        let start = DMatrix::from_fn(l, p, |_, _| normal());
        let mut state = OnlineState::new(start, 1.0, 1e-2).unwrap();
        let mut prev = (state.theta() - &target).norm();
        let weighted = |s: &OnlineState| {
            let d = s.theta() - &target;
            (&d * s.gain_matrix().clone().try_inverse().unwrap() * d.transpose()).trace()
        };
        let mut prev_weighted = weighted(&state);
        for _ in 0..steps {
            let g = DVector::from_fn(p, |_, _| normal());
            let t = &target * &g;
            state.step(&g, &t).unwrap();
            let dev = (state.theta() - &target).norm();
            if dev > prev {
                increases += 1;
                worst_increase = worst_increase.max((dev - prev) / prev);
            }
            prev = dev;
            let w = weighted(&state);
            if w > prev_weighted * (1.0 + 1e-9) {
                weighted_increases += 1;
            }
            prev_weighted = w;
        }
        worst_final = worst_final.max(prev);
    }
    verdict(
        6,
        "online convergence",
        increases == 0 && worst_final < 1e-3,
        format!(
            "20 seeds x {steps} steps: {increases} step increases of ‖Θ−Θ*‖ (worst relative {worst_increase:.3e}), \
             max final deviation {worst_final:.3e} (< 1e-3); H⁻¹-weighted deviation increases {weighted_increases}"
        ),
    );
}

#[test]
fn criterion_07_single_rule_reduction() {
    let data = task();
    let sc = ScConfig {
        n_max: 30,
        ..Default::default()
    };
    let (fuzzy, _) = train_frscn(&data.train, 1, &sc, &FcmConfig::default(), 11).unwrap();
    let (plain, _) = train_rscn(&data.train, &sc, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (name, model) in [("fuzzy", &fuzzy), ("plain", &plain)] {
        let table = PredictionTable {
            washout: data.test.washout(),
            targets: data.test.targets().clone(),
            predictions: vec![("model".into(), model.predict(data.test.inputs()).unwrap())],
        };
        let path = dir.path().join(format!("{name}.csv"));
        write_predictions(&table, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    verdict(
        7,
        "single-rule reduction",
        files[0] == files[1],
        format!("prediction files {} and {} bytes, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    );
}

#[test]
fn criterion_08_oracle_equivalences() {
    // least squares against the normal equations
    let mut worst_ls = 0.0_f64;
    for seed in 0..20 {
        let mut rng = seeded(derive_seed(8, seed));
        let phi = DMatrix::from_fn(20, 200, |_, _| rng.random_range(-1.0..=1.0));
        let t = DMatrix::from_fn(3, 200, |_, _| rng.random_range(-1.0..=1.0));
        let sol = lstsq(&phi, &t, 0.0).unwrap();
        let gram = &phi * phi.transpose();
        let brute = (&t * phi.transpose()) * gram.try_inverse().unwrap();
        worst_ls = worst_ls.max((&sol.weights - &brute).amax());
    }

    // weighted-sum against stacked readout
    let data = task();
    let sc = ScConfig {
        n_max: 15,
        ..Default::default()
    };
    let (model, _) = train_frscn(&data.train, 3, &sc, &FcmConfig::default(), 3).unwrap();
    let u = model.normalization().apply_inputs(data.test.inputs()).unwrap();
    let summed = model.predict_normalized(&u).unwrap();
    let stacked = model.predict_stacked_normalized(&u).unwrap();
    let worst_form = (&summed - &stacked).amax();

    // plant regeneration, recomputed here from the recurrence
    let ds = generate_plant_sequence(1500, PlantMode::TrainRandom, 55).unwrap();
    let again = generate_plant_sequence(1500, PlantMode::TrainRandom, 55).unwrap();
    let u: Vec<f64> = ds.inputs().row(1).iter().copied().collect();
    let mut y = vec![0.0, 0.0, 0.0, 0.1];
    for n in 3..u.len() {
        let next = 0.72 * y[n] + 0.025 * y[n - 1] * u[n - 1] + 0.01 * u[n - 2] * u[n - 2] + 0.2 * u[n - 3];
        y.push(next);
    }
    let random_exact = (0..u.len()).all(|n| ds.inputs()[(0, n)] == y[n] && ds.targets()[(0, n)] == y[n + 1])
        && ds.inputs() == again.inputs()
        && ds.targets() == again.targets();
    let test = generate_plant_sequence(1000, PlantMode::PaperTest, 0).unwrap();
    let test_input_exact = (0..1000).all(|n| {
        let t = (n + 1) as f64;
        let pi = std::f64::consts::PI;
        let expect = match n + 1 {
            m if m < 250 => (pi * t / 25.0).sin(),
            m if m < 500 => 1.0,
            m if m < 750 => -1.0,
            _ => 0.6 * (pi * t / 10.0).cos() + 0.1 * (pi * t / 32.0).cos() + 0.3 * (pi * t / 25.0).sin(),
        };
        test.inputs()[(1, n)] == expect && piecewise_test_input(n + 1) == expect
    });

    verdict(
        8,
        "oracle equivalences",
        worst_ls <= 1e-6 && worst_form <= 1e-12 && random_exact && test_input_exact,
        format!(
            "lstsq vs normal equations {worst_ls:.3e} (<= 1e-6), weighted-sum vs stacked {worst_form:.3e} (<= 1e-12), \
             plant regeneration exact: {}",
            random_exact && test_input_exact
        ),
    );
}

#[test]
fn criterion_09_fire_strength_normalization() {
    let mut rng = seeded(9);
    let mut worst_sum = 0.0_f64;
    let mut min_phi = f64::INFINITY;
    let mut outliers = 0;
    let mut pairs = 0usize;
    for _ in 0..1000 {
        let q = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let centers = DMatrix::from_fn(q, k, |_, _| rng.random_range(-3.0..=3.0));
        let widths = DMatrix::from_fn(q, k, |_, _| rng.random_range(0.05..=2.0));
        let bank = FuzzyRuleBank::new(centers.clone(), widths.clone()).unwrap();
        for _ in 0..1000 {
            let rule = rng.random_range(0..q);
            let far = rng.random::<f64>() < 0.05;
            let u = DVector::from_fn(k, |d, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let spread = if far { 1e4 } else { 1.0 };
                centers[(rule, d)] + spread * widths[(rule, d)] * z
            });
            outliers += far as usize;
            let phi = bank.fire_strengths(u.as_view()).unwrap();
            worst_sum = worst_sum.max((phi.sum() - 1.0).abs());
            min_phi = min_phi.min(phi.min());
            pairs += 1;
        }
    }
    verdict(
        9,
        "fire-strength normalization",
        pairs == 1_000_000 && worst_sum <= 1e-9 && min_phi >= 0.0,
        format!("{pairs} pairs ({outliers} at 1e4 σ), max |Σφ − 1| {worst_sum:.3e} (<= 1e-9), min φ {min_phi:.3e}"),
    );
}

#[test]
fn criterion_10_nrmse_identities() {
    let mut rng = seeded(10);
    let target = DMatrix::from_fn(2, 600, |_, _| rng.random_range(-2.0..=3.0));
    let washout = 100;
    let perfect = nrmse(&target, &target, washout).unwrap();
    let tail = target.columns(washout, 600 - washout);
    let mut mean_pred = target.clone();
    for (q, row) in tail.row_iter().enumerate() {
        let m = row.mean();
        mean_pred.row_mut(q).fill(m);
    }
    let constant = nrmse(&mean_pred, &target, washout).unwrap();
    verdict(
        10,
        "NRMSE identities",
        perfect == 0.0 && (constant - 1.0).abs() <= 1e-12,
        format!("perfect {perfect:e} (== 0), constant mean {constant:.15} (1 ± 1e-12)"),
    );
}

#[test]
fn power_iteration_agrees_with_svd_on_rescaled_reservoirs() {
    let mut rng = seeded(51);
    for _ in 0..20 {
        let n = rng.random_range(3..=30);
        let m = DMatrix::from_fn(n, n, |i, j| if j <= i { rng.random_range(-5.0..=5.0) } else { 0.0 });
        let exact = m.clone().singular_values().max();
        assert!((linalg::sigma_max(&m) - exact).abs() <= 1e-8 * exact);
    }
}
