//! Metrics, seeded trials, grid search and report files.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_plant_sequence, piecewise_test_input, plant_sequence_from_input, PlantMode, TimeSeriesDataset, TEST_INPUT_LEN,
};
use crate::error::{FrscnError, Result};
use crate::fuzzy::FcmConfig;
use crate::model::{train_fesn, train_frscn, EsnConfig, FrscnModel, ModelKind};
use crate::rng::derive_seed;
use crate::trainer::{ScConfig, StopReason};

/// Normalized root mean squared error over samples `washout..n`:
/// `sqrt(Σ (y − t)² / (n' · var(t)))` per output with the population
/// variance, averaged over outputs whose target varies.
pub fn nrmse(pred: &DMatrix<f64>, target: &DMatrix<f64>, washout: usize) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(FrscnError::shape(
            "nrmse operands",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = target.ncols();
    if washout >= n {
        return Err(FrscnError::invalid(format!("washout {washout} leaves no samples out of {n}")));
    }
    let m = (n - washout) as f64;
    let mut total = 0.0;
    let mut defined = 0usize;
    for q in 0..target.nrows() {
        let t = target.row(q).columns(washout, n - washout).into_owned();
        let y = pred.row(q).columns(washout, n - washout).into_owned();
        let mean = t.mean();
        let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        if var <= 0.0 {
            continue;
        }
        let sse = (&y - &t).norm_squared();
        total += (sse / (m * var)).sqrt();
        defined += 1;
    }
    if defined == 0 {
        return Err(FrscnError::UndefinedMetric(
            "target has zero variance in every output after washout".into(),
        ));
    }
    Ok(total / defined as f64)
}

/// The synthetic plant task: random-input training and validation sets and
/// the fixed piecewise test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub train_len: usize,
    pub val_len: usize,
    /// Length of the piecewise test input; other lengths than the standard
    /// 1000 truncate or extend its last segment.
    pub test_len: usize,
    pub washout: usize,
    pub data_seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            train_len: 2000,
            val_len: 1000,
            test_len: TEST_INPUT_LEN,
            washout: 100,
            data_seed: 2024,
        }
    }
}

impl SyntheticTask {
    pub fn generate(&self) -> Result<TaskData> {
        let train = generate_plant_sequence(self.train_len, PlantMode::TrainRandom, self.data_seed)?
            .with_washout(self.washout)?;
        let val = generate_plant_sequence(self.val_len, PlantMode::TrainRandom, derive_seed(self.data_seed, 1))?
            .with_washout(self.washout)?;
        let test = if self.test_len == TEST_INPUT_LEN {
            generate_plant_sequence(TEST_INPUT_LEN, PlantMode::PaperTest, 0)?
        } else {
            let u: Vec<f64> = (1..=self.test_len).map(piecewise_test_input).collect();
            plant_sequence_from_input(&u, 0, "plant-test")?
        }
        .with_washout(self.washout)?;
        Ok(TaskData { train, val, test })
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: TimeSeriesDataset,
    pub val: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

/// Everything needed to train one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Rule count (forced to 1 for `rscn` and `esn`).
    pub rules: usize,
    pub sc: ScConfig,
    pub fcm: FcmConfig,
    pub esn: EsnConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Frscn,
            rules: 5,
            sc: ScConfig::default(),
            fcm: FcmConfig::default(),
            esn: EsnConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn effective_rules(&self) -> usize {
        if self.kind.is_fuzzy() {
            self.rules
        } else {
            1
        }
    }

    /// Sets the reservoir size: the growth cap for configured models, the
    /// fixed size for echo-state ones.
    pub fn with_size(&self, nodes: usize) -> Self {
        let mut out = self.clone();
        out.sc.n_max = nodes;
        out.esn.nodes = nodes;
        out
    }

    pub fn with_rules(&self, rules: usize) -> Self {
        ModelSpec {
            rules,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules == 0 {
            return Err(FrscnError::invalid("rules must be >= 1"));
        }
        self.sc.validate()?;
        self.fcm.validate()?;
        self.esn.validate()
    }
}

/// Output of [`train_model`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FrscnModel,
    /// Empty for echo-state models.
    pub reports: Vec<crate::trainer::TrainReport>,
}

pub fn train_model(spec: &ModelSpec, train: &TimeSeriesDataset, seed: u64) -> Result<Trained> {
    spec.validate()?;
    let q = spec.effective_rules();
    match spec.kind {
        ModelKind::Frscn | ModelKind::Rscn => {
            let (model, reports) = train_frscn(train, q, &spec.sc, &spec.fcm, seed)?;
            Ok(Trained { model, reports })
        }
        ModelKind::Fesn | ModelKind::Esn => Ok(Trained {
            model: train_fesn(train, q, &spec.fcm, &spec.esn, seed)?,
            reports: Vec::new(),
        }),
    }
}

pub fn evaluate(model: &FrscnModel, ds: &TimeSeriesDataset) -> Result<f64> {
    let pred = model.predict(ds.inputs())?;
    nrmse(&pred, ds.targets(), ds.washout())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub train_nrmse: f64,
    pub val_nrmse: f64,
    pub test_nrmse: f64,
    pub node_counts: Vec<usize>,
    pub wall_time_s: f64,
    pub stop_reasons: Vec<StopReason>,
    /// Residual traces of every rule's reservoir (empty for echo-state models).
    pub residual_traces: Vec<Vec<f64>>,
}

impl TrialResult {
    pub fn monotonicity_violations(&self, slack: f64) -> usize {
        self.residual_traces
            .iter()
            .map(|tr| tr.windows(2).filter(|w| w[1] > w[0] + slack).count())
            .sum()
    }
}

pub fn run_trial(data: &TaskData, spec: &ModelSpec, seed: u64) -> Result<TrialResult> {
    let start = Instant::now();
    let trained = train_model(spec, &data.train, seed)?;
    let model = &trained.model;
    Ok(TrialResult {
        seed,
        train_nrmse: evaluate(model, &data.train)?,
        val_nrmse: evaluate(model, &data.val)?,
        test_nrmse: evaluate(model, &data.test)?,
        node_counts: model.node_counts(),
        wall_time_s: start.elapsed().as_secs_f64(),
        stop_reasons: trained.reports.iter().map(|r| r.stop_reason).collect(),
        residual_traces: trained.reports.into_iter().map(|r| r.residual_trace).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Some(Stat {
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub successes: usize,
    pub failures: usize,
    pub train: Option<Stat>,
    pub val: Option<Stat>,
    pub test: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub spec: ModelSpec,
    pub trials: Vec<TrialResult>,
    pub failed: Vec<TrialFailure>,
    pub summary: Summary,
}

impl TrialSet {
    pub fn from_results(spec: ModelSpec, results: Vec<(u64, Result<TrialResult>)>) -> Self {
        let mut trials = Vec::new();
        let mut failed = Vec::new();
        for (seed, r) in results {
            match r {
                Ok(t) => trials.push(t),
                Err(e) => failed.push(TrialFailure {
                    seed,
                    error: e.to_string(),
                }),
            }
        }
        let pick = |f: fn(&TrialResult) -> f64| Stat::of(&trials.iter().map(f).collect::<Vec<_>>());
        let summary = Summary {
            successes: trials.len(),
            failures: failed.len(),
            train: pick(|t| t.train_nrmse),
            val: pick(|t| t.val_nrmse),
            test: pick(|t| t.test_nrmse),
        };
        TrialSet {
            spec,
            trials,
            failed,
            summary,
        }
    }
}

/// Runs `n_trials` trainings with seeds `base_seed + k` on the same data.
pub fn run_trials(data: &TaskData, spec: &ModelSpec, n_trials: usize, base_seed: u64) -> Result<TrialSet> {
    if n_trials == 0 {
        return Err(FrscnError::invalid("n_trials must be >= 1"));
    }
    spec.validate()?;
    let results: Vec<(u64, Result<TrialResult>)> = (0..n_trials as u64)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k);
            (seed, run_trial(data, spec, seed))
        })
        .collect();
    Ok(TrialSet::from_results(spec.clone(), results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rules: usize,
    pub nodes: usize,
    pub mean_val_nrmse: Option<f64>,
    pub std_val_nrmse: Option<f64>,
    pub mean_test_nrmse: Option<f64>,
    pub mean_train_nrmse: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub rules: Vec<usize>,
    pub nodes: Vec<usize>,
    /// Row-major over `rules × nodes`.
    pub cells: Vec<GridCell>,
    pub selected: Option<(usize, usize)>,
}

impl GridSearchResult {
    pub fn cell(&self, rules: usize, nodes: usize) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.rules == rules && c.nodes == nodes)
    }
}

/// Picks the cell with the smallest mean validation NRMSE; ties go to the
/// smaller reservoir, then to fewer rules.
pub fn select_cell(cells: &[GridCell]) -> Option<(usize, usize)> {
    let mut ordered: Vec<&GridCell> = cells.iter().filter(|c| c.mean_val_nrmse.is_some()).collect();
    ordered.sort_by_key(|c| (c.nodes, c.rules));
    let mut best: Option<(&GridCell, f64)> = None;
    for c in ordered {
        let v = c.mean_val_nrmse.unwrap_or(f64::INFINITY);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| (c.rules, c.nodes))
}

pub fn grid_search(
    data: &TaskData,
    base: &ModelSpec,
    rules: &[usize],
    nodes: &[usize],
    trials_per_cell: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if rules.is_empty() || nodes.is_empty() {
        return Err(FrscnError::invalid("grid axes must be nonempty"));
    }
    let coords: Vec<(usize, usize)> = rules
        .iter()
        .flat_map(|&q| nodes.iter().map(move |&n| (q, n)))
        .collect();
    let cells = coords
        .par_iter()
        .map(|&(q, n)| {
            let spec = base.with_rules(q).with_size(n);
            let set = run_trials(data, &spec, trials_per_cell, seed)?;
            let s = &set.summary;
            Ok(GridCell {
                rules: q,
                nodes: n,
                mean_val_nrmse: s.val.map(|v| v.mean),
                std_val_nrmse: s.val.map(|v| v.std),
                mean_test_nrmse: s.test.map(|v| v.mean),
                mean_train_nrmse: s.train.map(|v| v.mean),
                successes: s.successes,
                failures: s.failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = select_cell(&cells);
    Ok(GridSearchResult {
        rules: rules.to_vec(),
        nodes: nodes.to_vec(),
        cells,
        selected,
    })
}

/// Target and per-model predictions over one dataset.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    pub washout: usize,
    pub targets: DMatrix<f64>,
    pub predictions: Vec<(String, DMatrix<f64>)>,
}

/// Inputs to [`emit_report`]; every part is optional.
#[derive(Debug, Clone, Default)]
pub struct Report<'a> {
    pub trial_sets: Vec<&'a TrialSet>,
    pub predictions: Option<&'a PredictionTable>,
    /// `Q × n` fire strengths and the sampling stride.
    pub fire_strengths: Option<(&'a DMatrix<f64>, usize)>,
    pub grid: Option<&'a GridSearchResult>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    trials: Vec<&'a TrialSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<&'a GridSearchResult>,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| FrscnError::io(path, e))
}

/// Writes `summary.json` and whichever of `predictions.csv`,
/// `fire_strengths.csv` and `grid.csv` have data.
pub fn emit_report(report: &Report<'_>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| FrscnError::io(out_dir, e))?;

    let summary_path = out_dir.join("summary.json");
    let summary = SummaryFile {
        trials: report.trial_sets.clone(),
        grid: report.grid,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| FrscnError::Format(e.to_string()))?;
    std::fs::write(&summary_path, text).map_err(|e| FrscnError::io(&summary_path, e))?;

    if let Some(table) = report.predictions {
        write_predictions(table, &out_dir.join("predictions.csv"))?;
    }
    if let Some((phi, stride)) = report.fire_strengths {
        write_fire_strengths(phi, stride, &out_dir.join("fire_strengths.csv"))?;
    }
    if let Some(grid) = report.grid {
        write_grid(grid, &out_dir.join("grid.csv"))?;
    }
    Ok(())
}

/// One row per post-washout sample: `n`, `target_q`, then `<model>_q`.
pub fn write_predictions(table: &PredictionTable, path: &Path) -> Result<()> {
    let l = table.targets.nrows();
    let n = table.targets.ncols();
    for (name, p) in &table.predictions {
        if p.shape() != table.targets.shape() {
            return Err(FrscnError::shape(
                format!("predictions of `{name}`"),
                format!("{:?}", table.targets.shape()),
                format!("{:?}", p.shape()),
            ));
        }
    }
    let mut w = create(path)?;
    let io = |e| FrscnError::io(path, e);
    let mut header = vec!["n".to_string()];
    header.extend((0..l).map(|q| format!("target_{q}")));
    for (name, _) in &table.predictions {
        header.extend((0..l).map(|q| format!("{name}_{q}")));
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for t in table.washout..n {
        let mut row = vec![t.to_string()];
        row.extend((0..l).map(|q| format!("{:?}", table.targets[(q, t)])));
        for (_, p) in &table.predictions {
            row.extend((0..l).map(|q| format!("{:?}", p[(q, t)])));
        }
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_fire_strengths(phi: &DMatrix<f64>, stride: usize, path: &Path) -> Result<()> {
    if stride == 0 {
        return Err(FrscnError::invalid("fire-strength stride must be >= 1"));
    }
    let mut w = create(path)?;
    let io = |e| FrscnError::io(path, e);
    let mut header = vec!["n".to_string()];
    header.extend((1..=phi.nrows()).map(|i| format!("phi_{i}")));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for t in (0..phi.ncols()).step_by(stride) {
        let mut row = vec![t.to_string()];
        row.extend(phi.column(t).iter().map(|v| format!("{v:?}")));
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_grid(grid: &GridSearchResult, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| FrscnError::io(path, e);
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    writeln!(
        w,
        "rules,nodes,mean_train_nrmse,mean_val_nrmse,std_val_nrmse,mean_test_nrmse,successes,failures,selected"
    )
    .map_err(io)?;
    for c in &grid.cells {
        let selected = grid.selected == Some((c.rules, c.nodes));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.rules,
            c.nodes,
            opt(c.mean_train_nrmse),
            opt(c.mean_val_nrmse),
            opt(c.std_val_nrmse),
            opt(c.mean_test_nrmse),
            c.successes,
            c.failures,
            selected
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
