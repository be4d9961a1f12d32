//! Stochastic configuration of one sub-reservoir.
//!
//! The reservoir starts from a handful of random nodes and grows one node at
//! a time. For every growth step random candidate rows are drawn at
//! increasing weight scales `λ`; a candidate state `g` is admissible when
//!
//! ```text
//! ξ_q = ⟨e_q, g⟩² / ⟨g, g⟩ − (1 − μ − r) ⟨e_q, e_q⟩ ≥ 0   for every output q
//! ```
//!
//! where `e` is the current residual. The admissible candidate with the
//! largest `Σ_q ξ_q` is appended, the feedback matrix is rescaled, and the
//! readout over `[x; u]` is refit by global least squares. When no candidate
//! passes at any scale the contraction factor `r` is relaxed.
//!
//! `r` is a property of the whole run: once relaxed it stays relaxed for
//! later nodes.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{FrscnError, Result};
use crate::linalg;
use crate::reservoir::{Activation, SubReservoir};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScConfig {
    /// Maximum number of reservoir nodes.
    pub n_max: usize,
    /// Nodes drawn before the supervised growth starts.
    pub initial_size: usize,
    /// Candidates drawn per weight scale.
    pub g_max: usize,
    /// Residual Frobenius-norm tolerance.
    pub epsilon: f64,
    /// Weight scales `λ`, tried in order.
    pub lambda_grid: Vec<f64>,
    /// Contraction factors `r`, tried in order.
    pub r_schedule: Vec<f64>,
    /// Connection density range for candidate rows.
    pub sparsity_range: [f64; 2],
    /// Spectral scaling factor.
    pub alpha: f64,
    /// Readout ridge penalty (0 = plain least squares).
    pub ridge: f64,
    pub activation: Activation,
    /// Random `r` relaxations allowed once the schedule is exhausted.
    pub max_random_relaxations: usize,
    /// Apply the sparsity mask to input-weight rows as well as to the
    /// feedback rows.
    pub mask_inputs: bool,
    /// Apply the sparsity mask to the self-connection.
    pub mask_self: bool,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            n_max: 100,
            initial_size: 5,
            g_max: 100,
            epsilon: 1e-6,
            lambda_grid: vec![0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0],
            r_schedule: vec![0.9, 0.99, 0.999, 0.9999],
            sparsity_range: [0.01, 0.05],
            alpha: 0.9,
            ridge: 0.0,
            activation: Activation::Tanh,
            max_random_relaxations: 20,
            mask_inputs: true,
            mask_self: false,
        }
    }
}

impl ScConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(FrscnError::invalid(format!("{field}: {msg}")));
        if self.n_max == 0 {
            return bad("n_max", "must be >= 1");
        }
        if self.g_max == 0 {
            return bad("g_max", "must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid", "must not be empty");
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0) || !l.is_finite())
            || self.lambda_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("lambda_grid", "values must be positive and strictly ascending");
        }
        if self.r_schedule.is_empty() {
            return bad("r_schedule", "must not be empty");
        }
        if self.r_schedule.iter().any(|r| !(*r > 0.0 && *r < 1.0))
            || self.r_schedule.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("r_schedule", "values must lie in (0, 1) and be strictly ascending");
        }
        let [lo, hi] = self.sparsity_range;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return bad("sparsity_range", "must satisfy 0 < lo <= hi < 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad("ridge", "must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    SizeCap,
    NoCandidate,
}

/// How the feedback matrix was rescaled after a node was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleMode {
    /// Whole matrix rescaled towards spectral radius `alpha`.
    Global,
    /// Global rescaling disturbed the accepted nodes enough to raise the
    /// residual; only the new row was scaled.
    NewRowOnly,
    /// Both refits came out worse than the previous fit, which happens when
    /// the design is numerically rank deficient. The new row was scaled, the
    /// previous readout kept and only the new node's weight fitted.
    NewRowProjected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub lambda: f64,
    pub xi: f64,
    pub r: f64,
    pub mu: f64,
    pub rescale: RescaleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Residual Frobenius norm after the initial fit and after each accepted node.
    pub residual_trace: Vec<f64>,
    pub nodes: Vec<NodeRecord>,
    pub stop_reason: StopReason,
    pub node_count: usize,
    /// Readout fits that fell back to the automatic ridge.
    pub ridge_fallbacks: usize,
}

impl TrainReport {
    /// Number of steps where the residual grew by more than `slack`.
    pub fn monotonicity_violations(&self, slack: f64) -> usize {
        self.residual_trace
            .windows(2)
            .filter(|w| w[1] > w[0] + slack)
            .count()
    }
}

/// Supervisory quantities for one candidate state.
#[derive(Debug, Clone, PartialEq)]
pub struct Xi {
    pub per_output: Vec<f64>,
    pub total: f64,
}

impl Xi {
    pub fn admissible(&self) -> bool {
        self.per_output.iter().all(|&x| x >= 0.0)
    }
}

/// Evaluates `ξ_q` for every output. `residual` is `L × n`, `state` has `n`
/// entries. Returns `None` when the state is identically zero.
pub fn evaluate_xi(residual: &DMatrix<f64>, state: &DVector<f64>, r: f64, mu: f64) -> Result<Option<Xi>> {
    if residual.ncols() != state.len() {
        return Err(FrscnError::shape("candidate state samples", residual.ncols(), state.len()));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(FrscnError::invalid(format!("r must lie in (0, 1), got {r}")));
    }
    if !(mu >= 0.0 && mu <= 1.0 - r) {
        return Err(FrscnError::invalid(format!("mu must lie in [0, 1 - r], got {mu}")));
    }
    Ok(xi_unchecked(residual, state.as_slice(), r, mu))
}

fn xi_unchecked(residual: &DMatrix<f64>, g: &[f64], r: f64, mu: f64) -> Option<Xi> {
    let gg: f64 = g.iter().map(|v| v * v).sum();
    if gg == 0.0 {
        return None;
    }
    let per_output: Vec<f64> = residual
        .row_iter()
        .map(|e| {
            let mut eg = 0.0;
            let mut ee = 0.0;
            for (ev, gv) in e.iter().zip(g) {
                eg += ev * gv;
                ee += ev * ev;
            }
            eg * eg / gg - (1.0 - mu - r) * ee
        })
        .collect();
    let total = per_output.iter().sum();
    Some(Xi { per_output, total })
}

/// `μ_{N+1} = (1 − r) / (N + 1)`.
pub fn mu_schedule(r: f64, nodes: usize) -> f64 {
    (1.0 - r) / (nodes as f64 + 1.0)
}

/// Least-squares readout over the post-washout columns.
#[derive(Debug, Clone)]
pub struct ReadoutFit {
    pub w_out: DMatrix<f64>,
    /// `T − W_out [X; U]`, `L × (n − washout)`.
    pub residual: DMatrix<f64>,
    pub ridge_used: f64,
    pub rank_deficient: bool,
}

/// Fits `W_out` minimizing `‖T − W_out [X; U]‖²` (plus `ridge ‖W_out‖²`)
/// over samples `washout..n`.
pub fn fit_readout(
    states: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    washout: usize,
    ridge: f64,
) -> Result<ReadoutFit> {
    let n = inputs.ncols();
    if states.ncols() != n || targets.ncols() != n {
        return Err(FrscnError::shape(
            "readout samples",
            n,
            format!("states {} / targets {}", states.ncols(), targets.ncols()),
        ));
    }
    if washout >= n {
        return Err(FrscnError::invalid(format!("washout {washout} leaves no samples out of {n}")));
    }
    let m = n - washout;
    let p = states.nrows() + inputs.nrows();
    let mut design = DMatrix::zeros(p, m);
    design
        .rows_mut(0, states.nrows())
        .copy_from(&states.columns(washout, m));
    design
        .rows_mut(states.nrows(), inputs.nrows())
        .copy_from(&inputs.columns(washout, m));
    let t = targets.columns(washout, m).into_owned();
    let sol = linalg::lstsq(&design, &t, ridge)?;
    let residual = &t - &sol.weights * &design;
    Ok(ReadoutFit {
        w_out: sol.weights,
        residual,
        ridge_used: sol.ridge_used,
        rank_deficient: sol.rank_deficient,
    })
}

/// A screened candidate node.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub w_in_row: Vec<f64>,
    /// Connections from the existing nodes followed by the self-connection.
    pub w_r_row: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub xi: Xi,
    /// Candidate state over the post-washout samples (before rescaling).
    pub state: DVector<f64>,
    pub r: f64,
    pub mu: f64,
}

/// What a single supervised step did, with enough detail to check the
/// one-step contraction bound outside the trainer.
#[derive(Debug, Clone)]
pub struct NodeStep {
    pub residual_before: DMatrix<f64>,
    pub candidate: Candidate,
    pub residual_after: f64,
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Accepted(Box<NodeStep>),
    Stopped(StopReason),
}

/// Incremental trainer for one sub-reservoir.
pub struct ScTrainer<'a> {
    cfg: &'a ScConfig,
    inputs: &'a DMatrix<f64>,
    targets: &'a DMatrix<f64>,
    washout: usize,
    rng: Rng,
    reservoir: SubReservoir,
    /// `N × n` states of the accepted reservoir over all samples.
    states: DMatrix<f64>,
    residual: DMatrix<f64>,
    r_index: usize,
    r: f64,
    random_relaxations: usize,
    report: TrainReport,
    stopped: Option<StopReason>,
}

impl<'a> ScTrainer<'a> {
    pub fn new(data: &'a TimeSeriesDataset, cfg: &'a ScConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let k = data.input_dim();
        let l = data.output_dim();
        let mut rng = seeded(seed);
        let lambda0 = cfg.lambda_grid[0];
        let mut reservoir = SubReservoir::empty(k, l, cfg.activation, cfg.alpha);
        for _ in 0..cfg.initial_size.min(cfg.n_max) {
            let (w_in, w_r, b) = draw_row(&mut rng, cfg, k, reservoir.nodes(), lambda0);
            reservoir = reservoir.grow(&w_in, &w_r, b)?;
        }
        if reservoir.nodes() > 0 {
            reservoir = reservoir.rescale_spectral(cfg.alpha)?;
        }
        let states = reservoir.rollout(data.inputs())?.states;
        let fit = fit_readout(&states, data.inputs(), data.targets(), data.washout(), cfg.ridge)?;
        reservoir.set_readout(fit.w_out)?;
        let norm = fit.residual.norm();
        let report = TrainReport {
            residual_trace: vec![norm],
            nodes: Vec::new(),
            stop_reason: StopReason::SizeCap,
            node_count: reservoir.nodes(),
            ridge_fallbacks: usize::from(fit.ridge_used != cfg.ridge),
        };
        Ok(ScTrainer {
            cfg,
            inputs: data.inputs(),
            targets: data.targets(),
            washout: data.washout(),
            rng,
            reservoir,
            states,
            residual: fit.residual,
            r_index: 0,
            r: cfg.r_schedule[0],
            random_relaxations: 0,
            report,
            stopped: None,
        })
    }

    pub fn reservoir(&self) -> &SubReservoir {
        &self.reservoir
    }

    pub fn residual(&self) -> &DMatrix<f64> {
        &self.residual
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }

    pub fn current_r(&self) -> f64 {
        self.r
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    fn stop_condition(&self) -> Option<StopReason> {
        if let Some(reason) = self.stopped {
            return Some(reason);
        }
        if self.residual_norm() <= self.cfg.epsilon {
            Some(StopReason::Tolerance)
        } else if self.reservoir.nodes() >= self.cfg.n_max {
            Some(StopReason::SizeCap)
        } else {
            None
        }
    }

    /// Searches for the best admissible candidate, relaxing `r` as needed.
    /// Returns `None` once every relaxation is used up.
    pub fn screen(&mut self) -> Result<Option<Candidate>> {
        loop {
            let mu = mu_schedule(self.r, self.reservoir.nodes());
            for &lambda in &self.cfg.lambda_grid {
                if let Some(best) = self.screen_batch(lambda, mu)? {
                    return Ok(Some(best));
                }
            }
            if self.r_index + 1 < self.cfg.r_schedule.len() {
                self.r_index += 1;
                self.r = self.cfg.r_schedule[self.r_index];
            } else if self.random_relaxations < self.cfg.max_random_relaxations {
                self.random_relaxations += 1;
                let tau = self.rng.random_range(0.0..(1.0 - self.r));
                let next = self.r + tau;
                if next >= 1.0 || next <= self.r {
                    return Ok(None);
                }
                self.r = next;
            } else {
                return Ok(None);
            }
        }
    }

    fn screen_batch(&mut self, lambda: f64, mu: f64) -> Result<Option<Candidate>> {
        let k = self.inputs.nrows();
        let nodes = self.reservoir.nodes();
        let n = self.inputs.ncols();
        let g_max = self.cfg.g_max;

        let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..g_max)
            .map(|_| draw_row(&mut self.rng, self.cfg, k, nodes, lambda))
            .collect();

        // drive(c, t) = w_in·u(t) + w_prior·x(t−1) + b, batched for all candidates
        let mut w_in = DMatrix::zeros(g_max, k);
        let mut w_prior = DMatrix::zeros(g_max, nodes);
        for (c, (wi, wr, _)) in rows.iter().enumerate() {
            w_in.row_mut(c).copy_from_slice(wi);
            for j in 0..nodes {
                w_prior[(c, j)] = wr[j];
            }
        }
        let mut drive = &w_in * self.inputs;
        if nodes > 0 {
            let prior = w_prior * self.states.columns(0, n - 1);
            let mut tail = drive.columns_mut(1, n - 1);
            tail += prior;
        }

        let activation = self.cfg.activation;
        let washout = self.washout;
        let residual = &self.residual;
        let r = self.r;
        let scored: Vec<Option<(Xi, DVector<f64>)>> = (0..g_max)
            .into_par_iter()
            .map(|c| {
                let (_, wr, b) = &rows[c];
                let self_w = wr[nodes];
                let mut prev = 0.0;
                let mut state = DVector::zeros(n - washout);
                for t in 0..n {
                    let x = activation.apply(drive[(c, t)] + b + self_w * prev);
                    if t >= washout {
                        state[t - washout] = x;
                    }
                    prev = x;
                }
                let xi = xi_unchecked(residual, state.as_slice(), r, mu)?;
                xi.admissible().then_some((xi, state))
            })
            .collect();

        let best = scored
            .into_iter()
            .enumerate()
            .filter_map(|(c, s)| s.map(|s| (c, s)))
            .fold(None::<(usize, (Xi, DVector<f64>))>, |acc, item| match acc {
                Some(a) if a.1 .0.total >= item.1 .0.total => Some(a),
                _ => Some(item),
            });
        Ok(best.map(|(c, (xi, state))| {
            let (w_in_row, w_r_row, bias) = rows[c].clone();
            Candidate {
                w_in_row,
                w_r_row,
                bias,
                lambda,
                xi,
                state,
                r,
                mu,
            }
        }))
    }

    /// Appends the candidate, rescales, recomputes states and refits.
    pub fn accept(&mut self, candidate: &Candidate) -> Result<()> {
        let previous = self.residual_norm();
        let grown = self
            .reservoir
            .grow(&candidate.w_in_row, &candidate.w_r_row, candidate.bias)?;

        let global = grown.rescale_spectral(self.cfg.alpha)?;
        let (mut res, mut states, mut fit) = self.refit(global)?;
        let mut mode = RescaleMode::Global;
        if fit.residual.norm() > previous {
            let local = scale_new_row(&self.reservoir, &grown, self.cfg.alpha)?;
            let (res_l, states_l, fit_l) = self.refit(local)?;
            if fit_l.residual.norm() < fit.residual.norm() {
                res = res_l;
                states = states_l;
                fit = fit_l;
                mode = RescaleMode::NewRowOnly;
            }
            if fit.residual.norm() > previous {
                let local = scale_new_row(&self.reservoir, &grown, self.cfg.alpha)?;
                let states_p = local.rollout(self.inputs)?.states;
                let fit_p = self.project_new_node(&states_p)?;
                if fit_p.residual.norm() < fit.residual.norm() {
                    res = local;
                    states = states_p;
                    fit = fit_p;
                    mode = RescaleMode::NewRowProjected;
                }
            }
        }
        if fit.ridge_used != self.cfg.ridge {
            self.report.ridge_fallbacks += 1;
        }
        res.set_readout(fit.w_out)?;
        self.reservoir = res;
        self.states = states;
        self.residual = fit.residual;
        self.report.residual_trace.push(self.residual.norm());
        self.report.nodes.push(NodeRecord {
            lambda: candidate.lambda,
            xi: candidate.xi.total,
            r: candidate.r,
            mu: candidate.mu,
            rescale: mode,
        });
        self.report.node_count = self.reservoir.nodes();
        Ok(())
    }

    /// Keeps the current readout and fits the last node's weight to the
    /// current residual, so the residual cannot grow.
    fn project_new_node(&self, states: &DMatrix<f64>) -> Result<ReadoutFit> {
        let nodes = states.nrows();
        let m = self.inputs.ncols() - self.washout;
        let g = states.row(nodes - 1).columns(self.washout, m).transpose();
        let gg = g.norm_squared();
        let old = self.reservoir.w_out();
        let mut w_out = old.clone().insert_column(nodes - 1, 0.0);
        if gg > 0.0 {
            for q in 0..w_out.nrows() {
                w_out[(q, nodes - 1)] = self.residual.row(q).transpose().dot(&g) / gg;
            }
        }
        let mut design = DMatrix::zeros(w_out.ncols(), m);
        design.rows_mut(0, nodes).copy_from(&states.columns(self.washout, m));
        design
            .rows_mut(nodes, self.inputs.nrows())
            .copy_from(&self.inputs.columns(self.washout, m));
        let residual = self.targets.columns(self.washout, m) - &w_out * &design;
        Ok(ReadoutFit {
            w_out,
            residual,
            ridge_used: self.cfg.ridge,
            rank_deficient: true,
        })
    }

    fn refit(&self, res: SubReservoir) -> Result<(SubReservoir, DMatrix<f64>, ReadoutFit)> {
        let states = res.rollout(self.inputs)?.states;
        let fit = fit_readout(&states, self.inputs, self.targets, self.washout, self.cfg.ridge)?;
        Ok((res, states, fit))
    }

    /// Performs one growth step, or reports why training is over.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some(reason) = self.stop_condition() {
            self.stopped = Some(reason);
            return Ok(StepOutcome::Stopped(reason));
        }
        let residual_before = self.residual.clone();
        match self.screen()? {
            None => {
                self.stopped = Some(StopReason::NoCandidate);
                Ok(StepOutcome::Stopped(StopReason::NoCandidate))
            }
            Some(candidate) => {
                self.accept(&candidate)?;
                Ok(StepOutcome::Accepted(Box::new(NodeStep {
                    residual_before,
                    candidate,
                    residual_after: self.residual_norm(),
                })))
            }
        }
    }

    pub fn run(mut self) -> Result<(SubReservoir, TrainReport)> {
        loop {
            if let StepOutcome::Stopped(reason) = self.step()? {
                self.report.stop_reason = reason;
                self.report.node_count = self.reservoir.nodes();
                return Ok((self.reservoir, self.report));
            }
        }
    }
}

/// Trains one sub-reservoir on the full target of `data`.
pub fn train_sub_reservoir(data: &TimeSeriesDataset, cfg: &ScConfig, seed: u64) -> Result<(SubReservoir, TrainReport)> {
    ScTrainer::new(data, cfg, seed)?.run()
}

/// Draws one candidate row from `U[−λ, λ]` with a random connection density.
fn draw_row(rng: &mut Rng, cfg: &ScConfig, k: usize, nodes: usize, lambda: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let [lo, hi] = cfg.sparsity_range;
    let density = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let weight = |rng: &mut Rng, masked: bool| {
        let w = rng.random_range(-lambda..=lambda);
        let keep = rng.random::<f64>() < density;
        if !masked || keep {
            w
        } else {
            0.0
        }
    };
    let w_in: Vec<f64> = (0..k).map(|_| weight(rng, cfg.mask_inputs)).collect();
    let mut w_r: Vec<f64> = (0..nodes).map(|_| weight(rng, true)).collect();
    w_r.push(weight(rng, cfg.mask_self));
    let b = rng.random_range(-lambda..=lambda);
    (w_in, w_r, b)
}

/// Keeps the accepted rows of `accepted` and scales only the last row of
/// `grown` so that the diagonal stays within `alpha` and the largest
/// singular value stays below one.
fn scale_new_row(accepted: &SubReservoir, grown: &SubReservoir, alpha: f64) -> Result<SubReservoir> {
    let n = grown.nodes();
    let row: Vec<f64> = grown.w_r().row(n - 1).iter().copied().collect();
    let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sigma_old = linalg::sigma_max(accepted.w_r());
    let target = if sigma_old < alpha { alpha } else { 0.5 * (1.0 + sigma_old) };
    let diag = row[n - 1].abs();
    let mut scale: f64 = 1.0;
    if diag > alpha {
        scale = scale.min(alpha / diag);
    }
    if row_norm > 0.0 {
        scale = scale.min((target * target - sigma_old * sigma_old).max(0.0).sqrt() / row_norm);
    }
    let mut w_r = grown.w_r().clone();
    loop {
        let mut candidate = w_r.clone();
        for v in candidate.row_mut(n - 1).iter_mut() {
            *v *= scale;
        }
        if scale == 0.0 || linalg::sigma_max(&candidate) < 1.0 {
            w_r = candidate;
            break;
        }
        scale *= 0.5;
    }
    SubReservoir::from_parts(
        grown.w_in().clone(),
        w_r,
        grown.bias().clone(),
        grown.w_out().clone(),
        grown.activation(),
        alpha,
    )
}
