//! Recursive adaptation of the stacked readout `Θ`.
//!
//! With `H(n)⁻¹ = c·I + Σ_{j≤n} G(j)G(j)ᵀ`, one step is
//!
//! ```text
//! e_s(n)  = t(n) − Θ(n−1) G(n)
//! H(n)    = H(n−1) − H(n−1)G Gᵀ H(n−1) / (1 + Gᵀ H(n−1) G)
//! Θ(n)ᵀ   = Θ(n−1)ᵀ + a · H(n) G(n) e_s(n)ᵀ
//! ```
//!
//! Reservoir states are not adapted; only `Θ` changes.

use nalgebra::{DMatrix, DVector};

use crate::dataset::TimeSeriesDataset;
use crate::error::{FrscnError, Result};
use crate::model::FrscnModel;

pub const DEFAULT_GAIN: f64 = 1.0;
pub const DEFAULT_INIT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    theta: DMatrix<f64>,
    h: DMatrix<f64>,
    a: f64,
    c: f64,
    steps: usize,
}

impl OnlineState {
    /// Starts from `theta` (`L × p`) with `H(0) = I / c`.
    pub fn new(theta: DMatrix<f64>, a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(FrscnError::invalid(format!("online gain a must lie in (0, 1], got {a}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(FrscnError::invalid(format!("online constant c must be finite and > 0, got {c}")));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(FrscnError::invalid("initial readout must be finite"));
        }
        let p = theta.ncols();
        Ok(OnlineState {
            theta,
            h: DMatrix::identity(p, p) / c,
            a,
            c,
            steps: 0,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn gain_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn predict(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.theta * g
    }

    /// Whether `H` is symmetric positive definite (Cholesky succeeds).
    pub fn gain_is_positive_definite(&self) -> bool {
        self.h.clone().cholesky().is_some()
    }

    /// One update; returns the prior error `e_s(n)`. Non-finite data leave
    /// the state untouched.
    pub fn step(&mut self, g: &DVector<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.feature_dim() {
            return Err(FrscnError::shape("online feature vector", self.feature_dim(), g.len()));
        }
        if t.len() != self.output_dim() {
            return Err(FrscnError::shape("online target", self.output_dim(), t.len()));
        }
        if g.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(FrscnError::invalid("online sample must be finite"));
        }
        let e = t - &self.theta * g;
        let hg = &self.h * g;
        let denom = 1.0 + g.dot(&hg);
        self.h.ger(-1.0 / denom, &hg, &hg, 1.0);
        // H(n) G(n) = H(n−1) G(n) / (1 + Gᵀ H(n−1) G)
        let k = hg / denom;
        self.theta.ger(self.a, &e, &k, 1.0);
        let sym = (&self.h + self.h.transpose()) * 0.5;
        self.h = sym;
        self.steps += 1;
        Ok(e)
    }
}

/// Online state seeded with the model's stacked readout.
pub fn init_online(model: &FrscnModel, a: f64, c: f64) -> Result<OnlineState> {
    OnlineState::new(model.stacked_theta(), a, c)
}

/// Result of adapting a model over a dataset.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub model: FrscnModel,
    pub state: OnlineState,
    /// Prior errors (normalized units), `L × (n − washout)`.
    pub errors: DMatrix<f64>,
    /// `Θ` after every step when history was requested.
    pub history: Vec<DMatrix<f64>>,
}

/// Streams `ds` (raw units) through the model, updating `Θ` on every
/// post-washout sample, and writes the final `Θ` back into the model.
pub fn run_online(model: &FrscnModel, mut state: OnlineState, ds: &TimeSeriesDataset, keep_history: bool) -> Result<OnlineRun> {
    if ds.input_dim() != model.input_dim() || ds.output_dim() != model.output_dim() {
        return Err(FrscnError::shape(
            "online dataset dimensions",
            format!("{} inputs / {} outputs", model.input_dim(), model.output_dim()),
            format!("{} inputs / {} outputs", ds.input_dim(), ds.output_dim()),
        ));
    }
    if state.feature_dim() != model.stacked_dim() || state.output_dim() != model.output_dim() {
        return Err(FrscnError::shape(
            "online state",
            format!("{}x{}", model.output_dim(), model.stacked_dim()),
            format!("{}x{}", state.output_dim(), state.feature_dim()),
        ));
    }
    let norm = model.normalization();
    let u = norm.apply_inputs(ds.inputs())?;
    let t = norm.apply_targets(ds.targets())?;
    let g = model.stacked_features(&u)?;
    let washout = ds.washout();
    let m = ds.len() - washout;
    let mut errors = DMatrix::zeros(ds.output_dim(), m);
    let mut history = Vec::new();
    for s in 0..m {
        let n = washout + s;
        let e = state.step(&g.column(n).into_owned(), &t.column(n).into_owned())?;
        errors.set_column(s, &e);
        if keep_history {
            history.push(state.theta().clone());
        }
    }
    let mut updated = model.clone();
    updated.set_stacked_theta(state.theta())?;
    Ok(OnlineRun {
        model: updated,
        state,
        errors,
        history,
    })
}

/// `‖Θ(n) − Θ_ref‖_F` for every snapshot.
pub fn contraction_diagnostic(history: &[DMatrix<f64>], theta_ref: &DMatrix<f64>) -> Vec<f64> {
    history.iter().map(|th| (th - theta_ref).norm()).collect()
}
