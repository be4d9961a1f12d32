//! One sub-reservoir: `x(n) = g(W_in u(n) + W_r x(n−1) + b)` with a
//! lower-triangular `W_r` that grows one row (node) at a time, plus a linear
//! readout over `[x(n); u(n)]`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{FrscnError, Result};
use crate::linalg::{self, MatrixRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = FrscnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(FrscnError::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubReservoir {
    w_in: DMatrix<f64>,
    w_r: DMatrix<f64>,
    bias: DVector<f64>,
    w_out: DMatrix<f64>,
    activation: Activation,
    alpha: f64,
}

/// Reservoir states `N × n`, column `n` is `x(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub states: DMatrix<f64>,
}

impl StateMatrix {
    pub fn nodes(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// Stacks `[x(n); u(n)]` for every column, the readout's design matrix.
    pub fn design(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.len() {
            return Err(FrscnError::shape("design matrix samples", self.len(), inputs.ncols()));
        }
        let n = self.nodes();
        let k = inputs.nrows();
        let mut out = DMatrix::zeros(n + k, self.len());
        out.rows_mut(0, n).copy_from(&self.states);
        out.rows_mut(n, k).copy_from(inputs);
        Ok(out)
    }
}

impl SubReservoir {
    /// A reservoir with no nodes yet; the readout sees only the inputs.
    pub fn empty(input_dim: usize, output_dim: usize, activation: Activation, alpha: f64) -> Self {
        SubReservoir {
            w_in: DMatrix::zeros(0, input_dim),
            w_r: DMatrix::zeros(0, 0),
            bias: DVector::zeros(0),
            w_out: DMatrix::zeros(output_dim, input_dim),
            activation,
            alpha,
        }
    }

    pub fn from_parts(
        w_in: DMatrix<f64>,
        w_r: DMatrix<f64>,
        bias: DVector<f64>,
        w_out: DMatrix<f64>,
        activation: Activation,
        alpha: f64,
    ) -> Result<Self> {
        let n = w_in.nrows();
        let k = w_in.ncols();
        if w_r.shape() != (n, n) {
            return Err(FrscnError::shape("reservoir matrix", format!("{n}x{n}"), format!("{:?}", w_r.shape())));
        }
        if bias.len() != n {
            return Err(FrscnError::shape("reservoir bias", n, bias.len()));
        }
        if w_out.ncols() != n + k {
            return Err(FrscnError::shape("readout columns", n + k, w_out.ncols()));
        }
        if w_in
            .iter()
            .chain(w_r.iter())
            .chain(bias.iter())
            .chain(w_out.iter())
            .any(|v| !v.is_finite())
        {
            return Err(FrscnError::invalid("reservoir weights must be finite"));
        }
        Ok(SubReservoir {
            w_in,
            w_r,
            bias,
            w_out,
            activation,
            alpha,
        })
    }

    pub fn nodes(&self) -> usize {
        self.w_r.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }

    /// Readout width `N + K`.
    pub fn feature_dim(&self) -> usize {
        self.nodes() + self.input_dim()
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn w_r(&self) -> &DMatrix<f64> {
        &self.w_r
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn w_out(&self) -> &DMatrix<f64> {
        &self.w_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_triangular(&self) -> bool {
        linalg::is_lower_triangular(&self.w_r)
    }

    pub fn set_readout(&mut self, w_out: DMatrix<f64>) -> Result<()> {
        if w_out.shape() != (self.output_dim(), self.feature_dim()) {
            return Err(FrscnError::shape(
                "readout",
                format!("{}x{}", self.output_dim(), self.feature_dim()),
                format!("{}x{}", w_out.nrows(), w_out.ncols()),
            ));
        }
        self.w_out = w_out;
        Ok(())
    }

    /// Appends one node. `w_r_row` has `N + 1` entries: connections from the
    /// existing nodes followed by the self-connection. Existing rows are
    /// copied unchanged and the readout gets a zero column for the new node.
    pub fn grow(&self, w_in_row: &[f64], w_r_row: &[f64], bias: f64) -> Result<SubReservoir> {
        let n = self.nodes();
        let k = self.input_dim();
        if w_in_row.len() != k {
            return Err(FrscnError::shape("new input-weight row", k, w_in_row.len()));
        }
        if w_r_row.len() != n + 1 {
            return Err(FrscnError::shape("new reservoir row", n + 1, w_r_row.len()));
        }
        let mut w_in = self.w_in.clone().insert_row(n, 0.0);
        w_in.row_mut(n).copy_from_slice(w_in_row);
        let mut w_r = self.w_r.clone().insert_row(n, 0.0).insert_column(n, 0.0);
        for (j, &v) in w_r_row.iter().enumerate() {
            w_r[(n, j)] = v;
        }
        let bias_vec = self.bias.clone().insert_row(n, bias);
        let w_out = self.w_out.clone().insert_column(n, 0.0);
        SubReservoir::from_parts(w_in, w_r, bias_vec, w_out, self.activation, self.alpha)
    }

    /// Rescales `W_r` towards spectral radius `alpha` while keeping its
    /// largest singular value below one.
    ///
    /// The radius is the largest absolute diagonal entry (exact for a
    /// triangular matrix, Schur-based otherwise). If scaling to radius
    /// `alpha` would leave `σ_max ≥ 1`, the matrix is scaled to
    /// `σ_max = alpha` instead; a zero radius also scales by `σ_max`.
    pub fn rescale_spectral(&self, alpha: f64) -> Result<SubReservoir> {
        check_alpha(alpha)?;
        let mut out = self.clone();
        out.alpha = alpha;
        let sigma = linalg::sigma_max(&self.w_r);
        if sigma == 0.0 {
            return Ok(out);
        }
        let rho = linalg::spectral_radius_general(&self.w_r);
        let factor = if rho < 1e-12 {
            alpha / sigma
        } else {
            let f = alpha / rho;
            if f * sigma >= 1.0 {
                alpha / sigma
            } else {
                f
            }
        };
        out.w_r *= factor;
        Ok(out)
    }

    /// Classical echo-state scaling to spectral radius `alpha`, without the
    /// singular-value clamp.
    pub fn scale_to_radius(&self, alpha: f64) -> Result<SubReservoir> {
        check_alpha(alpha)?;
        let mut out = self.clone();
        out.alpha = alpha;
        let rho = linalg::spectral_radius_general(&self.w_r);
        if rho > 0.0 {
            out.w_r *= alpha / rho;
        }
        Ok(out)
    }

    /// One state update from `x` in place.
    pub fn step(&self, x: &mut DVector<f64>, u: DVectorView<'_, f64>) {
        let pre = &self.w_in * u + &self.w_r * &*x + &self.bias;
        for (xi, p) in x.iter_mut().zip(pre.iter()) {
            *xi = self.activation.apply(*p);
        }
    }

    /// States for every input column starting from `x(0) = 0`.
    pub fn rollout(&self, inputs: &DMatrix<f64>) -> Result<StateMatrix> {
        self.rollout_from(inputs, &DVector::zeros(self.nodes()))
    }

    pub fn rollout_from(&self, inputs: &DMatrix<f64>, x0: &DVector<f64>) -> Result<StateMatrix> {
        if inputs.nrows() != self.input_dim() {
            return Err(FrscnError::shape("rollout input rows", self.input_dim(), inputs.nrows()));
        }
        if x0.len() != self.nodes() {
            return Err(FrscnError::shape("initial state", self.nodes(), x0.len()));
        }
        let n = self.nodes();
        let len = inputs.ncols();
        // Input drive for all samples in one product.
        let drive = &self.w_in * inputs;
        let mut states = DMatrix::zeros(n, len);
        let mut prev = x0.clone();
        let mut next = DVector::zeros(n);
        for t in 0..len {
            next.gemv(1.0, &self.w_r, &prev, 0.0);
            for i in 0..n {
                next[i] = self.activation.apply(next[i] + drive[(i, t)] + self.bias[i]);
            }
            states.set_column(t, &next);
            std::mem::swap(&mut prev, &mut next);
        }
        Ok(StateMatrix { states })
    }

    /// `y(n) = W_out [x(n); u(n)]` for every column.
    pub fn readout(&self, states: &StateMatrix, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.nodes() != self.nodes() {
            return Err(FrscnError::shape("readout state rows", self.nodes(), states.nodes()));
        }
        if inputs.nrows() != self.input_dim() {
            return Err(FrscnError::shape("readout input rows", self.input_dim(), inputs.nrows()));
        }
        let design = states.design(inputs)?;
        Ok(&self.w_out * design)
    }

    /// `‖x_a(n) − x_b(n)‖` for `n = 1..=len` from two rollouts that differ
    /// only in their initial state.
    pub fn echo_state_gap(&self, inputs: &DMatrix<f64>, x0_a: &DVector<f64>, x0_b: &DVector<f64>) -> Result<Vec<f64>> {
        let a = self.rollout_from(inputs, x0_a)?;
        let b = self.rollout_from(inputs, x0_b)?;
        Ok((0..inputs.ncols())
            .map(|t| (a.states.column(t) - b.states.column(t)).norm())
            .collect())
    }

    pub(crate) fn to_record(&self) -> SubReservoirRecord {
        SubReservoirRecord {
            w_in: (&self.w_in).into(),
            w_r: (&self.w_r).into(),
            bias: self.bias.iter().copied().collect(),
            w_out: (&self.w_out).into(),
            activation: self.activation,
            alpha: self.alpha,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FrscnError::invalid(format!("scaling factor must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SubReservoirRecord {
    w_in: MatrixRecord,
    w_r: MatrixRecord,
    bias: Vec<f64>,
    w_out: MatrixRecord,
    activation: Activation,
    alpha: f64,
}

impl SubReservoirRecord {
    pub(crate) fn into_reservoir(self) -> Result<SubReservoir> {
        SubReservoir::from_parts(
            self.w_in.to_matrix()?,
            self.w_r.to_matrix()?,
            DVector::from_vec(self.bias),
            self.w_out.to_matrix()?,
            self.activation,
            self.alpha,
        )
    }
}
