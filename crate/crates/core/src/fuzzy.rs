//! Rule extraction with fuzzy c-means and Gaussian rule firing.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FrscnError, Result};
use crate::rng::seeded;

/// Width floor relative to the dimension's training range.
pub const WIDTH_FLOOR_REL: f64 = 1e-3;
/// Absolute width floor for constant dimensions.
pub const WIDTH_FLOOR_ABS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcmConfig {
    /// Fuzziness exponent `m > 1`.
    pub fuzziness: f64,
    pub max_iter: usize,
    /// Stop once no center moves farther than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            fuzziness: 2.0,
            max_iter: 300,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

impl FcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fuzziness > 1.0) || !self.fuzziness.is_finite() {
            return Err(FrscnError::invalid(format!("fcm fuzziness must be > 1, got {}", self.fuzziness)));
        }
        if self.max_iter == 0 {
            return Err(FrscnError::invalid("fcm max_iter must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(FrscnError::invalid(format!("fcm tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// `Q` Gaussian rules over `K` inputs. Row `i` of `centers`/`widths` holds
/// rule `i`'s antecedent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyRuleBank {
    centers: DMatrix<f64>,
    widths: DMatrix<f64>,
}

impl FuzzyRuleBank {
    pub fn new(centers: DMatrix<f64>, widths: DMatrix<f64>) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(FrscnError::invalid("rule bank needs at least one rule and one input"));
        }
        if centers.shape() != widths.shape() {
            return Err(FrscnError::shape(
                "rule bank widths",
                format!("{:?}", centers.shape()),
                format!("{:?}", widths.shape()),
            ));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(FrscnError::invalid("rule centers must be finite"));
        }
        if widths.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(FrscnError::invalid("rule widths must be finite and strictly positive"));
        }
        Ok(FuzzyRuleBank { centers, widths })
    }

    /// The single-rule bank used by the plain (non-fuzzy) models: every
    /// input fires it with strength 1.
    pub fn single(k: usize) -> Self {
        FuzzyRuleBank {
            centers: DMatrix::zeros(1, k),
            widths: DMatrix::from_element(1, k, 1.0),
        }
    }

    pub fn rule_count(&self) -> usize {
        self.centers.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn widths(&self) -> &DMatrix<f64> {
        &self.widths
    }

    /// Log of the unnormalized fire strength of every rule:
    /// `log ψ_i = −Σ_k ((u_k − c_k^i) / σ_k^i)²`.
    pub fn log_fire_strengths(&self, u: DVectorView<'_, f64>) -> DVector<f64> {
        DVector::from_fn(self.rule_count(), |i, _| {
            -(0..self.input_dim())
                .map(|k| {
                    let z = (u[k] - self.centers[(i, k)]) / self.widths[(i, k)];
                    z * z
                })
                .sum::<f64>()
        })
    }

    /// Normalized fire strengths `φ_i = ψ_i / Σ_j ψ_j`, computed in log space
    /// so that far-away inputs do not underflow to 0/0.
    pub fn fire_strengths(&self, u: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        if u.len() != self.input_dim() {
            return Err(FrscnError::shape("fire strength input", self.input_dim(), u.len()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FrscnError::invalid("fire strength input must be finite"));
        }
        if self.rule_count() == 1 {
            return Ok(DVector::from_element(1, 1.0));
        }
        let log_psi = self.log_fire_strengths(u);
        let top = log_psi.max();
        let mut phi = log_psi.map(|l| (l - top).exp());
        let total = phi.sum();
        phi /= total;
        Ok(phi)
    }

    /// Fire strengths for every column of a `K × n` input matrix, as `Q × n`.
    pub fn fire_strength_matrix(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rule_count(), inputs.ncols());
        for (n, col) in inputs.column_iter().enumerate() {
            let phi = self.fire_strengths(col.as_view())?;
            out.set_column(n, &phi);
        }
        Ok(out)
    }
}

/// Outcome of a fuzzy c-means fit.
#[derive(Debug, Clone)]
pub struct FcmFit {
    pub bank: FuzzyRuleBank,
    /// `Q × n` final memberships.
    pub memberships: DMatrix<f64>,
    /// Objective `Σ μ^m ‖x − c‖²` after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits `q` rules to the columns of `inputs` (`K × n`).
pub fn fit_fcm(inputs: &DMatrix<f64>, q: usize, cfg: &FcmConfig) -> Result<FuzzyRuleBank> {
    fit_fcm_traced(inputs, q, cfg).map(|fit| fit.bank)
}

pub fn fit_fcm_traced(inputs: &DMatrix<f64>, q: usize, cfg: &FcmConfig) -> Result<FcmFit> {
    cfg.validate()?;
    let k = inputs.nrows();
    let n = inputs.ncols();
    if q == 0 {
        return Err(FrscnError::invalid("rule count must be >= 1"));
    }
    if q > n {
        return Err(FrscnError::invalid(format!("rule count {q} exceeds sample count {n}")));
    }
    if k == 0 {
        return Err(FrscnError::invalid("fcm needs at least one input dimension"));
    }

    let mut centers = initial_centers(inputs, q, cfg.seed)?;
    let m = cfg.fuzziness;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut memberships;

    loop {
        iterations += 1;
        memberships = update_memberships(inputs, &centers, m);
        let new_centers = update_centers(inputs, &memberships, m);
        objective.push(fcm_objective(inputs, &memberships, &new_centers, m));
        let shift = (0..q)
            .map(|i| (new_centers.row(i) - centers.row(i)).norm())
            .fold(0.0_f64, f64::max);
        centers = new_centers;
        if shift < cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
    }
    memberships = update_memberships(inputs, &centers, m);
    let widths = membership_widths(inputs, &memberships, &centers, m);
    Ok(FcmFit {
        bank: FuzzyRuleBank::new(centers, widths)?,
        memberships,
        objective,
        iterations,
        converged,
    })
}

/// `q` distinct training points drawn under the seed, as rows.
fn initial_centers(inputs: &DMatrix<f64>, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = inputs.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut chosen: Vec<usize> = Vec::with_capacity(q);
    for idx in order {
        let col = inputs.column(idx);
        if chosen.iter().all(|&c| inputs.column(c) != col) {
            chosen.push(idx);
            if chosen.len() == q {
                break;
            }
        }
    }
    if chosen.len() < q {
        return Err(FrscnError::DegenerateClustering(format!(
            "only {} distinct points available for {q} clusters",
            chosen.len()
        )));
    }
    Ok(DMatrix::from_fn(q, inputs.nrows(), |i, k| inputs[(k, chosen[i])]))
}

fn update_memberships(inputs: &DMatrix<f64>, centers: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    let q = centers.nrows();
    let n = inputs.ncols();
    let exponent = 1.0 / (m - 1.0);
    let mut u = DMatrix::zeros(q, n);
    let mut d2 = vec![0.0; q];
    for j in 0..n {
        let x = inputs.column(j);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = x
                .iter()
                .enumerate()
                .map(|(k, v)| (v - centers[(i, k)]).powi(2))
                .sum();
        }
        // A point sitting on a center belongs to that cluster only.
        if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
            u[(hit, j)] = 1.0;
            continue;
        }
        // μ_ij = 1 / Σ_l (d_ij / d_lj)^(1/(m−1)), written with the smallest
        // distance factored out to stay in range.
        let d_min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let inv: Vec<f64> = d2.iter().map(|&d| (d_min / d).powf(exponent)).collect();
        let total: f64 = inv.iter().sum();
        for i in 0..q {
            u[(i, j)] = inv[i] / total;
        }
    }
    u
}

fn update_centers(inputs: &DMatrix<f64>, memberships: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    let weights = memberships.map(|mu| mu.powf(m));
    let q = memberships.nrows();
    let mut centers = &weights * inputs.transpose();
    for i in 0..q {
        let total = weights.row(i).sum();
        if total > 0.0 {
            let mut row = centers.row_mut(i);
            row /= total;
        }
    }
    centers
}

pub fn fcm_objective(inputs: &DMatrix<f64>, memberships: &DMatrix<f64>, centers: &DMatrix<f64>, m: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..inputs.ncols() {
        for i in 0..centers.nrows() {
            let d2: f64 = (0..inputs.nrows())
                .map(|k| (inputs[(k, j)] - centers[(i, k)]).powi(2))
                .sum();
            total += memberships[(i, j)].powf(m) * d2;
        }
    }
    total
}

/// Membership-weighted standard deviation per rule and dimension, floored
/// relative to the dimension's range.
fn membership_widths(inputs: &DMatrix<f64>, memberships: &DMatrix<f64>, centers: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    let q = centers.nrows();
    let k = inputs.nrows();
    let floors: Vec<f64> = inputs
        .row_iter()
        .map(|r| {
            let range = r.max() - r.min();
            if range > 0.0 {
                WIDTH_FLOOR_REL * range
            } else {
                WIDTH_FLOOR_ABS
            }
        })
        .collect();
    let weights = memberships.map(|mu| mu.powf(m));
    DMatrix::from_fn(q, k, |i, d| {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..inputs.ncols() {
            let w = weights[(i, j)];
            num += w * (inputs[(d, j)] - centers[(i, d)]).powi(2);
            den += w;
        }
        let sd = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        sd.max(floors[d])
    })
}
