//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FrscnError, Result};

/// Relative singular-value cutoff below which a least-squares system is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Ridge applied automatically when an unregularized system is rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-8;

const POWER_MAX_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-12;

pub fn is_lower_triangular(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..j.min(m.nrows()) {
            if m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Spectral radius of a triangular matrix: the eigenvalues sit on the diagonal.
pub fn spectral_radius_triangular(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral radius of a general square matrix from its Schur form.
pub fn spectral_radius_general(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if is_lower_triangular(m) {
        return spectral_radius_triangular(m);
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// Starts from the all-ones vector so the estimate is deterministic.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for iter in 0..POWER_MAX_ITERS {
        let w = m.tr_mul(&(m * &v));
        let norm = w.norm();
        if norm == 0.0 {
            // Start vector landed in the null space; retry from a ramp.
            if iter == 0 {
                v = DVector::from_fn(n, |i, _| (i + 1) as f64);
                v /= v.norm();
                continue;
            }
            return estimate;
        }
        let lambda = v.dot(&w);
        v = w / norm;
        let converged = (lambda - estimate).abs() <= POWER_TOL * lambda.abs();
        estimate = lambda;
        if converged && iter > 2 {
            break;
        }
    }
    // One more Rayleigh quotient on the converged vector.
    let mv = m * &v;
    mv.norm().max(estimate.max(0.0).sqrt())
}

/// Result of a least-squares solve `min ‖T − W Φ‖²` with `Φ` given as rows
/// of features by columns of samples.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// `L × p` weight matrix.
    pub weights: DMatrix<f64>,
    /// Ridge actually used (differs from the request when the fallback fired).
    pub ridge_used: f64,
    pub rank_deficient: bool,
}

/// Solves `min_W ‖T − W Φ‖²_F + ridge ‖W‖²_F` where `features` is `p × n`
/// and `targets` is `L × n`.
///
/// Thin SVD of `Φᵀ`, so the tall matrix is never squared. When `ridge == 0` and the factor is rank
/// deficient the solve is retried with [`FALLBACK_RIDGE`].
pub fn lstsq(features: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<LstsqSolution> {
    let p = features.nrows();
    let n = features.ncols();
    let l = targets.nrows();
    if targets.ncols() != n {
        return Err(FrscnError::shape("least-squares samples", n, targets.ncols()));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(FrscnError::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if p == 0 || n == 0 {
        return Ok(LstsqSolution {
            weights: DMatrix::zeros(l, p),
            ridge_used: ridge,
            rank_deficient: p > 0,
        });
    }

    // A QR step before the SVD loses accuracy on exactly collinear features
    // (saturated or constant nodes), so decompose the tall matrix directly.
    let svd = features.transpose().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let k = svd.singular_values.len();
    let rhs = targets.transpose();
    let sv = &svd.singular_values;
    let s_max = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    let s_min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let rank_deficient = k < p || s_max == 0.0 || s_min <= RANK_TOL * s_max;

    let ridge_used = if ridge == 0.0 && rank_deficient {
        FALLBACK_RIDGE
    } else {
        ridge
    };

    // Wᵀ = V diag(f(σ)) Uᵀ (Qᵀ Tᵀ)
    let mut coeffs = u.tr_mul(&rhs);
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        let s = sv[i];
        let factor = if ridge_used > 0.0 {
            s / (s * s + ridge_used)
        } else if s > RANK_TOL * s_max {
            1.0 / s
        } else {
            0.0
        };
        row *= factor;
    }
    let w_t = v_t.tr_mul(&coeffs);
    Ok(LstsqSolution {
        weights: w_t.transpose(),
        ridge_used,
        rank_deficient,
    })
}

/// Row-major matrix representation used in JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(FrscnError::Format(format!(
                "matrix record declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sigma_max_matches_svd() {
        for seed in 0..50 {
            let m = random_matrix(7, 7, seed);
            let exact = m.clone().singular_values().max();
            assert!((sigma_max(&m) - exact).abs() < 1e-9 * exact, "seed {seed}");
        }
    }

    #[test]
    fn sigma_max_of_null_start_vector() {
        // all-ones start vector is in the null space of this matrix
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!((sigma_max(&m) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn triangular_radius_matches_characteristic_roots() {
        // lower-triangular 3x3: eigenvalues are the diagonal entries
        let m = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 0.0, 1.7, -0.9, 0.0, -2.0, 4.0, 0.5]);
        let by_diag = spectral_radius_triangular(&m);
        let by_schur = m
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        assert!((by_diag - 0.9).abs() < 1e-15);
        assert!((by_schur - 0.9).abs() < 1e-9);
    }

    #[test]
    fn lstsq_scalar() {
        let x = DMatrix::from_row_slice(1, 1, &[2.0]);
        let t = DMatrix::from_row_slice(1, 1, &[6.0]);
        let sol = lstsq(&x, &t, 0.0).unwrap();
        assert!((sol.weights[(0, 0)] - 3.0).abs() < 1e-14);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn lstsq_rank_deficient_falls_back_to_ridge() {
        // duplicated feature row
        let mut x = random_matrix(2, 30, 3);
        let first = x.row(0).into_owned();
        x.set_row(1, &first);
        let t = random_matrix(1, 30, 4);
        let sol = lstsq(&x, &t, 0.0).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.ridge_used, FALLBACK_RIDGE);
        assert!(sol.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn lstsq_with_repeated_constant_rows_keeps_optimal_residual() {
        // several identical constant rows next to informative ones
        let base = random_matrix(6, 400, 11);
        let mut x = DMatrix::zeros(10, 400);
        x.rows_mut(0, 6).copy_from(&base);
        for i in 6..10 {
            x.row_mut(i).fill(0.5);
        }
        let t = random_matrix(2, 400, 12);
        let mut reduced = DMatrix::zeros(7, 400);
        reduced.rows_mut(0, 6).copy_from(&base);
        reduced.row_mut(6).fill(0.5);
        let full = lstsq(&x, &t, 0.0).unwrap();
        let exact = lstsq(&reduced, &t, 0.0).unwrap();
        assert!(full.rank_deficient && !exact.rank_deficient);
        let r_full = (&t - &full.weights * &x).norm();
        let r_exact = (&t - &exact.weights * &reduced).norm();
        assert!((r_full - r_exact).abs() < 1e-6 * r_exact, "{r_full} vs {r_exact}");
    }

    #[test]
    fn matrix_record_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rec = MatrixRecord::from(&m);
        assert_eq!(rec.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(rec.to_matrix().unwrap(), m);
    }
}
