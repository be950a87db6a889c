//! Dense least squares for the impulse-response error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Condition number above which [`solve_least_squares`] refuses to answer.
pub const CONDITION_LIMIT: f64 = 1e10;

/// `argmin ‖D e − rhs‖₂` via Householder QR. Requires `rows ≥ cols` and a
/// condition number below [`CONDITION_LIMIT`].
pub fn solve_least_squares(d: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = d.shape();
    if rhs.len() != rows {
        return Err(Error::DimensionMismatch(format!("rhs length {} vs {rows} rows", rhs.len())));
    }
    if rows < cols {
        return Err(Error::RankDeficient(f64::INFINITY));
    }
    let qr = d.clone().qr();
    let r = qr.r();
    // Singular values of R equal those of D; R is only cols × cols.
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::RankDeficient(cond));
    }
    let mut qtb = DVector::from_column_slice(rhs);
    qr.q_tr_mul(&mut qtb);
    let qtb = qtb.rows(0, cols).into_owned();
    let e = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient(cond))?;
    Ok(e.as_slice().to_vec())
}

/// Minimum-norm least-squares solution (works for any shape).
pub fn min_norm_least_squares(d: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != d.nrows() {
        return Err(Error::DimensionMismatch(format!("rhs length {} vs {} rows", rhs.len(), d.nrows())));
    }
    let svd = d.clone().svd(true, true);
    let eps = svd.singular_values.max() * (d.nrows().max(d.ncols()) as f64) * f64::EPSILON;
    let e = svd
        .solve(&DVector::from_column_slice(rhs), eps)
        .map_err(|m| Error::InvalidParameter(m.to_string()))?;
    Ok(e.as_slice().to_vec())
}

/// Smallest eigenvalue of `D Dᵀ`.
pub fn lambda_min_gram(d: &DMatrix<f64>) -> f64 {
    let gram = d * d.transpose();
    SymmetricEigen::new(gram).eigenvalues.min()
}

/// `min ‖D e − rhs‖² s.t. ‖G e‖² ≤ γ` with a diagonal 0/1 regularizer `G`.
#[derive(Debug, Clone)]
pub struct TikhonovProblem {
    pub operator: DMatrix<f64>,
    pub rhs: Vec<f64>,
    /// Diagonal of `G`; entries must be 0 or 1.
    pub g_diag: Vec<f64>,
    pub gamma: f64,
}

impl TikhonovProblem {
    /// `G = diag(1…1, 0…0)` with the first `⌊L/2⌋` taps penalized.
    pub fn half_penalized(operator: DMatrix<f64>, rhs: Vec<f64>, gamma: f64) -> Self {
        let l = operator.ncols();
        let g_diag = (0..l).map(|i| if i < l / 2 { 1.0 } else { 0.0 }).collect();
        Self { operator, rhs, g_diag, gamma }
    }

    fn validate(&self) -> Result<()> {
        let (rows, cols) = self.operator.shape();
        if self.rhs.len() != rows || self.g_diag.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "D is {rows}x{cols}, rhs {} and G diagonal {}",
                self.rhs.len(),
                self.g_diag.len()
            )));
        }
        if self.g_diag.iter().any(|&g| g != 0.0 && g != 1.0) {
            return Err(Error::InvalidParameter("G diagonal entries must be 0 or 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }

    fn penalty(&self, e: &[f64]) -> f64 {
        e.iter().zip(&self.g_diag).map(|(v, g)| (g * v).powi(2)).sum()
    }

    /// `argmin ‖D e − rhs‖² + μ‖G e‖²` through the stacked system `[D; √μ G]`.
    fn penalized(&self, mu: f64) -> Result<Vec<f64>> {
        let (rows, cols) = self.operator.shape();
        let mut a = DMatrix::<f64>::zeros(rows + cols, cols);
        a.rows_mut(0, rows).copy_from(&self.operator);
        let s = mu.sqrt();
        for (i, &g) in self.g_diag.iter().enumerate() {
            a[(rows + i, i)] = s * g;
        }
        let mut b = vec![0.0; rows + cols];
        b[..rows].copy_from_slice(&self.rhs);
        solve_least_squares(&a, &b).or_else(|_| min_norm_least_squares(&a, &b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TikhonovOutcome {
    pub e: Vec<f64>,
    /// Multiplier of the active constraint (0 when inactive).
    pub mu: f64,
    /// `‖G e‖²` at the returned solution.
    pub penalty: f64,
    /// False when the multiplier search could not bracket the constraint.
    pub bracketed: bool,
}

/// Constrained Tikhonov solve with `μ` found by safeguarded regula falsi on
/// `log μ`. If the minimum-norm least-squares solution already satisfies
/// the constraint it is returned with `μ = 0`.
pub fn solve_tikhonov(problem: &TikhonovProblem) -> Result<TikhonovOutcome> {
    problem.validate()?;
    let gamma = problem.gamma;
    let e0 = min_norm_least_squares(&problem.operator, &problem.rhs)?;
    let p0 = problem.penalty(&e0);
    if p0 <= gamma {
        return Ok(TikhonovOutcome { e: e0, mu: 0.0, penalty: p0, bracketed: true });
    }

    let scale = problem.operator.iter().map(|v| v * v).sum::<f64>() / problem.operator.ncols().max(1) as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let h = |log_mu: f64| -> Result<(f64, Vec<f64>)> {
        let e = problem.penalized(scale * log_mu.exp())?;
        Ok((problem.penalty(&e) - gamma, e))
    };

    // Bracket: h(lo) > 0 (constraint violated), h(hi) ≤ 0.
    let mut lo = (1e-14_f64).ln();
    let (mut h_lo, mut e_lo) = h(lo)?;
    if h_lo <= 0.0 {
        // Even a vanishing multiplier already satisfies the constraint:
        // the feasible exact fit is returned with an inactive multiplier.
        let penalty = problem.penalty(&e_lo);
        return Ok(TikhonovOutcome { e: e_lo, mu: 0.0, penalty, bracketed: true });
    }
    let mut hi = 0.0_f64;
    let (mut h_hi, mut e_hi) = h(hi)?;
    let mut expansions = 0;
    while h_hi > 0.0 {
        lo = hi;
        h_lo = h_hi;
        e_lo = e_hi;
        hi += (10.0_f64).ln() * 2.0;
        let next = h(hi)?;
        h_hi = next.0;
        e_hi = next.1;
        expansions += 1;
        if expansions > 40 {
            log::warn!("Tikhonov multiplier search failed to bracket the constraint");
            let penalty = problem.penalty(&e_hi);
            return Ok(TikhonovOutcome { e: e_hi, mu: scale * hi.exp(), penalty, bracketed: false });
        }
    }

    // Illinois variant of regula falsi.
    let mut side = 0i8;
    for _ in 0..200 {
        let mid = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        let mid = if mid.is_finite() && mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        let (h_mid, e_mid) = h(mid)?;
        if h_mid.abs() <= 1e-9 * gamma || (hi - lo) < 1e-15 {
            let penalty = problem.penalty(&e_mid);
            return Ok(TikhonovOutcome { e: e_mid, mu: scale * mid.exp(), penalty, bracketed: true });
        }
        if h_mid > 0.0 {
            lo = mid;
            h_lo = h_mid;
            e_lo = e_mid;
            if side == -1 {
                h_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            h_hi = h_mid;
            e_hi = e_mid;
            if side == 1 {
                h_lo *= 0.5;
            }
            side = 1;
        }
    }
    let _ = e_lo;
    let penalty = problem.penalty(&e_hi);
    Ok(TikhonovOutcome { e: e_hi, mu: scale * hi.exp(), penalty, bracketed: true })
}
