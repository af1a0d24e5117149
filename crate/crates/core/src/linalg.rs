//! Symmetric positive-definite solves with an escalating diagonal ridge.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvError, Result};

const MAX_RIDGE_STEPS: i32 = 60;

/// Cholesky factor of `h`, or of `h + r I` for the smallest
/// `r = 1e-8 * 2^k * trace(h) / d` that factorizes. Returns the ridge used.
pub fn ridged_cholesky(h: &DMatrix<f64>, context: &str) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok((chol, 0.0));
    }
    let d = h.nrows().max(1) as f64;
    let trace = h.trace();
    let scale = if trace.is_finite() && trace > 0.0 { trace / d } else { 1.0 };
    let mut ridge = 0.0;
    for k in 0..MAX_RIDGE_STEPS {
        ridge = 1e-8 * 2f64.powi(k) * scale;
        let mut shifted = h.clone();
        for i in 0..h.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(chol) = shifted.cholesky() {
            log::debug!("{context}: ridge {ridge:e} needed for factorization");
            return Ok((chol, ridge));
        }
    }
    Err(MvError::SingularMatrix { context: context.to_string(), ridge })
}

pub fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<(DVector<f64>, f64)> {
    let (chol, ridge) = ridged_cholesky(h, context)?;
    Ok((chol.solve(rhs), ridge))
}

pub fn inverse_spd(h: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let (chol, ridge) = ridged_cholesky(h, context)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, ridge))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `R' diag(w) R` for nonnegative weights.
pub fn weighted_gram(rows: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = rows.clone();
    for (i, &w) in weights.iter().enumerate() {
        let s = w.max(0.0).sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    let mut g = scaled.transpose() * &scaled;
    symmetrize(&mut g);
    g
}
