//! Sandwich covariance and Wald-type intervals.
//!
//! `Sigma = (H/n)^-1 (X'VX/n) (H/n)^-1` evaluated at the fitted parameters, with
//! `H` the penalized Fisher matrix. The standard error of coordinate `i` is
//! `sqrt(Sigma_ii / n)`; probability intervals are built on the logit scale and
//! mapped back, so they always lie inside `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::linalg::{inverse_spd, symmetrize};
use crate::model::{linear_predictor, ThetaParam};
use crate::numeric::sigmoid;
use crate::solver::{fisher_hessian, information_matrix, FitConfig, FitResult};

/// Estimated asymptotic covariance of `sqrt(n) (theta_hat - theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub n: usize,
    /// Diagonal ridge the bread inversion needed (0 when none).
    pub ridge: f64,
}

impl CovarianceEstimate {
    /// `sqrt(Sigma_ii / n)`.
    pub fn standard_error(&self, i: usize) -> f64 {
        (self.sigma_hat[(i, i)].max(0.0) / self.n as f64).sqrt()
    }

    pub fn standard_errors(&self) -> DVector<f64> {
        DVector::from_fn(self.sigma_hat.nrows(), |i, _| self.standard_error(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// `bread^-1 meat bread^-1` with both matrices already divided by `n`.
pub(crate) fn sandwich(h: &DMatrix<f64>, info: &DMatrix<f64>, n: usize, context: &str) -> Result<CovarianceEstimate> {
    let nf = n as f64;
    let (bread_inv, ridge) = inverse_spd(&(h / nf), context)?;
    let mut sigma_hat = &bread_inv * (info / nf) * &bread_inv;
    symmetrize(&mut sigma_hat);
    Ok(CovarianceEstimate { sigma_hat, n, ridge })
}

/// Sandwich covariance at `fit.theta` using the fit's own penalty.
pub fn covariance_estimate(fit: &FitResult, data: &MatrixDataset) -> Result<CovarianceEstimate> {
    covariance_at(&fit.theta, data, &FitConfig::with_lambda(fit.lambda, fit.penalty))
}

/// Sandwich covariance at an arbitrary parameter value.
pub fn covariance_at(theta: &ThetaParam, data: &MatrixDataset, config: &FitConfig) -> Result<CovarianceEstimate> {
    let h = fisher_hessian(theta, data, config)?;
    let info = information_matrix(theta, data)?;
    sandwich(&h, &info, data.n(), "sandwich bread")
}

/// Two-sided standard normal quantile `z_{a/2}` for confidence `level = 1 - a`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MvError::InvalidInput(format!("confidence level {level} outside (0,1)")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// Wald interval for free coordinate `index`: `theta_i -/+ z sqrt(Sigma_ii) / sqrt(n)`.
pub fn theta_ci(theta: &ThetaParam, cov: &CovarianceEstimate, index: usize, level: f64) -> Result<IntervalEstimate> {
    let free = theta.to_free();
    if index >= free.len() || index >= cov.sigma_hat.nrows() {
        return Err(MvError::IndexOutOfRange { index, len: free.len() });
    }
    let z = normal_quantile(level)?;
    let half = z * cov.standard_error(index);
    let est = free[index];
    let (lower, upper) = if half == 0.0 { (est, est) } else { (est - half, est + half) };
    Ok(IntervalEstimate { estimate: est, lower, upper, level })
}

/// Delta-method standard deviation `sqrt(x(theta)' Sigma x(theta))` of the
/// linear predictor at `x` (before the `1/sqrt(n)` scaling).
pub fn predictor_sd(theta: &ThetaParam, cov: &CovarianceEstimate, x: &DMatrix<f64>) -> Result<f64> {
    theta.check_dims(x)?;
    let dummy = MatrixDataset::new(vec![x.clone()], vec![0])?;
    let w = crate::solver::working_covariates(theta, &dummy)?;
    let w = w.row(0).transpose();
    Ok((w.dot(&(&cov.sigma_hat * &w))).max(0.0).sqrt())
}

/// Interval for `P(Y=1|x)`: a symmetric logit-scale interval pushed through the logistic map.
pub fn probability_ci(theta: &ThetaParam, cov: &CovarianceEstimate, x: &DMatrix<f64>, level: f64) -> Result<IntervalEstimate> {
    let eta = linear_predictor(theta, x)?;
    let z = normal_quantile(level)?;
    let half = z * predictor_sd(theta, cov, x)? / (cov.n as f64).sqrt();
    Ok(IntervalEstimate {
        estimate: sigmoid(eta),
        lower: sigmoid(eta - half),
        upper: sigmoid(eta + half),
        level,
    })
}

/// One line of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn coefficient_table(theta: &ThetaParam, cov: &CovarianceEstimate, level: f64) -> Result<Vec<CoefficientRow>> {
    let names = ThetaParam::free_labels(theta.p(), theta.q(), theta.baseline_row());
    names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let ci = theta_ci(theta, cov, i, level)?;
            Ok(CoefficientRow {
                name,
                estimate: ci.estimate,
                se: cov.standard_error(i),
                lower: ci.lower,
                upper: ci.upper,
            })
        })
        .collect()
}
