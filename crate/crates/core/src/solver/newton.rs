//! Damped Newton ascent shared by every penalized likelihood in the crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MvError, Result};
use crate::linalg::solve_spd;

/// A penalized log-likelihood together with a positive semidefinite curvature
/// matrix standing in for minus its Hessian.
pub(crate) trait AscentObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient_and_curvature(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
    fn lambda(&self) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient_and_curvature(x).0
    }

    /// Gradient, the scoring step `H^-1 g`, and the ridge the solve needed.
    fn newton_step(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let (grad, curvature) = self.gradient_and_curvature(x);
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok((grad.clone(), grad, 0.0));
        }
        let (step, ridge) = solve_spd(&curvature, &grad, "Newton system")?;
        Ok((grad, step, ridge))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// Parameters exceeded the divergence bound with no penalty: the MLE does not exist.
    Diverged,
    /// Step-halving could not find an ascent step before the tolerance was met.
    Stalled,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub divergence_bound: f64,
}

impl NewtonSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, max_halvings: 30, divergence_bound: 1e4 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonRun {
    pub x: DVector<f64>,
    pub status: FitStatus,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub value: f64,
    pub final_gradient_norm: f64,
    pub max_ridge: f64,
}

pub(crate) fn maximize<O: AscentObjective>(obj: &O, x0: DVector<f64>, settings: NewtonSettings) -> Result<NewtonRun> {
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(MvError::InvalidInput("tol must be > 0 and max_iter >= 1".into()));
    }
    let mut x = x0;
    let mut current = obj.value(&x);
    if !current.is_finite() {
        return Err(MvError::NonFinite { iteration: 0 });
    }
    let mut trace = Vec::new();
    let mut max_ridge = 0.0_f64;
    let mut status = FitStatus::MaxIterations;

    for iter in 1..=settings.max_iter {
        let (grad, step, ridge) = obj.newton_step(&x)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(MvError::NonFinite { iteration: iter });
        }
        max_ridge = max_ridge.max(ridge);
        let step_size = step.amax();

        // Below this predicted gain, objective differences are rounding noise and
        // the line search cannot judge the step; take it whole.
        let predicted_gain = grad.dot(&step);
        let noise_floor = 1e-10 * (1.0 + current.abs());

        let mut t = 1.0;
        let mut accepted = None;
        if predicted_gain <= noise_floor {
            let cand = &x + &step;
            let v = obj.value(&cand);
            if v.is_finite() {
                accepted = Some((cand, v));
            }
        }
        for _ in 0..=settings.max_halvings {
            if accepted.is_some() {
                break;
            }
            let cand = &x + &step * t;
            let v = obj.value(&cand);
            if v.is_finite() && v >= current {
                accepted = Some((cand, v));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, v)) => {
                x = cand;
                current = v;
            }
            None if step_size < settings.tol => {}
            None => {
                trace.push(current);
                status = FitStatus::Stalled;
                break;
            }
        }
        trace.push(current);

        if step_size < settings.tol {
            status = FitStatus::Converged;
            break;
        }
        if obj.lambda() == 0.0 && x.amax() > settings.divergence_bound {
            status = FitStatus::Diverged;
            break;
        }
    }

    let grad = obj.gradient(&x);
    Ok(NewtonRun {
        iterations: trace.len(),
        x,
        status,
        trace,
        value: current,
        final_gradient_norm: grad.norm(),
        max_ridge,
    })
}
