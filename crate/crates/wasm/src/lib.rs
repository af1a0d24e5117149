//! Browser bindings for the interactive demo page.
//!
//! Results cross the boundary as JSON strings. The plain Rust functions hold
//! the logic and are usable (and tested) natively.

// Negated float comparisons reject NaN arguments from JavaScript as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use mvlogit::inference::{coefficient_table, covariance_estimate, probability_ci, CovarianceEstimate};
use mvlogit::simulation::{
    conventional_accuracy, draw_perturbed_xi, draw_replicate, explained_proportion, mv_accuracy, replicate_rng,
    similarity, SimDesign,
};
use mvlogit::solver::{fit, fit_conventional};
use mvlogit::{FitConfig, FitStatus, MvError, PenaltyKind, ThetaParam};
use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientView {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub rho: f64,
    pub similarity: f64,
    pub accuracy_mv: f64,
    pub accuracy_conventional: f64,
    pub coefficients: Vec<CoefficientView>,
}

/// A fitted bilinear model on one simulated training set.
pub struct Simulated {
    pub summary: FitSummary,
    pub theta: ThetaParam,
    pub cov: CovarianceEstimate,
}

fn design(p: usize, q: usize, n: usize, sigma: f64, lambda: f64, seed: u64) -> SimDesign {
    SimDesign { seed, lambda_mv: lambda, lambda_conventional: lambda, ..SimDesign::new(p, q, n, sigma) }
}

/// Simulates one replicate, fits both arms at `lambda` and builds 95% coefficient intervals.
pub fn simulate_and_fit(p: usize, q: usize, n: usize, sigma: f64, lambda: f64, seed: u64) -> mvlogit::Result<Simulated> {
    let design = design(p, q, n, sigma, lambda, seed);
    design.validate()?;
    let rep = draw_replicate(&design, 0);
    let cfg = FitConfig { baseline_row: Some(0), ..FitConfig::with_lambda(lambda, PenaltyKind::NoIntercept) };
    let mv = fit(&rep.train, &cfg)?;
    let conv = fit_conventional(&rep.train, lambda, PenaltyKind::NoIntercept)?;
    let cov = covariance_estimate(&mv, &rep.train)?;
    let truth = design.theta_true();
    let coefficients = coefficient_table(&mv.theta, &cov, 0.95)?
        .into_iter()
        .zip(truth.to_free().iter())
        .map(|(row, &t)| CoefficientView { name: row.name, truth: t, estimate: row.estimate, lower: row.lower, upper: row.upper })
        .collect();
    let summary = FitSummary {
        p,
        q,
        n,
        sigma,
        lambda,
        status: mv.status,
        iterations: mv.iterations,
        rho: explained_proportion(&rep.xi)?,
        similarity: similarity(&truth, &mv.theta)?,
        accuracy_mv: mv_accuracy(&mv.theta, &rep.test),
        accuracy_conventional: conventional_accuracy(&conv, &rep.test),
        coefficients,
    };
    Ok(Simulated { summary, theta: mv.theta, cov })
}

#[derive(Debug, Clone, Serialize)]
pub struct BandPoint {
    /// Bilinear part of the linear predictor at the query matrix.
    pub t: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Probability intervals along `X(t) = t D`, with `D` scaled so that
/// `alpha' X(t) beta = t` under the fitted parameters.
pub fn probability_band(sim: &Simulated, level: f64, t_min: f64, t_max: f64, points: usize) -> mvlogit::Result<Vec<BandPoint>> {
    if points < 2 || !(t_max > t_min) {
        return Err(MvError::InvalidInput("band needs points >= 2 and t_max > t_min".into()));
    }
    let outer: DMatrix<f64> = sim.theta.alpha() * sim.theta.beta().transpose();
    let scale = outer.norm_squared();
    if scale == 0.0 {
        return Err(MvError::InvalidInput("fitted coefficient matrix is zero".into()));
    }
    let direction = outer / scale;
    (0..points)
        .map(|k| {
            let t = t_min + (t_max - t_min) * k as f64 / (points - 1) as f64;
            let ci = probability_ci(&sim.theta, &sim.cov, &(&direction * t), level)?;
            Ok(BandPoint { t, estimate: ci.estimate, lower: ci.lower, upper: ci.upper })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub sigma: f64,
    pub mean_rho: f64,
}

/// Mean share of the top singular value of `alpha beta' + delta` over `draws` draws per sigma.
pub fn explained_curve(p: usize, q: usize, sigma_max: f64, steps: usize, draws: usize, seed: u64) -> mvlogit::Result<Vec<CurvePoint>> {
    if steps < 2 || draws == 0 || !(sigma_max > 0.0) {
        return Err(MvError::InvalidInput("curve needs steps >= 2, draws >= 1 and sigma_max > 0".into()));
    }
    (0..steps)
        .map(|k| {
            let sigma = sigma_max * k as f64 / (steps - 1) as f64;
            let d = SimDesign::new(p, q, 2, sigma);
            d.validate()?;
            let mut total = 0.0;
            for r in 0..draws {
                let mut rng = replicate_rng(seed, r as u64);
                total += explained_proportion(&draw_perturbed_xi(&d, &mut rng))?;
            }
            Ok(CurvePoint { sigma, mean_rho: total / draws as f64 })
        })
        .collect()
}

fn to_js<T: Serialize>(r: mvlogit::Result<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Fitted demo model held on the JavaScript side.
#[wasm_bindgen]
pub struct DemoFit {
    inner: Simulated,
}

#[wasm_bindgen]
impl DemoFit {
    #[wasm_bindgen(constructor)]
    pub fn new(p: usize, q: usize, n: usize, sigma: f64, lambda: f64, seed: u32) -> Result<DemoFit, JsError> {
        simulate_and_fit(p, q, n, sigma, lambda, u64::from(seed))
            .map(|inner| DemoFit { inner })
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// JSON [`FitSummary`].
    pub fn summary(&self) -> Result<String, JsError> {
        to_js(Ok(&self.inner.summary))
    }

    /// JSON array of [`BandPoint`].
    pub fn band(&self, level: f64, t_min: f64, t_max: f64, points: usize) -> Result<String, JsError> {
        to_js(probability_band(&self.inner, level, t_min, t_max, points))
    }
}

/// JSON array of [`CurvePoint`].
#[wasm_bindgen(js_name = explainedCurve)]
pub fn explained_curve_js(p: usize, q: usize, sigma_max: f64, steps: usize, draws: usize, seed: u32) -> Result<String, JsError> {
    to_js(explained_curve(p, q, sigma_max, steps, draws, u64::from(seed)))
}
