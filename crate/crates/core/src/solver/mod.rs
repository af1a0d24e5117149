//! Penalized maximum likelihood for the bilinear model and for the
//! conventional `vec(X)` ridge-logistic comparison model.
//!
//! Both are fitted by Fisher scoring, `theta <- theta + H^-1 g`, where `g` is the
//! gradient of the penalized log-likelihood and `H = X(theta)' V X(theta) + lambda J''`.
//! For the bilinear model `H` drops the zero-mean cross block of the observed
//! Hessian (see [`hessian_cross_term`]), so the plus sign in the update is an
//! ascent step. Steps that lower the objective are halved up to 30 times.

mod newton;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use newton::FitStatus;
pub(crate) use newton::{maximize, AscentObjective, NewtonSettings};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::linalg::{ridged_cholesky, solve_spd, weighted_gram};
use crate::model::{select_baseline_row, ThetaParam};
use crate::numeric::{bernoulli_loglik, sigmoid};

/// Which coordinates the quadratic ridge penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// `||theta||^2 / 2`, intercept included.
    AllTheta,
    /// `(||alpha*||^2 + ||beta||^2) / 2`.
    #[default]
    NoIntercept,
}

impl PenaltyKind {
    /// Penalty weight of free coordinate `coord` (0 is the intercept).
    pub(crate) fn weight(self, coord: usize) -> f64 {
        match (self, coord) {
            (PenaltyKind::NoIntercept, 0) => 0.0,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = MvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-theta" | "all" => Ok(PenaltyKind::AllTheta),
            "no-intercept" => Ok(PenaltyKind::NoIntercept),
            other => Err(MvError::InvalidInput(format!("unknown penalty kind `{other}`"))),
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub penalty: PenaltyKind,
    /// Convergence threshold on the sup-norm of the Newton step.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; defaults to all free parameters zero.
    pub init: Option<ThetaParam>,
    /// Pinned row of `alpha`; chosen by [`select_baseline_row`] when `None`.
    pub baseline_row: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            penalty: PenaltyKind::NoIntercept,
            tol: 1e-8,
            max_iter: 100,
            init: None,
            baseline_row: None,
        }
    }
}

impl FitConfig {
    pub fn with_lambda(lambda: f64, penalty: PenaltyKind) -> Self {
        Self { lambda, penalty, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(MvError::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(MvError::InvalidInput("tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(MvError::InvalidInput("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn settings(&self) -> NewtonSettings {
        NewtonSettings::new(self.tol, self.max_iter)
    }

    fn resolve_baseline(&self, data: &MatrixDataset) -> Result<usize> {
        if let Some(init) = &self.init {
            return Ok(init.baseline_row());
        }
        match self.baseline_row {
            Some(b) if b < data.p() => Ok(b),
            Some(b) => Err(MvError::IndexOutOfRange { index: b, len: data.p() }),
            None if data.p() == 1 => Ok(0),
            None => select_baseline_row(data),
        }
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ThetaParam,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    /// Penalized log-likelihood after each iteration.
    pub trace: Vec<f64>,
    /// Largest diagonal ridge any Newton solve needed (0 when none).
    pub ridge: f64,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    /// Diagnostics that do not invalidate the fit.
    pub warnings: Vec<String>,
}

/// Off-baseline `|alpha|` above which the pinned entry is flagged as relatively tiny.
const TINY_BASELINE_RATIO: f64 = 1e3;

pub(crate) fn baseline_warnings(theta: &ThetaParam) -> Vec<String> {
    let largest = theta.free_alpha().fold(0.0_f64, |m, a| m.max(a.abs()));
    if largest > TINY_BASELINE_RATIO {
        vec![format!(
            "alpha effects up to {largest:.3e} relative to the pinned row {}; the baseline row may have a near-zero effect",
            theta.baseline_row() + 1
        )]
    } else {
        Vec::new()
    }
}

fn check_theta(theta: &ThetaParam, data: &MatrixDataset) -> Result<()> {
    if (theta.p(), theta.q()) != (data.p(), data.q()) {
        return Err(MvError::dims(
            format!("{}x{}", data.p(), data.q()),
            format!("theta for {}x{}", theta.p(), theta.q()),
        ));
    }
    Ok(())
}

/// Bernoulli log-likelihood of the bilinear model.
pub fn log_likelihood(theta: &ThetaParam, data: &MatrixDataset) -> Result<f64> {
    check_theta(theta, data)?;
    Ok(data
        .matrices()
        .iter()
        .zip(data.labels())
        .map(|(x, &y)| bernoulli_loglik(f64::from(y), theta.gamma() + theta.bilinear(x)))
        .sum())
}

/// `lambda * J(theta)`; the pinned `alpha` entry is never penalized.
pub fn penalty(theta: &ThetaParam, kind: PenaltyKind, lambda: f64) -> f64 {
    let free = theta.to_free();
    0.5 * lambda * free.iter().enumerate().map(|(k, v)| kind.weight(k) * v * v).sum::<f64>()
}

/// Working covariates `(1, C' X_i beta, X_i' alpha)` of one subject.
fn working_row(theta: &ThetaParam, x: &DMatrix<f64>, out: &mut [f64]) -> f64 {
    let xb = x * theta.beta();
    let xa = x.tr_mul(theta.alpha());
    let b = theta.baseline_row();
    out[0] = 1.0;
    let mut k = 1;
    for (i, &v) in xb.iter().enumerate() {
        if i != b {
            out[k] = v;
            k += 1;
        }
    }
    out[k..].copy_from_slice(xa.as_slice());
    theta.gamma() + xb.dot(theta.alpha())
}

/// The `n x (p+q)` matrix of working covariates; row `i` is the gradient of
/// subject `i`'s linear predictor with respect to the free parameters.
pub fn working_covariates(theta: &ThetaParam, data: &MatrixDataset) -> Result<DMatrix<f64>> {
    check_theta(theta, data)?;
    Ok(working_system(theta, data.matrices()).rows)
}

pub(crate) struct WorkingSystem {
    pub rows: DMatrix<f64>,
    /// Linear predictors at `theta`.
    pub eta: Vec<f64>,
}

pub(crate) fn working_system(theta: &ThetaParam, matrices: &[DMatrix<f64>]) -> WorkingSystem {
    let d = theta.num_free();
    let n = matrices.len();
    let mut rows = DMatrix::zeros(n, d);
    let mut buf = vec![0.0; d];
    let mut eta = Vec::with_capacity(n);
    for (i, x) in matrices.iter().enumerate() {
        eta.push(working_row(theta, x, &mut buf));
        for (k, &v) in buf.iter().enumerate() {
            rows[(i, k)] = v;
        }
    }
    WorkingSystem { rows, eta }
}

/// Gradient of `l(theta) - lambda J(theta)` with respect to the free parameters.
pub fn gradient(theta: &ThetaParam, data: &MatrixDataset, config: &FitConfig) -> Result<DVector<f64>> {
    check_theta(theta, data)?;
    let obj = MvObjective::new(data, theta.baseline_row(), config);
    Ok(obj.gradient_and_curvature(&theta.to_free()).0)
}

/// Fisher-scoring curvature `X(theta)' V X(theta) + lambda J''`.
pub fn fisher_hessian(theta: &ThetaParam, data: &MatrixDataset, config: &FitConfig) -> Result<DMatrix<f64>> {
    check_theta(theta, data)?;
    let obj = MvObjective::new(data, theta.baseline_row(), config);
    Ok(obj.gradient_and_curvature(&theta.to_free()).1)
}

/// `X(theta)' V X(theta)` alone (no penalty): the empirical information.
pub fn information_matrix(theta: &ThetaParam, data: &MatrixDataset) -> Result<DMatrix<f64>> {
    check_theta(theta, data)?;
    let sys = working_system(theta, data.matrices());
    let v: Vec<f64> = sys.eta.iter().map(|&t| {
        let pi = sigmoid(t);
        pi * (1.0 - pi)
    }).collect();
    Ok(weighted_gram(&sys.rows, &v))
}

/// The part of the observed Hessian that Fisher scoring drops: the symmetric
/// block `sum_i C' X_i (Y_i - pi_i)` coupling `alpha*` with `beta`.
/// The observed Hessian of the penalized log-likelihood equals
/// `-fisher_hessian + hessian_cross_term`.
pub fn hessian_cross_term(theta: &ThetaParam, data: &MatrixDataset) -> Result<DMatrix<f64>> {
    check_theta(theta, data)?;
    let (p, q) = (theta.p(), theta.q());
    let b = theta.baseline_row();
    let mut block = DMatrix::zeros(p - 1, q);
    for (x, &y) in data.matrices().iter().zip(data.labels()) {
        let resid = f64::from(y) - sigmoid(theta.gamma() + theta.bilinear(x));
        let mut r = 0;
        for i in 0..p {
            if i == b {
                continue;
            }
            for j in 0..q {
                block[(r, j)] += resid * x[(i, j)];
            }
            r += 1;
        }
    }
    let d = p + q;
    let mut out = DMatrix::zeros(d, d);
    out.view_mut((1, p), (p - 1, q)).copy_from(&block);
    out.view_mut((p, 1), (q, p - 1)).copy_from(&block.transpose());
    Ok(out)
}

pub(crate) struct MvObjective<'a> {
    data: &'a MatrixDataset,
    baseline: usize,
    lambda: f64,
    kind: PenaltyKind,
}

impl<'a> MvObjective<'a> {
    pub(crate) fn new(data: &'a MatrixDataset, baseline: usize, config: &FitConfig) -> Self {
        Self { data, baseline, lambda: config.lambda, kind: config.penalty }
    }

    fn theta(&self, x: &DVector<f64>) -> ThetaParam {
        ThetaParam::from_free(x, self.data.p(), self.data.q(), self.baseline)
            .expect("free vector length is fixed by construction")
    }
}

impl AscentObjective for MvObjective<'_> {
    fn dim(&self) -> usize {
        self.data.p() + self.data.q()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let theta = self.theta(x);
        let ll: f64 = self
            .data
            .matrices()
            .iter()
            .zip(self.data.labels())
            .map(|(m, &y)| bernoulli_loglik(f64::from(y), theta.gamma() + theta.bilinear(m)))
            .sum();
        ll - penalty(&theta, self.kind, self.lambda)
    }

    fn gradient_and_curvature(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let theta = self.theta(x);
        let sys = working_system(&theta, self.data.matrices());
        let (resid, v): (Vec<f64>, Vec<f64>) = sys
            .eta
            .iter()
            .zip(self.data.labels())
            .map(|(&t, &y)| {
                let pi = sigmoid(t);
                (f64::from(y) - pi, pi * (1.0 - pi))
            })
            .unzip();
        let mut grad = sys.rows.tr_mul(&DVector::from_vec(resid));
        let mut h = weighted_gram(&sys.rows, &v);
        for k in 0..self.dim() {
            let w = self.lambda * self.kind.weight(k);
            grad[k] -= w * x[k];
            h[(k, k)] += w;
        }
        (grad, h)
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Fits the bilinear model by damped Fisher scoring.
pub fn fit(data: &MatrixDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let baseline = config.resolve_baseline(data)?;
    let init = match &config.init {
        Some(t) => {
            check_theta(t, data)?;
            t.clone()
        }
        None => ThetaParam::initial(data.p(), data.q(), baseline)?,
    };
    let obj = MvObjective::new(data, baseline, config);
    let run = maximize(&obj, init.to_free(), config.settings())?;
    let theta = ThetaParam::from_free(&run.x, data.p(), data.q(), baseline)?;
    let loglik = log_likelihood(&theta, data)?;
    if run.status != FitStatus::Converged {
        log::debug!("fit stopped with {:?} after {} iterations", run.status, run.iterations);
    }
    Ok(FitResult {
        converged: run.status == FitStatus::Converged,
        status: run.status,
        iterations: run.iterations,
        final_gradient_norm: run.final_gradient_norm,
        loglik,
        penalized_loglik: run.value,
        trace: run.trace,
        ridge: run.max_ridge,
        lambda: config.lambda,
        penalty: config.penalty,
        warnings: baseline_warnings(&theta),
        theta,
    })
}

/// Ridge-penalized logistic regression on an arbitrary feature matrix
/// (intercept added internally).
#[derive(Debug, Clone)]
pub struct ConventionalFit {
    pub gamma: f64,
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub loglik: f64,
    pub penalized_loglik: f64,
    /// Penalized log-likelihood after each iteration.
    pub trace: Vec<f64>,
}

impl ConventionalFit {
    pub fn predictor(&self, features: &[f64]) -> f64 {
        self.gamma + self.coefficients.iter().zip(features).map(|(c, f)| c * f).sum::<f64>()
    }

    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.predictor(features))
    }
}

struct LogisticObjective<'a> {
    design: DMatrix<f64>,
    labels: &'a [u8],
    lambda: f64,
    kind: PenaltyKind,
}

impl AscentObjective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let eta = &self.design * x;
        let ll: f64 = eta.iter().zip(self.labels).map(|(&t, &y)| bernoulli_loglik(f64::from(y), t)).sum();
        let pen: f64 = x.iter().enumerate().map(|(k, v)| self.kind.weight(k) * v * v).sum();
        ll - 0.5 * self.lambda * pen
    }

    fn gradient_and_curvature(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (grad, v) = self.gradient_and_weights(x);
        let mut h = weighted_gram(&self.design, &v);
        for k in 0..self.dim() {
            h[(k, k)] += self.lambda * self.kind.weight(k);
        }
        (grad, h)
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient_and_weights(x).0
    }

    fn newton_step(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let (n, d) = self.design.shape();
        if d <= n || self.lambda == 0.0 {
            let (grad, h) = self.gradient_and_curvature(x);
            let (step, ridge) = solve_spd(&h, &grad, "Newton system")?;
            return Ok((grad, step, ridge));
        }
        let (grad, v) = self.gradient_and_weights(x);
        let (step, ridge) = self.kernel_step(&grad, &v)?;
        Ok((grad, step, ridge))
    }
}

impl LogisticObjective<'_> {
    fn gradient_and_weights(&self, x: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let eta = &self.design * x;
        let (resid, v): (Vec<f64>, Vec<f64>) = eta
            .iter()
            .zip(self.labels)
            .map(|(&t, &y)| {
                let pi = sigmoid(t);
                (f64::from(y) - pi, pi * (1.0 - pi))
            })
            .unzip();
        let mut grad = self.design.tr_mul(&DVector::from_vec(resid));
        for k in 0..self.dim() {
            grad[k] -= self.lambda * self.kind.weight(k) * x[k];
        }
        (grad, v)
    }

    /// Solves `(D'VD + lambda W) s = g` in observation space when there are more
    /// coefficients than observations: the penalized block is inverted with the
    /// Woodbury identity (an `n x n` solve) and the unpenalized coordinates are
    /// eliminated through their Schur complement.
    fn kernel_step(&self, grad: &DVector<f64>, v: &[f64]) -> Result<(DVector<f64>, f64)> {
        let (n, d) = self.design.shape();
        let (pen, free): (Vec<usize>, Vec<usize>) = (0..d).partition(|&k| self.kind.weight(k) > 0.0);
        let mut scaled = self.design.clone();
        for (i, &w) in v.iter().enumerate() {
            scaled.row_mut(i).scale_mut(w.max(0.0).sqrt());
        }
        let dp = scaled.select_columns(&pen);
        let lambda = self.lambda;
        let mut k = &dp * dp.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let (chol, ridge) = ridged_cholesky(&k, "kernel Newton system")?;
        // H_PP^-1 y = (y - Dp' (lambda I + Dp Dp')^-1 Dp y) / lambda
        let apply_inv = |y: &DMatrix<f64>| -> DMatrix<f64> {
            let inner = chol.solve(&(&dp * y));
            (y - dp.tr_mul(&inner)) / lambda
        };
        let g_p = DMatrix::from_iterator(pen.len(), 1, pen.iter().map(|&k| grad[k]));
        let b = apply_inv(&g_p);
        let mut step = DVector::zeros(d);
        if free.is_empty() {
            for (r, &k) in pen.iter().enumerate() {
                step[k] = b[(r, 0)];
            }
            return Ok((step, ridge));
        }
        let du = scaled.select_columns(&free);
        let h_pu = dp.tr_mul(&du);
        let a = apply_inv(&h_pu);
        let schur = du.tr_mul(&du) - h_pu.tr_mul(&a);
        let g_u = DVector::from_iterator(free.len(), free.iter().map(|&k| grad[k]));
        let rhs = g_u - h_pu.tr_mul(&b).column(0);
        let (s_u, r2) = solve_spd(&schur, &rhs, "kernel Schur complement")?;
        let s_p = b.column(0) - &a * &s_u;
        for (r, &k) in pen.iter().enumerate() {
            step[k] = s_p[r];
        }
        for (r, &k) in free.iter().enumerate() {
            step[k] = s_u[r];
        }
        Ok((step, ridge.max(r2)))
    }
}

/// Ridge logistic regression of `labels` on the rows of `features`.
pub fn fit_ridge_logistic(
    features: &DMatrix<f64>,
    labels: &[u8],
    lambda: f64,
    kind: PenaltyKind,
    tol: f64,
    max_iter: usize,
) -> Result<ConventionalFit> {
    if features.nrows() != labels.len() || labels.is_empty() {
        return Err(MvError::dims(format!("{} rows", labels.len()), format!("{} rows", features.nrows())));
    }
    if !(lambda >= 0.0) {
        return Err(MvError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = features.nrows();
    let m = features.ncols();
    let mut design = DMatrix::zeros(n, m + 1);
    design.column_mut(0).fill(1.0);
    design.view_mut((0, 1), (n, m)).copy_from(features);
    let obj = LogisticObjective { design, labels, lambda, kind };
    let run = maximize(&obj, DVector::zeros(m + 1), NewtonSettings::new(tol, max_iter))?;
    let coefficients = DVector::from_iterator(m, run.x.iter().skip(1).copied());
    let loglik = {
        let eta = &obj.design * &run.x;
        eta.iter().zip(labels).map(|(&t, &y)| bernoulli_loglik(f64::from(y), t)).sum()
    };
    Ok(ConventionalFit {
        gamma: run.x[0],
        coefficients,
        converged: run.status == FitStatus::Converged,
        status: run.status,
        iterations: run.iterations,
        loglik,
        penalized_loglik: run.value,
        trace: run.trace,
    })
}

/// Conventional logistic model `gamma + vec(xi)' vec(X)` with a ridge penalty;
/// coefficients come back in column-major `vec` order.
pub fn fit_conventional(data: &MatrixDataset, lambda: f64, kind: PenaltyKind) -> Result<ConventionalFit> {
    fit_ridge_logistic(&data.vectorized(), data.labels(), lambda, kind, 1e-8, 100)
}

/// Log-likelihood of the conventional model at `(gamma, vec(xi))`.
pub fn conventional_log_likelihood(gamma: f64, xi_vec: &DVector<f64>, data: &MatrixDataset) -> Result<f64> {
    if xi_vec.len() != data.p() * data.q() {
        return Err(MvError::dims(format!("{}", data.p() * data.q()), format!("{}", xi_vec.len())));
    }
    Ok(data
        .matrices()
        .iter()
        .zip(data.labels())
        .map(|(x, &y)| {
            let t = gamma + x.as_slice().iter().zip(xi_vec.iter()).map(|(a, b)| a * b).sum::<f64>();
            bernoulli_loglik(f64::from(y), t)
        })
        .sum())
}
