//! Baseline-category extension to `H >= 2` classes.
//!
//! Every class other than the reference class `h` has its own bilinear
//! predictor `eta_h = gamma_h + alpha_h' X beta_h`; the reference class has
//! predictor 0. All blocks pin the same row of `alpha`. With `H = 2` and the
//! reference class 2 every quantity here reduces to the binary model with
//! class 1 as the success label.

use nalgebra::{DMatrix, DVector};

use crate::data::MultiClassDataset;
use crate::error::{MvError, Result};
use crate::inference::{sandwich, CovarianceEstimate};
use crate::linalg::symmetrize;
use crate::model::{select_baseline_row, ThetaParam};
use crate::numeric::log1p_sum_exp;
use crate::solver::{
    baseline_warnings, maximize, penalty, working_system, AscentObjective, FitConfig, FitStatus, NewtonSettings,
    PenaltyKind, WorkingSystem,
};

/// Parameters of the `H`-class model: one [`ThetaParam`] block per
/// non-reference class, in increasing class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMulti {
    num_classes: usize,
    reference_class: usize,
    blocks: Vec<ThetaParam>,
}

impl ThetaMulti {
    /// `reference_class` is a 1-based class label; `blocks` follow the remaining
    /// classes in increasing order.
    pub fn new(blocks: Vec<ThetaParam>, num_classes: usize, reference_class: usize) -> Result<Self> {
        check_classes(num_classes, reference_class)?;
        if blocks.len() != num_classes - 1 {
            return Err(MvError::dims(format!("{} blocks", num_classes - 1), format!("{} blocks", blocks.len())));
        }
        let first = &blocks[0];
        for b in &blocks[1..] {
            if (b.p(), b.q(), b.baseline_row()) != (first.p(), first.q(), first.baseline_row()) {
                return Err(MvError::InvalidInput("blocks must share dimensions and baseline row".into()));
            }
        }
        Ok(Self { num_classes, reference_class, blocks })
    }

    /// All free parameters zero.
    pub fn initial(p: usize, q: usize, baseline_row: usize, num_classes: usize, reference_class: usize) -> Result<Self> {
        check_classes(num_classes, reference_class)?;
        let block = ThetaParam::initial(p, q, baseline_row)?;
        Self::new(vec![block; num_classes - 1], num_classes, reference_class)
    }

    pub fn from_free(
        free: &DVector<f64>,
        p: usize,
        q: usize,
        baseline_row: usize,
        num_classes: usize,
        reference_class: usize,
    ) -> Result<Self> {
        check_classes(num_classes, reference_class)?;
        let d = p + q;
        if free.len() != d * (num_classes - 1) {
            return Err(MvError::dims(format!("{} free parameters", d * (num_classes - 1)), free.len().to_string()));
        }
        let blocks = (0..num_classes - 1)
            .map(|k| ThetaParam::from_free(&free.rows(k * d, d).into_owned(), p, q, baseline_row))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, num_classes, reference_class)
    }

    /// Block free vectors stacked in block order.
    pub fn to_free(&self) -> DVector<f64> {
        let parts: Vec<f64> = self.blocks.iter().flat_map(|b| b.to_free().data.as_vec().clone()).collect();
        DVector::from_vec(parts)
    }

    pub fn blocks(&self) -> &[ThetaParam] {
        &self.blocks
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn reference_class(&self) -> usize {
        self.reference_class
    }

    /// Non-reference class labels in block order.
    pub fn block_classes(&self) -> Vec<usize> {
        (1..=self.num_classes).filter(|&h| h != self.reference_class).collect()
    }

    /// Block of class `class`, or `None` for the reference class.
    pub fn block_for_class(&self, class: usize) -> Option<&ThetaParam> {
        self.block_classes().iter().position(|&h| h == class).map(|k| &self.blocks[k])
    }

    pub fn baseline_row(&self) -> usize {
        self.blocks[0].baseline_row()
    }

    pub fn p(&self) -> usize {
        self.blocks[0].p()
    }

    pub fn q(&self) -> usize {
        self.blocks[0].q()
    }

    pub fn num_free(&self) -> usize {
        self.blocks.len() * (self.p() + self.q())
    }

    /// Free-parameter names, `class{h}.gamma`, `class{h}.alpha_i`, ...
    pub fn free_labels(&self) -> Vec<String> {
        let names = ThetaParam::free_labels(self.p(), self.q(), self.baseline_row());
        self.block_classes()
            .into_iter()
            .flat_map(|h| names.iter().map(move |n| format!("class{h}.{n}")))
            .collect()
    }

    fn block_predictors(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.blocks.iter().map(|b| b.gamma() + b.bilinear(x)).collect()
    }
}

fn check_classes(num_classes: usize, reference_class: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(MvError::InvalidInput("need at least two classes".into()));
    }
    if reference_class == 0 || reference_class > num_classes {
        return Err(MvError::IndexOutOfRange { index: reference_class, len: num_classes });
    }
    Ok(())
}

fn check_dims(theta: &ThetaMulti, p: usize, q: usize, num_classes: usize) -> Result<()> {
    if (theta.p(), theta.q(), theta.num_classes()) != (p, q, num_classes) {
        return Err(MvError::dims(
            format!("{p}x{q} with {num_classes} classes"),
            format!("{}x{} with {} classes", theta.p(), theta.q(), theta.num_classes()),
        ));
    }
    Ok(())
}

/// Softmax over block predictors with the reference predictor fixed at 0.
fn softmax_blocks(eta: &[f64]) -> (Vec<f64>, f64) {
    let m = eta.iter().copied().fold(0.0_f64, f64::max);
    let e: Vec<f64> = eta.iter().map(|&t| (t - m).exp()).collect();
    let e_ref = (-m).exp();
    let total = e_ref + e.iter().sum::<f64>();
    (e.iter().map(|v| v / total).collect(), e_ref / total)
}

/// Probabilities of classes `1..=H` (index `h - 1` holds class `h`).
pub fn class_probabilities(theta: &ThetaMulti, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    theta.blocks[0].check_dims(x)?;
    let (block_probs, ref_prob) = softmax_blocks(&theta.block_predictors(x));
    let mut out = DVector::zeros(theta.num_classes);
    for (k, h) in theta.block_classes().into_iter().enumerate() {
        out[h - 1] = block_probs[k];
    }
    out[theta.reference_class - 1] = ref_prob;
    Ok(out)
}

/// Most probable class; ties go to the smaller label.
pub fn predict_class(theta: &ThetaMulti, x: &DMatrix<f64>) -> Result<usize> {
    let probs = class_probabilities(theta, x)?;
    let mut best = 0;
    for h in 1..probs.len() {
        if probs[h] > probs[best] {
            best = h;
        }
    }
    Ok(best + 1)
}

/// Multinomial log-likelihood.
pub fn multiclass_log_likelihood(theta: &ThetaMulti, data: &MultiClassDataset) -> Result<f64> {
    check_dims(theta, data.p(), data.q(), data.num_classes())?;
    Ok(loglik(theta, data))
}

fn loglik(theta: &ThetaMulti, data: &MultiClassDataset) -> f64 {
    let classes = theta.block_classes();
    data.matrices()
        .iter()
        .zip(data.labels())
        .map(|(x, &y)| {
            let eta = theta.block_predictors(x);
            let own = classes.iter().position(|&h| h == y).map_or(0.0, |k| eta[k]);
            own - log1p_sum_exp(&eta)
        })
        .sum()
}

/// Covariance `diag(pi) - pi pi'` of the non-reference class indicators.
pub fn multinomial_weights(block_probs: &[f64]) -> DMatrix<f64> {
    let k = block_probs.len();
    DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            block_probs[a] * (1.0 - block_probs[a])
        } else {
            -block_probs[a] * block_probs[b]
        }
    })
}

/// Solver settings for [`multiclass_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFitConfig {
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub tol: f64,
    pub max_iter: usize,
    /// Shared pinned row; chosen from the one-vs-rest problem of the first
    /// non-reference class when `None`.
    pub baseline_row: Option<usize>,
    /// Reference class label; the last class when `None`.
    pub reference_class: Option<usize>,
    pub init: Option<ThetaMulti>,
}

impl Default for MultiFitConfig {
    fn default() -> Self {
        let base = FitConfig::default();
        Self {
            lambda: base.lambda,
            penalty: base.penalty,
            tol: base.tol,
            max_iter: base.max_iter,
            baseline_row: None,
            reference_class: None,
            init: None,
        }
    }
}

impl MultiFitConfig {
    pub fn with_lambda(lambda: f64, penalty: PenaltyKind) -> Self {
        Self { lambda, penalty, ..Self::default() }
    }

    fn binary(&self) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            penalty: self.penalty,
            tol: self.tol,
            max_iter: self.max_iter,
            init: None,
            baseline_row: self.baseline_row,
        }
    }

    fn reference(&self, data: &MultiClassDataset) -> Result<usize> {
        let h = self.reference_class.unwrap_or(data.num_classes());
        check_classes(data.num_classes(), h)?;
        Ok(h)
    }

    fn resolve_baseline(&self, data: &MultiClassDataset, reference: usize) -> Result<usize> {
        if let Some(init) = &self.init {
            return Ok(init.baseline_row());
        }
        match self.baseline_row {
            Some(b) if b < data.p() => Ok(b),
            Some(b) => Err(MvError::IndexOutOfRange { index: b, len: data.p() }),
            None if data.p() == 1 => Ok(0),
            None => {
                let first = if reference == 1 { 2 } else { 1 };
                select_baseline_row(&data.one_vs_rest(first))
            }
        }
    }
}

/// Outcome of [`multiclass_fit`].
#[derive(Debug, Clone)]
pub struct MultiFitResult {
    pub theta: ThetaMulti,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub trace: Vec<f64>,
    pub ridge: f64,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub warnings: Vec<String>,
}

struct MultiObjective<'a> {
    data: &'a MultiClassDataset,
    baseline: usize,
    reference: usize,
    lambda: f64,
    kind: PenaltyKind,
}

impl MultiObjective<'_> {
    fn theta(&self, x: &DVector<f64>) -> ThetaMulti {
        ThetaMulti::from_free(x, self.data.p(), self.data.q(), self.baseline, self.data.num_classes(), self.reference)
            .expect("free vector length is fixed by construction")
    }

    fn block_dim(&self) -> usize {
        self.data.p() + self.data.q()
    }

    /// Gradient of the log-likelihood and `X*' V* X*`, both without penalty.
    fn score_and_information(&self, theta: &ThetaMulti) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.block_dim();
        let k = theta.blocks.len();
        let systems: Vec<WorkingSystem> =
            theta.blocks.iter().map(|b| working_system(b, self.data.matrices())).collect();
        let classes = theta.block_classes();
        let n = self.data.n();
        let mut resid = DMatrix::zeros(n, k);
        let mut weights = Vec::with_capacity(n);
        for (i, &y) in self.data.labels().iter().enumerate() {
            let eta: Vec<f64> = systems.iter().map(|s| s.eta[i]).collect();
            let (probs, _) = softmax_blocks(&eta);
            for a in 0..k {
                resid[(i, a)] = f64::from(u8::from(classes[a] == y)) - probs[a];
            }
            weights.push(multinomial_weights(&probs));
        }
        let mut grad = DVector::zeros(k * d);
        let mut info = DMatrix::zeros(k * d, k * d);
        for a in 0..k {
            grad.rows_mut(a * d, d).copy_from(&systems[a].rows.tr_mul(&resid.column(a)));
            for b in a..k {
                let mut scaled = systems[b].rows.clone();
                for (i, w) in weights.iter().enumerate() {
                    scaled.row_mut(i).scale_mut(w[(a, b)]);
                }
                let block = systems[a].rows.tr_mul(&scaled);
                info.view_mut((a * d, b * d), (d, d)).copy_from(&block);
                if a != b {
                    info.view_mut((b * d, a * d), (d, d)).copy_from(&block.transpose());
                }
            }
        }
        symmetrize(&mut info);
        (grad, info)
    }
}

impl AscentObjective for MultiObjective<'_> {
    fn dim(&self) -> usize {
        self.block_dim() * (self.data.num_classes() - 1)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let theta = self.theta(x);
        loglik(&theta, self.data) - multiclass_penalty(&theta, self.kind, self.lambda)
    }

    fn gradient_and_curvature(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let theta = self.theta(x);
        let (mut grad, mut h) = self.score_and_information(&theta);
        let d = self.block_dim();
        for c in 0..self.dim() {
            let w = self.lambda * self.kind.weight(c % d);
            grad[c] -= w * x[c];
            h[(c, c)] += w;
        }
        (grad, h)
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Sum of the per-block ridge penalties.
pub fn multiclass_penalty(theta: &ThetaMulti, kind: PenaltyKind, lambda: f64) -> f64 {
    theta.blocks.iter().map(|b| penalty(b, kind, lambda)).sum()
}

fn objective<'a>(theta: &ThetaMulti, data: &'a MultiClassDataset, lambda: f64, kind: PenaltyKind) -> MultiObjective<'a> {
    MultiObjective { data, baseline: theta.baseline_row(), reference: theta.reference_class, lambda, kind }
}

/// Gradient of the penalized multinomial log-likelihood.
pub fn multiclass_gradient(
    theta: &ThetaMulti,
    data: &MultiClassDataset,
    lambda: f64,
    kind: PenaltyKind,
) -> Result<DVector<f64>> {
    check_dims(theta, data.p(), data.q(), data.num_classes())?;
    Ok(objective(theta, data, lambda, kind).gradient_and_curvature(&theta.to_free()).0)
}

/// Block Fisher matrix `X*' V* X* + lambda J''`.
pub fn multiclass_fisher_hessian(
    theta: &ThetaMulti,
    data: &MultiClassDataset,
    lambda: f64,
    kind: PenaltyKind,
) -> Result<DMatrix<f64>> {
    check_dims(theta, data.p(), data.q(), data.num_classes())?;
    Ok(objective(theta, data, lambda, kind).gradient_and_curvature(&theta.to_free()).1)
}

/// Fits the `H`-class model by the same damped Fisher scoring as the binary fit.
pub fn multiclass_fit(data: &MultiClassDataset, config: &MultiFitConfig) -> Result<MultiFitResult> {
    config.binary().validate()?;
    let reference = config.reference(data)?;
    let baseline = config.resolve_baseline(data, reference)?;
    let init = match &config.init {
        Some(t) => {
            check_dims(t, data.p(), data.q(), data.num_classes())?;
            if t.reference_class != reference {
                return Err(MvError::InvalidInput("initial value uses a different reference class".into()));
            }
            t.clone()
        }
        None => ThetaMulti::initial(data.p(), data.q(), baseline, data.num_classes(), reference)?,
    };
    let obj = MultiObjective { data, baseline, reference, lambda: config.lambda, kind: config.penalty };
    let run = maximize(&obj, init.to_free(), NewtonSettings::new(config.tol, config.max_iter))?;
    let theta = obj.theta(&run.x);
    let warnings = theta.blocks.iter().flat_map(baseline_warnings).collect();
    Ok(MultiFitResult {
        loglik: loglik(&theta, data),
        theta,
        converged: run.status == FitStatus::Converged,
        status: run.status,
        iterations: run.iterations,
        final_gradient_norm: run.final_gradient_norm,
        penalized_loglik: run.value,
        trace: run.trace,
        ridge: run.max_ridge,
        lambda: config.lambda,
        penalty: config.penalty,
        warnings,
    })
}

/// Block sandwich covariance at the fitted parameters.
pub fn multiclass_covariance(fit: &MultiFitResult, data: &MultiClassDataset) -> Result<CovarianceEstimate> {
    multiclass_covariance_at(&fit.theta, data, fit.lambda, fit.penalty)
}

pub fn multiclass_covariance_at(
    theta: &ThetaMulti,
    data: &MultiClassDataset,
    lambda: f64,
    kind: PenaltyKind,
) -> Result<CovarianceEstimate> {
    check_dims(theta, data.p(), data.q(), data.num_classes())?;
    let obj = objective(theta, data, lambda, kind);
    let (_, info) = obj.score_and_information(theta);
    let (_, h) = obj.gradient_and_curvature(&theta.to_free());
    sandwich(&h, &info, data.n(), "multiclass bread matrix")
}

#[cfg(test)]
mod tests;
