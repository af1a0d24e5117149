//! Monte-Carlo studies of the bilinear estimator against the conventional
//! `vec(X)` ridge-logistic fit.
//!
//! Each replicate draws its own ChaCha stream (`seed`, stream = replicate index),
//! so reports do not depend on how replicates are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::inference::{covariance_estimate, theta_ci};
use crate::model::{vectorized_coefficient, ThetaParam};
use crate::numeric::{sigmoid, softplus};
use crate::par::map_indices;
use crate::solver::{fit, fit_conventional, ConventionalFit, FitConfig, FitResult, PenaltyKind};

/// Study design. `sigma = 0` simulates from the bilinear model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub lambda_mv: f64,
    pub lambda_conventional: f64,
    #[serde(default)]
    pub penalty: PenaltyKind,
    /// Size of the independent test set; defaults to `n`.
    #[serde(default)]
    pub test_size: Option<usize>,
    /// Pinned row of `alpha` for the bilinear arm (0-based).
    #[serde(default)]
    pub baseline_row: usize,
}

fn default_replicates() -> usize {
    200
}

fn default_seed() -> u64 {
    7
}

impl SimDesign {
    pub fn new(p: usize, q: usize, n: usize, sigma: f64) -> Self {
        Self {
            p,
            q,
            n,
            sigma,
            replicates: default_replicates(),
            seed: default_seed(),
            lambda_mv: 0.0,
            lambda_conventional: 0.0,
            penalty: PenaltyKind::NoIntercept,
            test_size: None,
            baseline_row: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.q < 3 {
            return Err(MvError::InvalidInput(format!(
                "design needs p >= 2 and q >= 3, got ({}, {})",
                self.p, self.q
            )));
        }
        if self.n < 2 || self.test_size == Some(0) {
            return Err(MvError::InvalidInput("sample sizes must be positive (n >= 2)".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(MvError::InvalidInput(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.lambda_mv >= 0.0 && self.lambda_conventional >= 0.0) {
            return Err(MvError::InvalidInput("lambdas must be >= 0".into()));
        }
        if self.baseline_row >= self.p {
            return Err(MvError::IndexOutOfRange { index: self.baseline_row, len: self.p });
        }
        Ok(())
    }

    pub fn test_size(&self) -> usize {
        self.test_size.unwrap_or(self.n)
    }

    /// `gamma = 1`, `alpha = (1, 0.5, -0.5, ...)`, `beta = (1, 0.5, 1, -1, ...)`.
    pub fn theta_true(&self) -> ThetaParam {
        theta_true(self.p, self.q)
    }
}

pub fn theta_true(p: usize, q: usize) -> ThetaParam {
    let alpha = DVector::from_fn(p, |i, _| match i {
        0 => 1.0,
        1 => 0.5,
        _ => -0.5,
    });
    let beta = DVector::from_fn(q, |j, _| match j {
        0 | 2 => 1.0,
        1 => 0.5,
        _ => -1.0,
    });
    ThetaParam::new(1.0, alpha, beta, 0).expect("alpha[0] is 1")
}

/// Per-replicate stream derived from the master seed.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn draw_labelled<R: Rng>(rng: &mut R, n: usize, p: usize, q: usize, gamma: f64, xi: &DMatrix<f64>) -> MatrixDataset {
    let mut matrices = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = gamma + x.dot(xi);
        labels.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
        matrices.push(x);
    }
    MatrixDataset::new(matrices, labels).expect("generated data is well formed")
}

/// Standard-normal `X` with `Y` drawn from the bilinear model at the true parameters.
pub fn generate_mv_data_with<R: Rng>(design: &SimDesign, n: usize, rng: &mut R) -> MatrixDataset {
    let theta = design.theta_true();
    draw_labelled(rng, n, design.p, design.q, theta.gamma(), &theta.coefficient_matrix())
}

pub fn generate_mv_data(design: &SimDesign, replicate_seed: u64) -> MatrixDataset {
    generate_mv_data_with(design, design.n, &mut ChaCha8Rng::seed_from_u64(replicate_seed))
}

/// Draws `xi = alpha beta' + delta` with `delta_ij ~ N(0, sigma^2)`.
pub fn draw_perturbed_xi<R: Rng>(design: &SimDesign, rng: &mut R) -> DMatrix<f64> {
    let base = design.theta_true().coefficient_matrix();
    if design.sigma == 0.0 {
        return base;
    }
    let noise = Normal::new(0.0, design.sigma).expect("sigma validated");
    DMatrix::from_fn(design.p, design.q, |i, j| base[(i, j)] + noise.sample(rng))
}

/// Training data from the conventional model with `gamma = 1` and a perturbed
/// coefficient matrix, together with that matrix.
pub fn generate_perturbed_data(design: &SimDesign, replicate_seed: u64) -> (MatrixDataset, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed);
    let xi = draw_perturbed_xi(design, &mut rng);
    let data = draw_labelled(&mut rng, design.n, design.p, design.q, 1.0, &xi);
    (data, xi)
}

/// Share of the nuclear norm carried by the top singular value.
pub fn explained_proportion(xi: &DMatrix<f64>) -> Result<f64> {
    let sv = xi.clone().singular_values();
    let total: f64 = sv.iter().sum();
    if !(total > 0.0) {
        return Err(MvError::InvalidInput("explained proportion of a zero matrix".into()));
    }
    Ok(sv.max() / total)
}

/// Cosine between `(gamma, vec(alpha beta'))` of two parameter values.
pub fn similarity(truth: &ThetaParam, estimate: &ThetaParam) -> Result<f64> {
    if (truth.p(), truth.q()) != (estimate.p(), estimate.q()) {
        return Err(MvError::dims(
            format!("{}x{}", truth.p(), truth.q()),
            format!("{}x{}", estimate.p(), estimate.q()),
        ));
    }
    let stack = |t: &ThetaParam| {
        let (g, v) = vectorized_coefficient(t);
        DVector::from_iterator(v.len() + 1, std::iter::once(g).chain(v.iter().copied()))
    };
    let (u, v) = (stack(truth), stack(estimate));
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return Err(MvError::InvalidInput("similarity with a zero coefficient vector".into()));
    }
    Ok((u.dot(&v) / denom).clamp(-1.0, 1.0))
}

/// Average over `matrices` of the KL divergence from the Bernoulli law under
/// `(gamma_full, xi)` to the one under the rank-one parameter.
pub fn empirical_kl(gamma_full: f64, xi: &DMatrix<f64>, rank1: &ThetaParam, matrices: &[DMatrix<f64>]) -> Result<f64> {
    if xi.shape() != (rank1.p(), rank1.q()) {
        return Err(MvError::dims(
            format!("{}x{}", rank1.p(), rank1.q()),
            format!("{}x{}", xi.nrows(), xi.ncols()),
        ));
    }
    if matrices.is_empty() {
        return Err(MvError::InvalidInput("empirical KL needs at least one matrix".into()));
    }
    let mut total = 0.0;
    for x in matrices {
        rank1.check_dims(x)?;
        let a = gamma_full + x.dot(xi);
        let b = rank1.gamma() + rank1.bilinear(x);
        let pa = sigmoid(a);
        // log pi = -softplus(-eta), log(1 - pi) = -softplus(eta)
        let kl = pa * (softplus(-b) - softplus(-a)) + (1.0 - pa) * (softplus(b) - softplus(a));
        total += kl.max(0.0);
    }
    Ok(total / matrices.len() as f64)
}

fn accuracy<F: Fn(&DMatrix<f64>) -> f64>(test: &MatrixDataset, prob: F) -> f64 {
    let hits = test
        .matrices()
        .iter()
        .zip(test.labels())
        .filter(|(x, &y)| u8::from(prob(x) > 0.5) == y)
        .count();
    hits as f64 / test.n() as f64
}

pub fn mv_accuracy(theta: &ThetaParam, test: &MatrixDataset) -> f64 {
    accuracy(test, |x| sigmoid(theta.gamma() + theta.bilinear(x)))
}

pub fn conventional_accuracy(fit: &ConventionalFit, test: &MatrixDataset) -> f64 {
    accuracy(test, |x| fit.probability(x.as_slice()))
}

/// Everything recorded for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub theta_hat: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Whether each free coordinate's 95% interval covered the truth.
    pub covered: Vec<bool>,
    pub similarity: f64,
    pub accuracy_mv: f64,
    pub accuracy_conventional: f64,
    pub rho: f64,
    pub mv_converged: bool,
    pub conventional_converged: bool,
}

/// Training set, independent test set and coefficient matrix of one replicate.
pub struct Replicate {
    pub train: MatrixDataset,
    pub test: MatrixDataset,
    pub xi: DMatrix<f64>,
}

pub fn draw_replicate(design: &SimDesign, replicate: usize) -> Replicate {
    let mut rng = replicate_rng(design.seed, replicate as u64);
    let xi = draw_perturbed_xi(design, &mut rng);
    let train = draw_labelled(&mut rng, design.n, design.p, design.q, 1.0, &xi);
    let test = draw_labelled(&mut rng, design.test_size(), design.p, design.q, 1.0, &xi);
    Replicate { train, test, xi }
}

fn mv_config(design: &SimDesign, lambda: f64) -> FitConfig {
    FitConfig {
        baseline_row: Some(design.baseline_row),
        ..FitConfig::with_lambda(lambda, design.penalty)
    }
}

/// Runs replicate `replicate` of the study.
pub fn run_replicate(design: &SimDesign, replicate: usize) -> Result<ReplicateOutcome> {
    let rep = draw_replicate(design, replicate);
    let truth = design.theta_true();
    let mv: FitResult = fit(&rep.train, &mv_config(design, design.lambda_mv))?;
    let conv = fit_conventional(&rep.train, design.lambda_conventional, design.penalty)?;
    let cov = covariance_estimate(&mv, &rep.train)?;
    let truth_free = truth.to_free();
    let covered = (0..truth_free.len())
        .map(|i| {
            theta_ci(&mv.theta, &cov, i, 0.95).map(|ci| ci.lower <= truth_free[i] && truth_free[i] <= ci.upper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateOutcome {
        replicate,
        theta_hat: mv.theta.to_free().as_slice().to_vec(),
        standard_errors: cov.standard_errors().as_slice().to_vec(),
        covered,
        similarity: similarity(&truth, &mv.theta)?,
        accuracy_mv: mv_accuracy(&mv.theta, &rep.test),
        accuracy_conventional: conventional_accuracy(&conv, &rep.test),
        rho: explained_proportion(&rep.xi)?,
        mv_converged: mv.converged,
        conventional_converged: conv.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage_95: f64,
}

/// Aggregated study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: SimDesign,
    pub replicates_used: usize,
    /// Replicates dropped because a fit failed, with the reason.
    pub excluded: Vec<(usize, String)>,
    pub coordinates: Vec<CoordinateSummary>,
    pub similarity_mean: f64,
    pub similarity_sd: f64,
    pub accuracy_mv: f64,
    pub accuracy_conventional: f64,
    pub winning_proportion: f64,
    pub rho_mean: f64,
    pub mv_nonconverged: usize,
    pub conventional_nonconverged: usize,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs every replicate and aggregates; failed replicates are excluded and listed.
pub fn run_study(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    let outcomes = map_indices(design.replicates, |r| run_replicate(design, r));
    let mut ok = Vec::new();
    let mut excluded = Vec::new();
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => ok.push(o),
            Err(e) => excluded.push((r, e.to_string())),
        }
    }
    if ok.is_empty() {
        return Err(MvError::InvalidInput("every replicate failed".into()));
    }
    Ok(summarize(design, &ok, excluded))
}

pub fn summarize(design: &SimDesign, ok: &[ReplicateOutcome], excluded: Vec<(usize, String)>) -> SimReport {
    let truth = design.theta_true();
    let truth_free = truth.to_free();
    let names = ThetaParam::free_labels(design.p, design.q, design.baseline_row);
    let count = ok.len() as f64;
    let coordinates = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let (mean, sd) = mean_sd(ok.iter().map(|o| o.theta_hat[k]));
            CoordinateSummary {
                name,
                truth: truth_free[k],
                mean,
                sd,
                mean_se: ok.iter().map(|o| o.standard_errors[k]).sum::<f64>() / count,
                coverage_95: ok.iter().filter(|o| o.covered[k]).count() as f64 / count,
            }
        })
        .collect();
    let (similarity_mean, similarity_sd) = mean_sd(ok.iter().map(|o| o.similarity));
    SimReport {
        design: design.clone(),
        replicates_used: ok.len(),
        excluded,
        coordinates,
        similarity_mean,
        similarity_sd,
        accuracy_mv: ok.iter().map(|o| o.accuracy_mv).sum::<f64>() / count,
        accuracy_conventional: ok.iter().map(|o| o.accuracy_conventional).sum::<f64>() / count,
        winning_proportion: ok.iter().filter(|o| o.accuracy_mv > o.accuracy_conventional).count() as f64 / count,
        rho_mean: ok.iter().map(|o| o.rho).sum::<f64>() / count,
        mv_nonconverged: ok.iter().filter(|o| !o.mv_converged).count(),
        conventional_nonconverged: ok.iter().filter(|o| !o.conventional_converged).count(),
    }
}

impl SimReport {
    /// Coordinate table: `parameter,true,mean,sd,se`, then a similarity row.
    pub fn coefficient_csv(&self) -> String {
        let mut out = String::from("parameter,true,mean,sd,se,coverage_95\n");
        for c in &self.coordinates {
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                c.name, c.truth, c.mean, c.sd, c.mean_se, c.coverage_95
            ));
        }
        out.push_str(&format!("similarity,,{:.3},{:.3},,\n", self.similarity_mean, self.similarity_sd));
        out
    }

    /// Accuracy table: `sigma,p,q,rho,ca_mv,ca_conventional,winning_proportion`.
    pub fn accuracy_csv(&self) -> String {
        format!(
            "sigma,p,q,rho,ca_mv,ca_conventional,winning_proportion\n{},{},{},{:.3},{:.3},{:.3},{:.3}\n",
            self.design.sigma,
            self.design.p,
            self.design.q,
            self.rho_mean,
            self.accuracy_mv,
            self.accuracy_conventional,
            self.winning_proportion
        )
    }
}

/// Mean test accuracy per grid value for both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub lambda_mv: f64,
    pub lambda_conventional: f64,
    pub grid: Vec<f64>,
    pub accuracy_mv: Vec<f64>,
    pub accuracy_conventional: Vec<f64>,
}

fn argmax_smallest(grid: &[f64], acc: &[f64]) -> f64 {
    let mut best = 0;
    for k in 1..grid.len() {
        if acc[k] > acc[best] || (acc[k] == acc[best] && grid[k] < grid[best]) {
            best = k;
        }
    }
    grid[best]
}

/// Picks each arm's lambda by maximizing mean test accuracy over an independent
/// pilot simulation (`design.seed` is ignored; `pilot_seed` drives the draws).
pub fn tune_lambdas(design: &SimDesign, grid: &[f64], pilot_replicates: usize, pilot_seed: u64) -> Result<LambdaTuning> {
    design.validate()?;
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(MvError::InvalidInput("lambda grid must be nonempty and nonnegative".into()));
    }
    let pilot = SimDesign { seed: pilot_seed, ..design.clone() };
    let per_rep = map_indices(pilot_replicates, |r| -> Result<(Vec<f64>, Vec<f64>)> {
        let rep = draw_replicate(&pilot, r);
        let mut mv = Vec::with_capacity(grid.len());
        let mut conv = Vec::with_capacity(grid.len());
        for &l in grid {
            let m = fit(&rep.train, &mv_config(&pilot, l))?;
            mv.push(mv_accuracy(&m.theta, &rep.test));
            let c = fit_conventional(&rep.train, l, pilot.penalty)?;
            conv.push(conventional_accuracy(&c, &rep.test));
        }
        Ok((mv, conv))
    });
    let mut acc_mv = vec![0.0; grid.len()];
    let mut acc_conv = vec![0.0; grid.len()];
    let mut used = 0usize;
    for rep in per_rep.into_iter().flatten() {
        used += 1;
        for k in 0..grid.len() {
            acc_mv[k] += rep.0[k];
            acc_conv[k] += rep.1[k];
        }
    }
    if used == 0 {
        return Err(MvError::InvalidInput("every pilot replicate failed".into()));
    }
    acc_mv.iter_mut().chain(acc_conv.iter_mut()).for_each(|a| *a /= used as f64);
    Ok(LambdaTuning {
        lambda_mv: argmax_smallest(grid, &acc_mv),
        lambda_conventional: argmax_smallest(grid, &acc_conv),
        grid: grid.to_vec(),
        accuracy_mv: acc_mv,
        accuracy_conventional: acc_conv,
    })
}
