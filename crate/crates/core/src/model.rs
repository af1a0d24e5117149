//! The bilinear logit model `logit P(Y=1|X) = gamma + alpha' X beta`.
//!
//! `alpha` and `beta` are only identified up to a reciprocal scale, so one entry
//! of `alpha` (the baseline row) is pinned to exactly 1. The free parameter vector
//! is laid out as `(gamma, alpha without the baseline entry, beta)`, `p + q` long.

use nalgebra::{DMatrix, DVector};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::numeric::sigmoid;

/// Intercept, row effects and column effects, with `alpha[baseline_row] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParam {
    gamma: f64,
    alpha: DVector<f64>,
    beta: DVector<f64>,
    baseline_row: usize,
}

impl ThetaParam {
    /// Builds a parameter whose `alpha` already has the baseline entry equal to 1.
    pub fn new(gamma: f64, alpha: DVector<f64>, beta: DVector<f64>, baseline_row: usize) -> Result<Self> {
        if alpha.is_empty() || beta.is_empty() {
            return Err(MvError::InvalidInput("alpha and beta must be non-empty".into()));
        }
        if baseline_row >= alpha.len() {
            return Err(MvError::IndexOutOfRange { index: baseline_row, len: alpha.len() });
        }
        if alpha[baseline_row] != 1.0 {
            return Err(MvError::InvalidInput(format!(
                "alpha[{baseline_row}] = {} but the baseline entry must be exactly 1",
                alpha[baseline_row]
            )));
        }
        Ok(Self { gamma, alpha, beta, baseline_row })
    }

    /// Rescales `(alpha, beta)` to `(alpha / c, c * beta)` with `c = alpha[baseline_row]`.
    pub fn normalized(gamma: f64, alpha: DVector<f64>, beta: DVector<f64>, baseline_row: usize) -> Result<Self> {
        if baseline_row >= alpha.len() {
            return Err(MvError::IndexOutOfRange { index: baseline_row, len: alpha.len() });
        }
        let c = alpha[baseline_row];
        if c == 0.0 || !c.is_finite() {
            return Err(MvError::InvalidInput("cannot pin a zero baseline entry".into()));
        }
        let mut alpha = alpha / c;
        alpha[baseline_row] = 1.0;
        Self::new(gamma, alpha, beta * c, baseline_row)
    }

    /// All free parameters zero: `gamma = 0`, `beta = 0`, `alpha = e_baseline`.
    pub fn initial(p: usize, q: usize, baseline_row: usize) -> Result<Self> {
        let mut alpha = DVector::zeros(p);
        if baseline_row < p {
            alpha[baseline_row] = 1.0;
        }
        Self::new(0.0, alpha, DVector::zeros(q), baseline_row)
    }

    pub fn from_free(free: &DVector<f64>, p: usize, q: usize, baseline_row: usize) -> Result<Self> {
        if free.len() != p + q {
            return Err(MvError::dims(format!("{} free parameters", p + q), format!("{}", free.len())));
        }
        if baseline_row >= p {
            return Err(MvError::IndexOutOfRange { index: baseline_row, len: p });
        }
        let mut alpha = DVector::zeros(p);
        let mut k = 1;
        for i in 0..p {
            if i == baseline_row {
                alpha[i] = 1.0;
            } else {
                alpha[i] = free[k];
                k += 1;
            }
        }
        let beta = DVector::from_iterator(q, free.iter().skip(p).copied());
        Self::new(free[0], alpha, beta, baseline_row)
    }

    pub fn to_free(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.num_free());
        v.push(self.gamma);
        v.extend(self.free_alpha());
        v.extend(self.beta.iter().copied());
        DVector::from_vec(v)
    }

    /// `alpha` with the pinned entry removed.
    pub fn free_alpha(&self) -> impl Iterator<Item = f64> + '_ {
        let b = self.baseline_row;
        self.alpha.iter().enumerate().filter(move |(i, _)| *i != b).map(|(_, &a)| a)
    }

    /// Names of the free coordinates, 1-based: `gamma`, `alpha_i`, `beta_j`.
    pub fn free_labels(p: usize, q: usize, baseline_row: usize) -> Vec<String> {
        std::iter::once("gamma".to_string())
            .chain((0..p).filter(|&i| i != baseline_row).map(|i| format!("alpha_{}", i + 1)))
            .chain((0..q).map(|j| format!("beta_{}", j + 1)))
            .collect()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn baseline_row(&self) -> usize {
        self.baseline_row
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn num_free(&self) -> usize {
        self.p() + self.q()
    }

    /// The rank-one coefficient matrix `alpha beta'`.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        &self.alpha * self.beta.transpose()
    }

    pub(crate) fn check_dims(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.p(), self.q()) {
            return Err(MvError::dims(
                format!("{}x{}", self.p(), self.q()),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(())
    }

    /// `alpha' x beta` without the intercept; dimensions must already be checked.
    pub(crate) fn bilinear(&self, x: &DMatrix<f64>) -> f64 {
        (x * &self.beta).dot(&self.alpha)
    }
}

/// `gamma + alpha' x beta`.
pub fn linear_predictor(theta: &ThetaParam, x: &DMatrix<f64>) -> Result<f64> {
    theta.check_dims(x)?;
    Ok(theta.gamma + theta.bilinear(x))
}

/// `P(Y = 1 | x)` through an overflow-free logistic transform.
pub fn success_probability(theta: &ThetaParam, x: &DMatrix<f64>) -> Result<f64> {
    linear_predictor(theta, x).map(sigmoid)
}

/// Odds ratio `exp(alpha_i beta_j)` for a unit change in entry `(i, j)` (0-based).
pub fn odds_ratio(theta: &ThetaParam, i: usize, j: usize) -> Result<f64> {
    if i >= theta.p() {
        return Err(MvError::IndexOutOfRange { index: i, len: theta.p() });
    }
    if j >= theta.q() {
        return Err(MvError::IndexOutOfRange { index: j, len: theta.q() });
    }
    Ok((theta.alpha[i] * theta.beta[j]).exp())
}

/// `(gamma, vec(alpha beta'))` with `vec` stacking columns.
pub fn vectorized_coefficient(theta: &ThetaParam) -> (f64, DVector<f64>) {
    let m = theta.coefficient_matrix();
    (theta.gamma, DVector::from_column_slice(m.as_slice()))
}

/// 1 iff the success probability strictly exceeds `threshold`.
pub fn classify(theta: &ThetaParam, x: &DMatrix<f64>, threshold: f64) -> Result<u8> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MvError::InvalidInput(format!("threshold {threshold} outside (0,1)")));
    }
    Ok(u8::from(success_probability(theta, x)? > threshold))
}

fn column_moments(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

fn is_zero_variance(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

/// Row whose entries are jointly most correlated with the response:
/// `argmax_k sum_j |corr(X_(k,j), Y)|`, smallest index on ties.
pub fn select_baseline_row(data: &MatrixDataset) -> Result<usize> {
    let n = data.n();
    if n < 2 {
        return Err(MvError::InvalidInput("baseline selection needs n >= 2".into()));
    }
    let pos = data.positives();
    if pos == 0 || pos == n {
        return Err(MvError::DegenerateLabels);
    }
    let y: Vec<f64> = data.labels().iter().map(|&v| f64::from(v)).collect();
    let (y_mean, y_sd) = column_moments(y.iter().copied(), n);

    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..data.p() {
        let mut abs_corr: Vec<f64> = (0..data.q())
            .map(|j| {
                let xs = data.matrices().iter().map(move |m| m[(k, j)]);
                let (mean, sd) = column_moments(xs.clone(), n);
                if is_zero_variance(mean, sd) {
                    return 0.0;
                }
                let cov: f64 = xs.zip(&y).map(|(x, &yy)| (x - mean) * (yy - y_mean)).sum::<f64>()
                    / (n as f64 - 1.0);
                (cov / (sd * y_sd)).abs()
            })
            .collect();
        // summing in sorted order makes the score independent of column order
        abs_corr.sort_by(f64::total_cmp);
        let score: f64 = abs_corr.iter().sum();
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Per-entry sample means and standard deviations (`n - 1` denominator).
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub means: DMatrix<f64>,
    pub sds: DMatrix<f64>,
    /// Entries with zero variance; these are centered but not scaled.
    pub flagged: Vec<(usize, usize)>,
}

impl StandardizationStats {
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.shape() != self.means.shape() {
            return Err(MvError::dims(
                format!("{}x{}", self.means.nrows(), self.means.ncols()),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let c = x[(i, j)] - self.means[(i, j)];
            if self.is_flagged(i, j) {
                c
            } else {
                c / self.sds[(i, j)]
            }
        }))
    }

    pub fn is_flagged(&self, i: usize, j: usize) -> bool {
        is_zero_variance(self.means[(i, j)], self.sds[(i, j)])
    }
}

/// Centers and scales every entry position to sample mean 0, SD 1 across subjects.
pub fn standardize(data: &MatrixDataset) -> Result<(MatrixDataset, StandardizationStats)> {
    let n = data.n();
    if n < 2 {
        return Err(MvError::InvalidInput("standardization needs n >= 2".into()));
    }
    let (p, q) = (data.p(), data.q());
    let mut means = DMatrix::zeros(p, q);
    let mut sds = DMatrix::zeros(p, q);
    let mut flagged = Vec::new();
    for j in 0..q {
        for i in 0..p {
            let (mean, sd) = column_moments(data.matrices().iter().map(|m| m[(i, j)]), n);
            means[(i, j)] = mean;
            sds[(i, j)] = sd;
            if is_zero_variance(mean, sd) {
                flagged.push((i, j));
            }
        }
    }
    if !flagged.is_empty() {
        log::warn!("{} zero-variance entries centered without scaling", flagged.len());
    }
    let stats = StandardizationStats { means, sds, flagged };
    let matrices = data
        .matrices()
        .iter()
        .map(|m| stats.apply(m))
        .collect::<Result<Vec<_>>>()?;
    Ok((data.with_matrices(matrices)?, stats))
}
