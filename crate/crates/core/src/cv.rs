//! Cross-validated choice of the ridge parameter.
//!
//! Folds are stratified by label and shuffled with a seeded generator. Every
//! `(fold, lambda)` pair is an independent task; out-of-fold probabilities are
//! gathered by index, so the table does not depend on scheduling.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::model::success_probability;
use crate::par::map_indices;
use crate::solver::{fit, fit_conventional, FitConfig, PenaltyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CvScheme {
    KFold { k: usize },
    LeaveOneOut,
}

impl fmt::Display for CvScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CvScheme::KFold { k } => write!(f, "kfold:{k}"),
            CvScheme::LeaveOneOut => f.write_str("loo"),
        }
    }
}

impl FromStr for CvScheme {
    type Err = MvError;

    /// `loo`, `leave-one-out`, `kfold` (5 folds) or `kfold:K`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loo" | "leave-one-out" => Ok(CvScheme::LeaveOneOut),
            "kfold" => Ok(CvScheme::KFold { k: 5 }),
            other => other
                .strip_prefix("kfold:")
                .and_then(|k| k.parse().ok())
                .map(|k| CvScheme::KFold { k })
                .ok_or_else(|| MvError::InvalidInput(format!("unknown CV scheme `{other}`"))),
        }
    }
}

/// Test-fold indices, each sorted ascending.
pub fn fold_assignment(labels: &[u8], scheme: CvScheme, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    match scheme {
        CvScheme::LeaveOneOut => {
            if n < 2 {
                return Err(MvError::InvalidInput("leave-one-out needs at least 2 samples".into()));
            }
            Ok((0..n).map(|i| vec![i]).collect())
        }
        CvScheme::KFold { k } => {
            if k < 2 || k > n {
                return Err(MvError::InvalidInput(format!("k-fold needs 2 <= k <= n ({n}), got {k}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut folds = vec![Vec::new(); k];
            let mut slot = 0;
            for class in [0u8, 1] {
                let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                members.shuffle(&mut rng);
                for i in members {
                    folds[slot % k].push(i);
                    slot += 1;
                }
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(folds)
        }
    }
}

/// Accuracy of thresholding at 0.5 (strictly above is class 1).
pub fn accuracy(probabilities: &[f64], labels: &[u8]) -> f64 {
    let hits = probabilities.iter().zip(labels).filter(|&(&p, &y)| u8::from(p > 0.5) == y).count();
    hits as f64 / labels.len() as f64
}

/// Cross-validation results over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub scheme: CvScheme,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub selected_lambda: f64,
    pub selected_accuracy: f64,
    /// Out-of-fold success probabilities at the selected lambda.
    pub oof_probabilities: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(MvError::InvalidInput("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(MvError::InvalidInput("lambda grid values must be finite and >= 0".into()));
    }
    Ok(())
}

/// Runs `fit_predict(train, test, lambda)` for every fold and grid value and
/// picks the most accurate lambda, the smallest one on ties.
///
/// `fit_predict` returns the success probabilities of the `test` indices.
pub fn cross_validate<F>(labels: &[u8], grid: &[f64], scheme: CvScheme, seed: u64, fit_predict: F) -> Result<CvTable>
where
    F: Fn(&[usize], &[usize], f64) -> Result<Vec<f64>> + Sync + Send,
{
    check_grid(grid)?;
    let folds = fold_assignment(labels, scheme, seed)?;
    let n = labels.len();
    let tasks = folds.len() * grid.len();
    let results = map_indices(tasks, |t| {
        let (f, g) = (t / grid.len(), t % grid.len());
        let test = &folds[f];
        let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        fit_predict(&train, test, grid[g])
    });

    let mut oof = vec![vec![f64::NAN; n]; grid.len()];
    for (t, res) in results.into_iter().enumerate() {
        let (f, g) = (t / grid.len(), t % grid.len());
        let probs = res?;
        if probs.len() != folds[f].len() {
            return Err(MvError::dims(folds[f].len().to_string(), probs.len().to_string()));
        }
        for (&i, p) in folds[f].iter().zip(probs) {
            oof[g][i] = p;
        }
    }
    let acc: Vec<f64> = oof.iter().map(|probs| accuracy(probs, labels)).collect();
    let mut best = 0;
    for g in 1..grid.len() {
        let better = acc[g] > acc[best] || (acc[g] == acc[best] && grid[g] < grid[best]);
        if better {
            best = g;
        }
    }
    Ok(CvTable {
        scheme,
        seed,
        grid: grid.to_vec(),
        selected_lambda: grid[best],
        selected_accuracy: acc[best],
        accuracy: acc,
        oof_probabilities: oof.swap_remove(best),
    })
}

/// Cross-validated lambda for the bilinear model. `template` supplies every
/// setting except `lambda`; a fixed `baseline_row` keeps folds comparable.
pub fn select_lambda_cv(
    data: &MatrixDataset,
    grid: &[f64],
    scheme: CvScheme,
    seed: u64,
    template: &FitConfig,
) -> Result<CvTable> {
    template.validate()?;
    cross_validate(data.labels(), grid, scheme, seed, |train, test, lambda| {
        let cfg = FitConfig { lambda, ..template.clone() };
        let fitted = fit(&data.subset(train), &cfg)?;
        test.iter().map(|&i| success_probability(&fitted.theta, &data.matrices()[i])).collect()
    })
}

/// Cross-validated lambda for the conventional `vec(X)` ridge-logistic model.
pub fn select_lambda_cv_conventional(
    data: &MatrixDataset,
    grid: &[f64],
    scheme: CvScheme,
    seed: u64,
    kind: PenaltyKind,
) -> Result<CvTable> {
    cross_validate(data.labels(), grid, scheme, seed, |train, test, lambda| {
        let fitted = fit_conventional(&data.subset(train), lambda, kind)?;
        Ok(test.iter().map(|&i| fitted.probability(data.matrices()[i].as_slice())).collect())
    })
}
