//! End-to-end evaluation on averaged per-subject matrices: GLRAM reduction,
//! standardization, baseline choice, then cross-validated ridge choice for
//! the bilinear arm and the conventional `vec(X)` arm.
//!
//! With global preprocessing the GLRAM bases and standardization are computed
//! once on every subject and only the model fit leaves a subject out. Nested
//! preprocessing recomputes them from each training fold and additionally
//! selects lambda by an inner k-fold split of that fold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::artifact::ModelFile;
use crate::cv::{accuracy, cross_validate, fold_assignment, select_lambda_cv, select_lambda_cv_conventional, CvScheme, CvTable};
use crate::data::MatrixDataset;
use crate::eeg::ConditionFilter;
use crate::error::{MvError, Result};
use crate::glram::{captured_energy, glram_fit, glram_project, total_energy, GlramBases, GlramOptions};
use crate::inference::{coefficient_table, covariance_estimate, probability_ci, CoefficientRow};
use crate::model::{select_baseline_row, standardize, success_probability, StandardizationStats};
use crate::par::map_indices;
use crate::solver::{fit, fit_conventional, fit_ridge_logistic, FitConfig, FitStatus, PenaltyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    Global,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub p0: usize,
    pub q0: usize,
    pub grid: Vec<f64>,
    pub penalty: PenaltyKind,
    pub scheme: CvScheme,
    pub seed: u64,
    pub nested: bool,
    /// Folds of the inner lambda search when `nested` is set.
    pub inner_folds: usize,
    pub level: f64,
    pub glram: GlramOptions,
    pub condition: ConditionFilter,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            p0: 15,
            q0: 15,
            grid: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 32.0, 48.0, 64.0],
            penalty: PenaltyKind::AllTheta,
            scheme: CvScheme::LeaveOneOut,
            seed: 1,
            nested: false,
            inner_folds: 5,
            level: 0.95,
            glram: GlramOptions::default(),
            condition: ConditionFilter::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, data: &MatrixDataset) -> Result<()> {
        if self.p0 == 0 || self.q0 == 0 || self.p0 > data.p() || self.q0 > data.q() {
            return Err(MvError::InvalidInput(format!(
                "reduced dims ({}, {}) must lie in [1, {}] x [1, {}]",
                self.p0,
                self.q0,
                data.p(),
                data.q()
            )));
        }
        if self.grid.is_empty() {
            return Err(MvError::InvalidInput("lambda grid is empty".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(MvError::InvalidInput(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.nested && self.inner_folds < 2 {
            return Err(MvError::InvalidInput("inner_folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Preprocessing fitted on one set of subjects.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub bases: GlramBases,
    pub stats: StandardizationStats,
    pub baseline_row: usize,
}

impl Preprocessor {
    pub fn fit(data: &MatrixDataset, p0: usize, q0: usize, options: &GlramOptions) -> Result<(Self, MatrixDataset)> {
        let bases = glram_fit(data.matrices(), p0, q0, options)?;
        let projected = data
            .matrices()
            .iter()
            .map(|x| glram_project(&bases, x))
            .collect::<Result<Vec<_>>>()?;
        let (std_data, stats) = standardize(&data.with_matrices(projected)?)?;
        let baseline_row = select_baseline_row(&std_data)?;
        Ok((Self { bases, stats, baseline_row }, std_data))
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.stats.apply(&glram_project(&self.bases, x)?)
    }
}

/// Out-of-fold prediction for one subject at the selected lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectInterval {
    pub id: String,
    pub label: u8,
    pub predicted: u8,
    pub probability: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSummary {
    pub inner_folds: usize,
    pub mv_accuracy: f64,
    pub conventional_accuracy: f64,
    /// Inner-CV lambda of each outer fold.
    pub mv_lambdas: Vec<f64>,
    pub conventional_lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFitSummary {
    pub lambda: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub loglik: f64,
    pub in_sample_accuracy: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub preprocessing: Preprocessing,
    pub n: usize,
    pub positives: usize,
    pub input_shape: (usize, usize),
    /// Share of the (centered) energy kept by the global GLRAM bases.
    pub captured_energy_fraction: f64,
    /// 1-based pinned row of the full-data fit.
    pub baseline_row: usize,
    pub mv: CvTable,
    pub conventional: CvTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested: Option<NestedSummary>,
    pub final_fit: FinalFitSummary,
    pub coefficients: Vec<CoefficientRow>,
    pub subjects: Vec<SubjectInterval>,
}

impl PipelineReport {
    /// Coefficient table as CSV (plot data for the row and column effects).
    pub fn coefficient_csv(&self) -> String {
        let mut out = String::from("name,estimate,se,lower,upper\n");
        for r in &self.coefficients {
            out.push_str(&format!("{},{},{},{},{}\n", r.name, r.estimate, r.se, r.lower, r.upper));
        }
        out
    }

    pub fn subject_csv(&self) -> String {
        let mut out = String::from("id,label,predicted,probability,lower,upper\n");
        for s in &self.subjects {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.id, s.label, s.predicted, s.probability, s.lower, s.upper
            ));
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("lambda,mv_accuracy,conventional_accuracy\n");
        for (i, l) in self.mv.grid.iter().enumerate() {
            out.push_str(&format!("{l},{},{}\n", self.mv.accuracy[i], self.conventional.accuracy[i]));
        }
        out
    }
}

pub struct PipelineOutput {
    pub report: PipelineReport,
    /// Full-data model with its preprocessing artifacts.
    pub model: ModelFile,
}

/// Training set and preprocessed test matrices of one fold.
struct FoldData {
    train: MatrixDataset,
    test: Vec<DMatrix<f64>>,
    baseline_row: usize,
}

fn fold_of(folds: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (f, members) in folds.iter().enumerate() {
        for &i in members {
            owner[i] = f;
        }
    }
    owner
}

fn complement(test: &[usize], n: usize) -> Vec<usize> {
    (0..n).filter(|i| test.binary_search(i).is_err()).collect()
}

fn mv_config(config: &PipelineConfig, lambda: f64, baseline_row: usize) -> FitConfig {
    FitConfig { baseline_row: Some(baseline_row), ..FitConfig::with_lambda(lambda, config.penalty) }
}

fn subject_interval(
    data: &MatrixDataset,
    i: usize,
    fold: &FoldData,
    k: usize,
    config: &PipelineConfig,
    lambda: f64,
) -> Result<SubjectInterval> {
    let fitted = fit(&fold.train, &mv_config(config, lambda, fold.baseline_row))?;
    let cov = covariance_estimate(&fitted, &fold.train)?;
    let ci = probability_ci(&fitted.theta, &cov, &fold.test[k], config.level)?;
    Ok(SubjectInterval {
        id: data.id(i),
        label: data.labels()[i],
        predicted: u8::from(ci.estimate > 0.5),
        probability: ci.estimate,
        lower: ci.lower,
        upper: ci.upper,
    })
}

/// Runs the full evaluation on raw per-subject matrices.
pub fn eeg_pipeline(data: &MatrixDataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate(data)?;
    let n = data.n();
    let (global, global_data) = Preprocessor::fit(data, config.p0, config.q0, &config.glram)?;
    let folds = fold_assignment(data.labels(), config.scheme, config.seed)?;
    let owner = fold_of(&folds, n);

    let fold_data: Vec<FoldData> = if config.nested {
        map_indices(folds.len(), |f| {
            let train_idx = complement(&folds[f], n);
            let (pre, train) = Preprocessor::fit(&data.subset(&train_idx), config.p0, config.q0, &config.glram)?;
            let test = folds[f].iter().map(|&i| pre.apply(&data.matrices()[i])).collect::<Result<Vec<_>>>()?;
            Ok(FoldData { train, test, baseline_row: pre.baseline_row })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        folds
            .iter()
            .map(|test_idx| FoldData {
                train: global_data.subset(&complement(test_idx, n)),
                test: test_idx.iter().map(|&i| global_data.matrices()[i].clone()).collect(),
                baseline_row: global.baseline_row,
            })
            .collect()
    };

    let mv = cross_validate(data.labels(), &config.grid, config.scheme, config.seed, |_, test, lambda| {
        let fold = &fold_data[owner[test[0]]];
        let fitted = fit(&fold.train, &mv_config(config, lambda, fold.baseline_row))?;
        fold.test.iter().map(|x| success_probability(&fitted.theta, x)).collect()
    })?;
    let conventional = cross_validate(data.labels(), &config.grid, config.scheme, config.seed, |_, test, lambda| {
        let fold = &fold_data[owner[test[0]]];
        let fitted = fit_conventional(&fold.train, lambda, config.penalty)?;
        Ok(fold.test.iter().map(|x| fitted.probability(x.as_slice())).collect())
    })?;

    let nested = if config.nested { Some(nested_summary(data, &folds, &fold_data, config)?) } else { None };

    let subjects = map_indices(n, |i| {
        let f = owner[i];
        let k = folds[f].binary_search(&i).expect("subject belongs to its fold");
        subject_interval(data, i, &fold_data[f], k, config, mv.selected_lambda)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let final_cfg = mv_config(config, mv.selected_lambda, global.baseline_row);
    let fitted = fit(&global_data, &final_cfg)?;
    let cov = covariance_estimate(&fitted, &global_data)?;
    let coefficients = coefficient_table(&fitted.theta, &cov, config.level)?;
    let in_sample: Vec<f64> = global_data
        .matrices()
        .iter()
        .map(|x| success_probability(&fitted.theta, x))
        .collect::<Result<_>>()?;

    let energy = total_energy(&global.bases, data.matrices())?;
    let captured = captured_energy(&global.bases, data.matrices())?;
    let report = PipelineReport {
        config: config.clone(),
        preprocessing: if config.nested { Preprocessing::Nested } else { Preprocessing::Global },
        n,
        positives: data.positives(),
        input_shape: (data.p(), data.q()),
        captured_energy_fraction: if energy > 0.0 { captured / energy } else { 1.0 },
        baseline_row: global.baseline_row + 1,
        mv,
        conventional,
        nested,
        final_fit: FinalFitSummary {
            lambda: fitted.lambda,
            status: fitted.status,
            iterations: fitted.iterations,
            loglik: fitted.loglik,
            in_sample_accuracy: accuracy(&in_sample, data.labels()),
            warnings: fitted.warnings.clone(),
        },
        coefficients,
        subjects,
    };
    let model = ModelFile::binary(&fitted.theta, fitted.lambda, fitted.penalty)
        .with_glram(global.bases)
        .with_standardization(&global.stats)
        .with_covariance(&cov);
    Ok(PipelineOutput { report, model })
}

fn nested_summary(
    data: &MatrixDataset,
    folds: &[Vec<usize>],
    fold_data: &[FoldData],
    config: &PipelineConfig,
) -> Result<NestedSummary> {
    let inner = |f: usize| -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
        let fold = &fold_data[f];
        let k = config.inner_folds.min(fold.train.positives()).min(fold.train.n() - fold.train.positives());
        if k < 2 {
            return Err(MvError::InvalidInput(format!("outer fold {f} is too small for an inner split")));
        }
        let scheme = CvScheme::KFold { k };
        let mv = select_lambda_cv(&fold.train, &config.grid, scheme, config.seed, &mv_config(config, 0.0, fold.baseline_row))?;
        let conv = select_lambda_cv_conventional(&fold.train, &config.grid, scheme, config.seed, config.penalty)?;
        let mv_fit = fit(&fold.train, &mv_config(config, mv.selected_lambda, fold.baseline_row))?;
        let conv_fit = fit_conventional(&fold.train, conv.selected_lambda, config.penalty)?;
        let mv_probs = fold.test.iter().map(|x| success_probability(&mv_fit.theta, x)).collect::<Result<_>>()?;
        let conv_probs = fold.test.iter().map(|x| conv_fit.probability(x.as_slice())).collect();
        Ok((mv.selected_lambda, conv.selected_lambda, mv_probs, conv_probs))
    };
    let per_fold = map_indices(folds.len(), inner).into_iter().collect::<Result<Vec<_>>>()?;
    let n = data.n();
    let mut mv_probs = vec![f64::NAN; n];
    let mut conv_probs = vec![f64::NAN; n];
    for (members, (_, _, m, c)) in folds.iter().zip(&per_fold) {
        for (k, &i) in members.iter().enumerate() {
            mv_probs[i] = m[k];
            conv_probs[i] = c[k];
        }
    }
    Ok(NestedSummary {
        inner_folds: config.inner_folds,
        mv_accuracy: accuracy(&mv_probs, data.labels()),
        conventional_accuracy: accuracy(&conv_probs, data.labels()),
        mv_lambdas: per_fold.iter().map(|t| t.0).collect(),
        conventional_lambdas: per_fold.iter().map(|t| t.1).collect(),
    })
}

/// Principal component scores of the centered `vec(X)` rows.
#[derive(Debug, Clone)]
pub struct PcaScores {
    /// `n x r` scores, each column with its largest-magnitude entry positive.
    pub scores: DMatrix<f64>,
    /// All nonnegative eigenvalues of the centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaScores {
    pub fn explained_fraction(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..self.scores.ncols()].iter().sum();
        if total > 0.0 {
            kept / total
        } else {
            1.0
        }
    }
}

/// Top-`r` components via the `n x n` Gram matrix, so wide data stay cheap.
pub fn pca_scores(data: &MatrixDataset, r: usize) -> Result<PcaScores> {
    let n = data.n();
    let d = data.p() * data.q();
    if r == 0 || r > d || r + 1 > n {
        return Err(MvError::InvalidInput(format!(
            "r must lie in [1, min(n - 1, pq)] = [1, {}], got {r}",
            (n.saturating_sub(1)).min(d)
        )));
    }
    let mut z = data.vectorized();
    for mut col in z.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let gram = &z * z.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let mut scores = DMatrix::zeros(n, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let mut u: DVector<f64> = eig.eigenvectors.column(k).into_owned() * eigenvalues[c].sqrt();
        let pivot = u.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            u.neg_mut();
        }
        scores.set_column(c, &u);
    }
    Ok(PcaScores { scores, eigenvalues })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBaselineReport {
    pub r: usize,
    pub explained_fraction: f64,
    pub cv: CvTable,
}

/// Conventional ridge logistic on the leading `r` component scores, lambda
/// chosen by cross-validated accuracy. Components come from all subjects.
pub fn pca_baseline(
    data: &MatrixDataset,
    r: usize,
    grid: &[f64],
    scheme: CvScheme,
    seed: u64,
    kind: PenaltyKind,
) -> Result<PcaBaselineReport> {
    let pca = pca_scores(data, r)?;
    let cv = cross_validate(data.labels(), grid, scheme, seed, |train, test, lambda| {
        let rows = pca.scores.select_rows(train);
        let labels: Vec<u8> = train.iter().map(|&i| data.labels()[i]).collect();
        let fitted = fit_ridge_logistic(&rows, &labels, lambda, kind, 1e-8, 100)?;
        Ok(test
            .iter()
            .map(|&i| fitted.probability(pca.scores.row(i).transpose().as_slice()))
            .collect())
    })?;
    Ok(PcaBaselineReport { r, explained_fraction: pca.explained_fraction(), cv })
}
