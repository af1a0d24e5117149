//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mvlogit::artifact::{predict, predict_multiclass, ModelFile, ModelKind};
use mvlogit::cv::{accuracy, select_lambda_cv, select_lambda_cv_conventional, CvTable};
use mvlogit::data::DatasetFile;
use mvlogit::eeg::{ingest_eeg, write_synthetic_eeg, SyntheticEeg, CHANNELS, TIME_POINTS};
use mvlogit::glram::{captured_energy, glram_fit, glram_project, total_energy, GlramBases, GlramOptions};
use mvlogit::inference::{coefficient_table, covariance_at, covariance_estimate, normal_quantile, probability_ci, CoefficientRow, CovarianceEstimate};
use mvlogit::model::{select_baseline_row, standardize, success_probability};
use mvlogit::multiclass::{multiclass_covariance, multiclass_covariance_at, multiclass_fit, predict_class, MultiFitConfig};
use mvlogit::pipeline::{eeg_pipeline, pca_baseline, PipelineConfig};
use mvlogit::simulation::{run_study, tune_lambdas, LambdaTuning, SimDesign, SimReport};
use mvlogit::solver::fit;
use mvlogit::{FitConfig, FitStatus, MatrixDataset, MultiClassDataset, MvError, PenaltyKind, StandardizationStats};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::{Arm, Cli, Command, CvArgs, DataSource, FitArgs, Format, GlramArgs, GlobalOpts, IngestArgs, InferArgs, PcaArgs, PipelineArgs, PredictArgs, SimulateArgs};

const DEFAULT_SEED: u64 = 1;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::IngestEeg(a) => ingest(g, a),
        Command::Glram(a) => glram(g, a),
        Command::Fit(a) => fit_cmd(g, a),
        Command::Cv(a) => cv(g, a),
        Command::Infer(a) => infer(g, a),
        Command::Predict(a) => predict_cmd(g, a),
        Command::Simulate(a) => simulate(g, a),
        Command::EegPipeline(a) => pipeline(g, a),
        Command::PcaBaseline(a) => pca(g, a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the report to `--out` or stdout.
fn emit(g: &GlobalOpts, text: &str) -> Result<()> {
    match &g.out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn emit_report<T: Serialize>(g: &GlobalOpts, report: &T, csv: impl FnOnce() -> String) -> Result<()> {
    match g.format {
        Format::Json => emit(g, &json(report)?),
        Format::Csv => emit(g, &csv()),
    }
}

/// Artifact commands need `--out`; their summary goes to stdout.
fn artifact_path(g: &GlobalOpts, what: &str) -> Result<PathBuf> {
    match &g.out {
        Some(p) => Ok(p.clone()),
        None => Err(MvError::InvalidInput(format!("--out is required to save the {what}")).into()),
    }
}

fn print_summary<T: Serialize>(summary: &T) -> Result<()> {
    print!("{}", json(summary)?);
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    normal_quantile(level)?;
    Ok(())
}

enum Loaded {
    Binary(MatrixDataset),
    Multi(MultiClassDataset),
}

fn load_dataset(path: &Path) -> Result<Loaded> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        return Ok(Loaded::Binary(MatrixDataset::load_csv(path)?));
    }
    let file = DatasetFile::load(path)?;
    Ok(if file.is_multiclass() && file.num_classes != Some(2) {
        Loaded::Multi(file.into_multiclass()?)
    } else {
        Loaded::Binary(file.into_binary()?)
    })
}

fn load_binary(path: &Path) -> Result<MatrixDataset> {
    match load_dataset(path)? {
        Loaded::Binary(d) => Ok(d),
        Loaded::Multi(_) => bail!(MvError::InvalidInput(format!("{} is a multi-class dataset", path.display()))),
    }
}

fn source_dataset(source: &DataSource) -> Result<MatrixDataset> {
    match (&source.data, &source.data_dir) {
        (Some(path), _) => load_binary(path),
        (None, Some(dir)) => Ok(ingest_eeg(dir, source.condition)?.dataset),
        (None, None) => bail!(MvError::InvalidInput("give --data or --data-dir (or set MVLOGIT_DATA_DIR)".into())),
    }
}

fn ids_of(data: &MatrixDataset) -> Vec<String> {
    (0..data.n()).map(|i| data.id(i)).collect()
}

fn is_eeg_shaped(p: usize, q: usize) -> bool {
    (p, q) == (TIME_POINTS, CHANNELS.len())
}

fn one_based(row: Option<usize>, p: usize) -> Result<Option<usize>> {
    match row {
        None => Ok(None),
        Some(r) if (1..=p).contains(&r) => Ok(Some(r - 1)),
        Some(r) => bail!(MvError::IndexOutOfRange { index: r, len: p }),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    subjects: usize,
    alcoholic: usize,
    control: usize,
    files_read: usize,
    skipped_trials: usize,
    condition: String,
    rejections: Vec<mvlogit::eeg::Rejection>,
    trials_per_subject: Vec<mvlogit::eeg::SubjectSummary>,
}

fn ingest(g: &GlobalOpts, a: &IngestArgs) -> Result<()> {
    let out = artifact_path(g, "dataset")?;
    if a.synthetic {
        let spec = SyntheticEeg { seed: g.seed.unwrap_or(SyntheticEeg::default().seed), ..SyntheticEeg::default() };
        write_synthetic_eeg(&a.data_dir, &spec)?;
    }
    let ing = ingest_eeg(&a.data_dir, a.condition)?;
    DatasetFile::from_binary(&ing.dataset).save(&out)?;
    let alcoholic = ing.dataset.positives();
    print_summary(&IngestSummary {
        subjects: ing.dataset.n(),
        alcoholic,
        control: ing.dataset.n() - alcoholic,
        files_read: ing.files_read,
        skipped_trials: ing.skipped_trials,
        condition: ing.condition.to_string(),
        rejections: ing.rejections,
        trials_per_subject: ing.subjects,
    })
}

#[derive(Serialize)]
struct GlramSummary {
    p: usize,
    q: usize,
    p0: usize,
    q0: usize,
    centered: bool,
    converged: bool,
    sweeps: usize,
    objective: f64,
    captured_energy_fraction: f64,
}

fn all_matrices(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    Ok(match load_dataset(path)? {
        Loaded::Binary(d) => d.matrices().to_vec(),
        Loaded::Multi(d) => d.matrices().to_vec(),
    })
}

fn glram(g: &GlobalOpts, a: &GlramArgs) -> Result<()> {
    let out = artifact_path(g, "bases")?;
    let matrices = all_matrices(&a.data)?;
    let opts = GlramOptions { center: !a.no_center, tol: a.tol, max_iter: a.max_iter };
    let bases = glram_fit(&matrices, a.p0, a.q0, &opts)?;
    bases.save_json(&out)?;
    let total = total_energy(&bases, &matrices)?;
    print_summary(&GlramSummary {
        p: bases.p(),
        q: bases.q(),
        p0: a.p0,
        q0: a.q0,
        centered: opts.center,
        converged: bases.converged,
        sweeps: bases.objective_trace.len(),
        objective: bases.objective(),
        captured_energy_fraction: if total > 0.0 { captured_energy(&bases, &matrices)? / total } else { 1.0 },
    })
}

/// Projection and standardization requested at fit time, kept for the model file.
struct Prep {
    bases: Option<GlramBases>,
    stats: Option<StandardizationStats>,
}

fn prepare(matrices: Vec<DMatrix<f64>>, glram: Option<&Path>, standardize_entries: bool) -> Result<(Vec<DMatrix<f64>>, Prep)> {
    let bases = glram.map(GlramBases::load_json).transpose()?;
    let mut matrices = match &bases {
        Some(b) => matrices.iter().map(|x| glram_project(b, x)).collect::<mvlogit::Result<Vec<_>>>()?,
        None => matrices,
    };
    let mut stats = None;
    if standardize_entries {
        // labels play no part in standardization
        let n = matrices.len();
        let (std_data, s) = standardize(&MatrixDataset::new(matrices, vec![0; n])?)?;
        matrices = std_data.matrices().to_vec();
        stats = Some(s);
    }
    Ok((matrices, Prep { bases, stats }))
}

fn attach(mut model: ModelFile, prep: Prep) -> ModelFile {
    if let Some(b) = prep.bases {
        model = model.with_glram(b);
    }
    if let Some(s) = &prep.stats {
        model = model.with_standardization(s);
    }
    let (p, q) = model.input_shape();
    if is_eeg_shaped(p, q) {
        model = model.with_channels(CHANNELS.iter().map(|c| c.to_string()).collect());
    }
    model
}

#[derive(Serialize)]
struct FitReport {
    kind: ModelKind,
    n: usize,
    p: usize,
    q: usize,
    lambda: f64,
    penalty: PenaltyKind,
    status: FitStatus,
    converged: bool,
    iterations: usize,
    loglik: f64,
    penalized_loglik: f64,
    final_gradient_norm: f64,
    /// 1-based pinned row of alpha.
    baseline_row: usize,
    in_sample_accuracy: f64,
    warnings: Vec<String>,
    coefficients: Vec<CoefficientRow>,
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,penalized_loglik\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{},{v}\n", i + 1));
    }
    write_text(path, &s)
}

fn free_coefficient_rows(names: Vec<String>, values: &[f64], cov: &CovarianceEstimate, level: f64) -> Result<Vec<CoefficientRow>> {
    let z = normal_quantile(level)?;
    Ok(names
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(i, (name, &estimate))| {
            let se = cov.standard_error(i);
            CoefficientRow { name, estimate, se, lower: estimate - z * se, upper: estimate + z * se }
        })
        .collect())
}

fn coefficient_csv(rows: &[CoefficientRow]) -> String {
    let mut s = String::from("name,estimate,se,lower,upper\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.name, r.estimate, r.se, r.lower, r.upper));
    }
    s
}

fn fit_cmd(g: &GlobalOpts, a: &FitArgs) -> Result<()> {
    let out = artifact_path(g, "model")?;
    check_level(a.level)?;
    let report = match load_dataset(&a.data)? {
        Loaded::Binary(raw) => {
            let (matrices, prep) = prepare(raw.matrices().to_vec(), a.glram.as_deref(), a.standardize)?;
            let data = raw.with_matrices(matrices)?;
            let cfg = FitConfig {
                lambda: a.lambda,
                penalty: a.penalty,
                tol: a.tol,
                max_iter: a.max_iter,
                init: None,
                baseline_row: one_based(a.baseline_row, data.p())?,
            };
            let fitted = fit(&data, &cfg)?;
            let cov = covariance_estimate(&fitted, &data)?;
            let probs = data.matrices().iter().map(|x| success_probability(&fitted.theta, x)).collect::<mvlogit::Result<Vec<_>>>()?;
            let model = attach(ModelFile::binary(&fitted.theta, fitted.lambda, fitted.penalty).with_covariance(&cov), prep);
            model.save_json(&out)?;
            if let Some(t) = &a.trace {
                write_trace(t, &fitted.trace)?;
            }
            FitReport {
                kind: ModelKind::Binary,
                n: data.n(),
                p: data.p(),
                q: data.q(),
                lambda: fitted.lambda,
                penalty: fitted.penalty,
                status: fitted.status,
                converged: fitted.converged,
                iterations: fitted.iterations,
                loglik: fitted.loglik,
                penalized_loglik: fitted.penalized_loglik,
                final_gradient_norm: fitted.final_gradient_norm,
                baseline_row: fitted.theta.baseline_row() + 1,
                in_sample_accuracy: accuracy(&probs, data.labels()),
                warnings: fitted.warnings.clone(),
                coefficients: coefficient_table(&fitted.theta, &cov, a.level)?,
            }
        }
        Loaded::Multi(raw) => {
            let (matrices, prep) = prepare(raw.matrices().to_vec(), a.glram.as_deref(), a.standardize)?;
            let data = MultiClassDataset::new(matrices, raw.labels().to_vec(), raw.num_classes())?;
            let cfg = MultiFitConfig {
                lambda: a.lambda,
                penalty: a.penalty,
                tol: a.tol,
                max_iter: a.max_iter,
                baseline_row: one_based(a.baseline_row, data.p())?,
                reference_class: a.reference_class,
                init: None,
            };
            let fitted = multiclass_fit(&data, &cfg)?;
            let cov = multiclass_covariance(&fitted, &data)?;
            let hits = data
                .matrices()
                .iter()
                .zip(data.labels())
                .map(|(x, &y)| predict_class(&fitted.theta, x).map(|c| c == y))
                .collect::<mvlogit::Result<Vec<_>>>()?;
            let model = attach(ModelFile::multiclass(&fitted.theta, fitted.lambda, fitted.penalty).with_covariance(&cov), prep);
            model.save_json(&out)?;
            if let Some(t) = &a.trace {
                write_trace(t, &fitted.trace)?;
            }
            let free = fitted.theta.to_free();
            FitReport {
                kind: ModelKind::Multiclass,
                n: data.n(),
                p: data.p(),
                q: data.q(),
                lambda: fitted.lambda,
                penalty: fitted.penalty,
                status: fitted.status,
                converged: fitted.converged,
                iterations: fitted.iterations,
                loglik: fitted.loglik,
                penalized_loglik: fitted.penalized_loglik,
                final_gradient_norm: fitted.final_gradient_norm,
                baseline_row: fitted.theta.baseline_row() + 1,
                in_sample_accuracy: hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64,
                warnings: fitted.warnings.clone(),
                coefficients: free_coefficient_rows(fitted.theta.free_labels(), free.as_slice(), &cov, a.level)?,
            }
        }
    };
    match g.format {
        Format::Json => print_summary(&report),
        Format::Csv => {
            print!("{}", coefficient_csv(&report.coefficients));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CvReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    mv: Option<CvTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conventional: Option<CvTable>,
}

fn cv(g: &GlobalOpts, a: &CvArgs) -> Result<()> {
    let mut data = load_binary(&a.data)?;
    if a.standardize {
        data = standardize(&data)?.0;
    }
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let mv = if a.arm != Arm::Conventional {
        let baseline = match one_based(a.baseline_row, data.p())? {
            Some(b) => b,
            None => select_baseline_row(&data)?,
        };
        let template = FitConfig { baseline_row: Some(baseline), ..FitConfig::with_lambda(0.0, a.penalty) };
        Some(select_lambda_cv(&data, &a.grid, a.scheme, seed, &template)?)
    } else {
        None
    };
    let conventional = if a.arm != Arm::Mv {
        Some(select_lambda_cv_conventional(&data, &a.grid, a.scheme, seed, a.penalty)?)
    } else {
        None
    };
    let report = CvReport { mv, conventional };
    emit_report(g, &report, || {
        let mut s = String::from("lambda,mv_accuracy,conventional_accuracy\n");
        let cell = |t: &Option<CvTable>, i: usize| t.as_ref().map(|t| t.accuracy[i].to_string()).unwrap_or_default();
        for (i, l) in a.grid.iter().enumerate() {
            s.push_str(&format!("{l},{},{}\n", cell(&report.mv, i), cell(&report.conventional, i)));
        }
        s
    })
}

#[derive(Serialize)]
struct SubjectRow {
    id: String,
    label: u8,
    probability: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct InferReport {
    n: usize,
    level: f64,
    coefficients: Vec<CoefficientRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    subjects: Vec<SubjectRow>,
}

fn preprocess_all(model: &ModelFile, matrices: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    Ok(matrices.iter().map(|x| model.preprocess(x)).collect::<mvlogit::Result<Vec<_>>>()?)
}

fn infer(g: &GlobalOpts, a: &InferArgs) -> Result<()> {
    check_level(a.level)?;
    let model = ModelFile::load_json(&a.model)?;
    let report = match (model.kind, load_dataset(&a.data)?) {
        (ModelKind::Binary, Loaded::Binary(raw)) => {
            let data = raw.with_matrices(preprocess_all(&model, raw.matrices())?)?;
            let theta = model.theta()?;
            let cfg = FitConfig { baseline_row: Some(theta.baseline_row()), ..FitConfig::with_lambda(model.lambda, model.penalty) };
            let cov = covariance_at(&theta, &data, &cfg)?;
            let subjects = (0..data.n())
                .map(|i| {
                    let ci = probability_ci(&theta, &cov, &data.matrices()[i], a.level)?;
                    Ok(SubjectRow { id: data.id(i), label: data.labels()[i], probability: ci.estimate, lower: ci.lower, upper: ci.upper })
                })
                .collect::<mvlogit::Result<Vec<_>>>()?;
            InferReport { n: data.n(), level: a.level, coefficients: coefficient_table(&theta, &cov, a.level)?, subjects }
        }
        (ModelKind::Multiclass, Loaded::Multi(raw)) => {
            let data = MultiClassDataset::new(preprocess_all(&model, raw.matrices())?, raw.labels().to_vec(), raw.num_classes())?;
            let theta = model.theta_multi()?;
            let cov = multiclass_covariance_at(&theta, &data, model.lambda, model.penalty)?;
            let free = theta.to_free();
            InferReport {
                n: data.n(),
                level: a.level,
                coefficients: free_coefficient_rows(theta.free_labels(), free.as_slice(), &cov, a.level)?,
                subjects: Vec::new(),
            }
        }
        _ => bail!(MvError::InvalidInput("model kind and dataset kind differ".into())),
    };
    emit_report(g, &report, || coefficient_csv(&report.coefficients))
}

#[derive(Serialize)]
struct PredictReport<T> {
    n: usize,
    accuracy: f64,
    predictions: Vec<T>,
}

fn predict_cmd(g: &GlobalOpts, a: &PredictArgs) -> Result<()> {
    check_level(a.level)?;
    let model = ModelFile::load_json(&a.model)?;
    match (model.kind, load_dataset(&a.data)?) {
        (ModelKind::Binary, Loaded::Binary(data)) => {
            let preds = predict(&model, data.matrices(), &ids_of(&data), a.level)?;
            let probs: Vec<f64> = preds.iter().map(|p| p.probability).collect();
            let report = PredictReport { n: data.n(), accuracy: accuracy(&probs, data.labels()), predictions: preds };
            emit_report(g, &report, || {
                let mut s = String::from("id,label,probability,lower,upper\n");
                for p in &report.predictions {
                    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                    s.push_str(&format!("{},{},{},{},{}\n", p.id, p.label, p.probability, fmt(p.lower), fmt(p.upper)));
                }
                s
            })
        }
        (ModelKind::Multiclass, Loaded::Multi(data)) => {
            let ids: Vec<String> = (1..=data.n()).map(|i| i.to_string()).collect();
            let preds = predict_multiclass(&model, data.matrices(), &ids)?;
            let hits = preds.iter().zip(data.labels()).filter(|(p, &y)| p.class == y).count();
            let report = PredictReport { n: data.n(), accuracy: hits as f64 / data.n() as f64, predictions: preds };
            emit_report(g, &report, || {
                let mut s = String::from("id,class\n");
                for p in &report.predictions {
                    s.push_str(&format!("{},{}\n", p.id, p.class));
                }
                s
            })
        }
        _ => bail!(MvError::InvalidInput("model kind and dataset kind differ".into())),
    }
}

#[derive(Serialize)]
struct SimulateOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    tuning: Option<LambdaTuning>,
    report: SimReport,
}

fn simulate(g: &GlobalOpts, a: &SimulateArgs) -> Result<()> {
    let mut design = match &a.design {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SimDesign>(&text).map_err(MvError::from)?
        }
        None => SimDesign {
            lambda_mv: a.lambda_mv,
            lambda_conventional: a.lambda_conventional,
            penalty: a.penalty,
            test_size: a.test_size,
            ..SimDesign::new(a.p, a.q, a.n, a.sigma)
        },
    };
    if let Some(seed) = g.seed {
        design.seed = seed;
    }
    if let Some(r) = a.replicates {
        design.replicates = r;
    }
    design.validate()?;
    let tuning = match &a.tune_grid {
        Some(grid) => {
            let t = tune_lambdas(&design, grid, a.pilot_replicates, a.pilot_seed)?;
            design.lambda_mv = t.lambda_mv;
            design.lambda_conventional = t.lambda_conventional;
            Some(t)
        }
        None => None,
    };
    let report = run_study(&design)?;
    if let Some(dir) = &a.tables {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("coefficients.csv"), &report.coefficient_csv())?;
        write_text(&dir.join("accuracy.csv"), &report.accuracy_csv())?;
    }
    let out = SimulateOutput { tuning, report };
    emit_report(g, &out, || out.report.accuracy_csv())
}

fn pipeline(g: &GlobalOpts, a: &PipelineArgs) -> Result<()> {
    let data = source_dataset(&a.source)?;
    let cfg = PipelineConfig {
        p0: a.p0,
        q0: a.q0,
        grid: a.grid.clone(),
        penalty: a.penalty,
        scheme: a.scheme,
        seed: g.seed.unwrap_or(DEFAULT_SEED),
        nested: a.nested,
        inner_folds: a.inner_folds,
        level: a.level,
        glram: GlramOptions::default(),
        condition: a.source.condition,
    };
    let out = eeg_pipeline(&data, &cfg)?;
    if let Some(path) = &a.model {
        let mut model = out.model.clone();
        if is_eeg_shaped(data.p(), data.q()) {
            model = model.with_channels(CHANNELS.iter().map(|c| c.to_string()).collect());
        }
        model.save_json(path)?;
    }
    if let Some(dir) = &a.tables {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join("coefficients.csv"), &out.report.coefficient_csv())?;
        write_text(&dir.join("subjects.csv"), &out.report.subject_csv())?;
        write_text(&dir.join("accuracy.csv"), &out.report.accuracy_csv())?;
    }
    emit_report(g, &out.report, || out.report.accuracy_csv())
}

fn pca(g: &GlobalOpts, a: &PcaArgs) -> Result<()> {
    let data = source_dataset(&a.source)?;
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let reports = a
        .r
        .iter()
        .map(|&r| pca_baseline(&data, r, &a.grid, a.scheme, seed, a.penalty))
        .collect::<mvlogit::Result<Vec<_>>>()?;
    emit_report(g, &reports, || {
        let mut s = String::from("r,explained_fraction,selected_lambda,accuracy\n");
        for rep in &reports {
            s.push_str(&format!("{},{},{},{}\n", rep.r, rep.explained_fraction, rep.cv.selected_lambda, rep.cv.selected_accuracy));
        }
        s
    })
}
