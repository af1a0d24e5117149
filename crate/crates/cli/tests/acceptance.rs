//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in a
//! fixed order with their summary lines visible.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mvlogit::eeg::{ingest_eeg, write_synthetic_eeg, ConditionFilter, SyntheticEeg};
use mvlogit::glram::{captured_energy, glram_fit, reconstruction_error, total_energy, GlramOptions};
use mvlogit::inference::{covariance_estimate, probability_ci, theta_ci};
use mvlogit::multiclass::{multiclass_fit, multiclass_gradient, multiclass_log_likelihood, multiclass_penalty, MultiFitConfig, ThetaMulti};
use mvlogit::pipeline::{eeg_pipeline, PipelineConfig, PipelineReport};
use mvlogit::simulation::{draw_replicate, generate_mv_data, replicate_rng, run_study, tune_lambdas, SimDesign};
use mvlogit::solver::{
    conventional_log_likelihood, fisher_hessian, fit, gradient, hessian_cross_term, log_likelihood, penalty,
};
use mvlogit::{FitConfig, MatrixDataset, MultiClassDataset, PenaltyKind, ThetaParam};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    replicate_rng(seed, 0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_theta(rng: &mut ChaCha8Rng, p: usize, q: usize) -> ThetaParam {
    let b = rng.random_range(0..p);
    let mut alpha = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    alpha[b] = 1.0;
    let beta = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
    ThetaParam::new(rng.random_range(-1.0..1.0), alpha, beta, b).unwrap()
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize, q: usize) -> MatrixDataset {
    let matrices: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, q, |_, _| normal(rng))).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    labels[0] = 0;
    labels[1] = 1;
    MatrixDataset::new(matrices, labels).unwrap()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn penalized(theta: &ThetaParam, data: &MatrixDataset, cfg: &FitConfig) -> f64 {
    log_likelihood(theta, data).unwrap() - penalty(theta, cfg.penalty, cfg.lambda)
}

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let (mut worst_g, mut worst_h) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let (p, q) = (r.random_range(2..=6), r.random_range(1..=5));
        let n = r.random_range(20..80);
        let data = random_data(&mut r, n, p, q);
        let theta = random_theta(&mut r, p, q);
        let kind = if r.random::<bool>() { PenaltyKind::AllTheta } else { PenaltyKind::NoIntercept };
        let cfg = FitConfig::with_lambda(r.random_range(0.0..2.0), kind);
        let b = theta.baseline_row();
        let free = theta.to_free();
        let at = |v: &DVector<f64>| ThetaParam::from_free(v, p, q, b).unwrap();
        let g = gradient(&theta, &data, &cfg).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut num_g = DVector::zeros(free.len());
        let mut num_h = DMatrix::zeros(free.len(), free.len());
        for k in 0..free.len() {
            let (mut up, mut dn) = (free.clone(), free.clone());
            up[k] += h;
            dn[k] -= h;
            num_g[k] = (penalized(&at(&up), &data, &cfg) - penalized(&at(&dn), &data, &cfg)) / (2.0 * h);
            let gu = gradient(&at(&up), &data, &cfg).unwrap();
            let gd = gradient(&at(&dn), &data, &cfg).unwrap();
            num_h.set_column(k, &((gu - gd) / (2.0 * h)));
        }
        worst_g = worst_g.max(rel(&num_g, &g));
        let analytic = -fisher_hessian(&theta, &data, &cfg).unwrap() + hessian_cross_term(&theta, &data).unwrap();
        worst_h = worst_h.max((&num_h - &analytic).norm() / analytic.norm());
    }
    Ok((
        worst_g < 1e-6 && worst_h < 1e-4,
        format!("50 instances, max gradient rel err {worst_g:.1e} (< 1e-6), max Hessian rel err {worst_h:.1e} (< 1e-4)"),
    ))
}

fn criterion_2() -> Outcome {
    let mut r = rng(202);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let (p, q) = (r.random_range(2..=6), r.random_range(2..=5));
        let data = random_data(&mut r, 50, p, q);
        let theta = random_theta(&mut r, p, q);
        let xi = DVector::from_column_slice((theta.alpha() * theta.beta().transpose()).as_slice());
        let a = log_likelihood(&theta, &data).unwrap();
        let c = conventional_log_likelihood(theta.gamma(), &xi, &data).unwrap();
        worst = worst.max((a - c).abs());
    }
    let design = SimDesign::new(3, 3, 2000, 0.0);
    let truth = design.theta_true().to_free();
    let cfg = FitConfig { baseline_row: Some(0), ..FitConfig::default() };
    let mut hits = 0;
    for rep in 0..100 {
        let data = generate_mv_data(&design, 5000 + rep);
        if let Ok(f) = fit(&data, &cfg) {
            if (f.theta.to_free() - &truth).amax() <= 0.15 {
                hits += 1;
            }
        }
    }
    Ok((
        worst <= 1e-10 && hits >= 95,
        format!("max |loglik difference| {worst:.1e} (<= 1e-10); recovery within 0.15 in {hits}/100 (>= 95)"),
    ))
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn criterion_3() -> Outcome {
    let design = SimDesign { lambda_mv: 1.0, lambda_conventional: 1.0, ..SimDesign::new(12, 10, 300, 0.0) };
    let report = run_study(&design).map_err(|e| e.to_string())?;
    let coord = |name: &str| report.coordinates.iter().find(|c| c.name == name).cloned().ok_or(format!("no {name}"));
    let gamma = coord("gamma")?;
    let beta1 = coord("beta_1")?;
    let pass = within(gamma.mean, 1.055, 0.05)
        && within(beta1.mean, 0.995, 0.04)
        && within(gamma.sd, 0.289, 0.04)
        && within(gamma.mean_se, 0.287, 0.04)
        && report.similarity_mean >= 0.975;
    Ok((
        pass,
        format!(
            "lambda 1, {} reps: mean gamma {:.3} (1.055 +/- .05), mean beta_1 {:.3} (0.995 +/- .04), SD gamma {:.3} (0.289 +/- .04), mean SE {:.3} (0.287 +/- .04), similarity {:.3} (>= .975)",
            report.replicates_used, gamma.mean, beta1.mean, gamma.sd, gamma.mean_se, report.similarity_mean
        ),
    ))
}

fn criterion_4() -> Outcome {
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let cells = [(0.0, 0.867, 0.739, 1.00, 1.00), (0.3, 0.794, 0.745, 0.87, 0.44), (0.5, 0.727, 0.751, 0.37, 0.33)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (sigma, mv, conv, wp, rho) in cells {
        let base = SimDesign::new(12, 10, 150, sigma);
        let tuning = tune_lambdas(&base, &grid, 100, 12345).map_err(|e| e.to_string())?;
        let design = SimDesign { lambda_mv: tuning.lambda_mv, lambda_conventional: tuning.lambda_conventional, ..base };
        let r = run_study(&design).map_err(|e| e.to_string())?;
        let ok = within(r.accuracy_mv, mv, 0.02)
            && within(r.accuracy_conventional, conv, 0.02)
            && within(r.winning_proportion, wp, 0.06)
            && within(r.rho_mean, rho, 0.03);
        pass &= ok;
        parts.push(format!(
            "sigma {sigma}: acc {:.3}/{:.3} (target {mv}/{conv}), win {:.3} ({wp}), rho {:.3} ({rho}), lambda {}/{}{}",
            r.accuracy_mv,
            r.accuracy_conventional,
            r.winning_proportion,
            r.rho_mean,
            tuning.lambda_mv,
            tuning.lambda_conventional,
            if ok { "" } else { " OUT" }
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn criterion_5() -> Outcome {
    let design = SimDesign::new(12, 10, 300, 0.0);
    let truth = design.theta_true().gamma();
    let cfg = FitConfig { baseline_row: Some(0), ..FitConfig::default() };
    let (mut covered, mut failed) = (0usize, 0usize);
    for rep in 0..500 {
        let data = draw_replicate(&design, rep).train;
        let interval = fit(&data, &cfg)
            .and_then(|f| covariance_estimate(&f, &data).map(|c| (f, c)))
            .and_then(|(f, c)| theta_ci(&f.theta, &c, 0, 0.95));
        match interval {
            Ok(ci) if ci.lower <= truth && truth <= ci.upper => covered += 1,
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    let coverage = covered as f64 / 500.0;

    // probability intervals: bounds and nesting on random queries
    let mut r = rng(505);
    let data = random_data(&mut r, 200, 4, 3);
    let f = fit(&data, &FitConfig::with_lambda(0.5, PenaltyKind::NoIntercept)).map_err(|e| e.to_string())?;
    let cov = covariance_estimate(&f, &data).map_err(|e| e.to_string())?;
    let mut bounded = true;
    let mut nested = true;
    for _ in 0..100 {
        let scale = r.random_range(0.1..20.0);
        let x = DMatrix::from_fn(4, 3, |_, _| scale * normal(&mut r));
        let levels = [0.8, 0.9, 0.95, 0.99];
        let cis: Vec<_> = levels.iter().map(|&l| probability_ci(&f.theta, &cov, &x, l).unwrap()).collect();
        bounded &= cis.iter().all(|c| (0.0..=1.0).contains(&c.lower) && (0.0..=1.0).contains(&c.upper));
        nested &= cis.windows(2).all(|w| w[1].lower <= w[0].lower && w[0].upper <= w[1].upper);
        nested &= cis.iter().all(|c| c.lower <= c.estimate && c.estimate <= c.upper);
    }
    Ok((
        (0.92..=0.98).contains(&coverage) && bounded && nested,
        format!(
            "gamma Wald coverage at lambda 0 {coverage:.3} over 500 reps ({failed} fits failed, counted as misses; target [0.92, 0.98]); probability CI endpoints in [0,1]: {bounded}; nesting over 100 queries: {nested}"
        ),
    ))
}

/// Largest sine of the principal angles between the column spaces of two orthonormal bases.
fn max_principal_sine(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let residual = u - v * (v.transpose() * u);
    residual.clone().svd(false, false).singular_values.max()
}

fn criterion_6() -> Outcome {
    let mut r = rng(606);
    let (mut ortho, mut mono, mut energy) = (0.0_f64, true, 0.0_f64);
    for trial in 0..10 {
        let (p, q) = (r.random_range(4..12), r.random_range(3..10));
        let n = r.random_range(5..30);
        let xs: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, q, |_, _| normal(&mut r))).collect();
        let (p0, q0) = (r.random_range(1..p), r.random_range(1..q));
        let opts = GlramOptions { center: trial % 2 == 0, ..GlramOptions::default() };
        let bases = glram_fit(&xs, p0, q0, &opts).map_err(|e| e.to_string())?;
        ortho = ortho
            .max((bases.a.transpose() * &bases.a - DMatrix::identity(p0, p0)).amax())
            .max((bases.b.transpose() * &bases.b - DMatrix::identity(q0, q0)).amax());
        mono &= bases.objective_trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        let total = total_energy(&bases, &xs).unwrap();
        let split = captured_energy(&bases, &xs).unwrap() + reconstruction_error(&bases, &xs).unwrap();
        energy = energy.max((split - total).abs() / total);
    }
    let mut angle = 0.0_f64;
    for _ in 0..10 {
        let (p, q) = (r.random_range(4..10), r.random_range(4..10));
        let x = DMatrix::from_fn(p, q, |_, _| normal(&mut r));
        let (p0, q0) = (r.random_range(1..4), r.random_range(1..4));
        let k = p0.min(q0);
        let opts = GlramOptions { center: false, tol: 0.0, max_iter: 2000 };
        let bases = glram_fit(std::slice::from_ref(&x), k, k, &opts).map_err(|e| e.to_string())?;
        let svd = x.clone().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap().select_columns(&order[..k]);
        let v = svd.v_t.unwrap().transpose().select_columns(&order[..k]);
        angle = angle.max(max_principal_sine(&bases.a, &u)).max(max_principal_sine(&bases.b, &v));
    }
    Ok((
        ortho < 1e-10 && mono && energy < 1e-8 && angle < 1e-6,
        format!(
            "orthonormality {ortho:.1e} (< 1e-10), monotone {mono}, energy identity rel err {energy:.1e} (< 1e-8), n=1 SVD principal angle {angle:.1e} (< 1e-6)"
        ),
    ))
}

fn criterion_7() -> Outcome {
    let mut r = rng(707);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (p, q) = (r.random_range(2..=5), r.random_range(2..=4));
        let data = random_data(&mut r, 150, p, q);
        let lambda = r.random_range(0.1..2.0);
        let bin = fit(&data, &FitConfig { baseline_row: Some(0), ..FitConfig::with_lambda(lambda, PenaltyKind::NoIntercept) })
            .map_err(|e| e.to_string())?;
        // class 2 is the success class, class 1 the reference
        let multi = MultiClassDataset::new(data.matrices().to_vec(), data.labels().iter().map(|&y| y as usize + 1).collect(), 2)
            .map_err(|e| e.to_string())?;
        let cfg = MultiFitConfig { baseline_row: Some(0), reference_class: Some(1), ..MultiFitConfig::with_lambda(lambda, PenaltyKind::NoIntercept) };
        let m = multiclass_fit(&multi, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((m.theta.to_free() - bin.theta.to_free()).amax());
    }
    let mut grad_rel = 0.0_f64;
    for _ in 0..10 {
        let (p, q) = (r.random_range(2..=4), r.random_range(2..=4));
        let n = 60;
        let matrices: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, q, |_, _| normal(&mut r))).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3 + 1).collect();
        let data = MultiClassDataset::new(matrices, labels, 3).unwrap();
        let blocks = (0..2).map(|_| {
            let mut a = DVector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
            a[0] = 1.0;
            ThetaParam::new(r.random_range(-0.5..0.5), a, DVector::from_fn(q, |_, _| r.random_range(-1.0..1.0)), 0).unwrap()
        });
        let theta = ThetaMulti::new(blocks.collect(), 3, 3).unwrap();
        let lambda = 0.7;
        let kind = PenaltyKind::AllTheta;
        let g = multiclass_gradient(&theta, &data, lambda, kind).map_err(|e| e.to_string())?;
        let free = theta.to_free();
        let value = |v: &DVector<f64>| {
            let t = ThetaMulti::from_free(v, p, q, 0, 3, 3).unwrap();
            multiclass_log_likelihood(&t, &data).unwrap() - multiclass_penalty(&t, kind, lambda)
        };
        let h = 1e-5;
        let num = DVector::from_fn(free.len(), |k, _| {
            let (mut up, mut dn) = (free.clone(), free.clone());
            up[k] += h;
            dn[k] -= h;
            (value(&up) - value(&dn)) / (2.0 * h)
        });
        grad_rel = grad_rel.max(rel(&num, &g));
    }
    Ok((
        worst <= 1e-8 && grad_rel < 1e-6,
        format!("H=2 vs binary max sup-norm diff {worst:.1e} (<= 1e-8) on 10 datasets; H=3 gradient rel err {grad_rel:.1e} (< 1e-6)"),
    ))
}

fn schema_valid(r: &PipelineReport, n: usize) -> bool {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    r.n == n
        && r.subjects.len() == n
        && r.mv.accuracy.len() == r.config.grid.len()
        && r.conventional.accuracy.len() == r.config.grid.len()
        && r.mv.accuracy.iter().chain(&r.conventional.accuracy).all(|&a| unit(a))
        && r.subjects.iter().all(|s| unit(s.lower) && s.lower <= s.probability && s.probability <= s.upper && unit(s.upper))
        && r.coefficients.len() == r.config.p0 + r.config.q0
        && (1..=r.config.p0).contains(&r.baseline_row)
}

fn criterion_8() -> Outcome {
    if let Some(dir) = std::env::var_os("MVLOGIT_DATA_DIR") {
        let ing = ingest_eeg(Path::new(&dir), ConditionFilter::SingleStimulus).map_err(|e| e.to_string())?;
        let mut pass = true;
        let mut parts = vec![format!("{} subjects", ing.dataset.n())];
        for (p0, q0) in [(15, 15), (15, 20), (15, 30), (30, 15), (30, 20), (30, 30), (60, 15), (60, 20), (60, 30)] {
            let cfg = PipelineConfig { p0, q0, ..PipelineConfig::default() };
            let r = eeg_pipeline(&ing.dataset, &cfg).map_err(|e| e.to_string())?.report;
            let (mv, conv) = (r.mv.selected_accuracy, r.conventional.selected_accuracy);
            pass &= mv >= conv;
            if (p0, q0) == (15, 15) {
                pass &= mv >= 0.82;
            }
            parts.push(format!("({p0},{q0}) {mv:.3}/{conv:.3}"));
        }
        return Ok((pass, format!("real data, LOO MV/conventional: {}", parts.join(", "))));
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_synthetic_eeg(tmp.path(), &SyntheticEeg::default()).map_err(|e| e.to_string())?;
    let ing = ingest_eeg(tmp.path(), ConditionFilter::SingleStimulus).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let a = eeg_pipeline(&ing.dataset, &cfg).map_err(|e| e.to_string())?.report;
    let b = eeg_pipeline(&ing.dataset, &cfg).map_err(|e| e.to_string())?.report;
    let ja = serde_json::to_string(&a).map_err(|e| e.to_string())?;
    let jb = serde_json::to_string(&b).map_err(|e| e.to_string())?;
    let back: PipelineReport = serde_json::from_str(&ja).map_err(|e| e.to_string())?;
    let deterministic = ja == jb;
    let valid = schema_valid(&a, ing.dataset.n()) && back == a;
    Ok((
        deterministic && valid,
        format!(
            "MVLOGIT_DATA_DIR unset, synthetic fixture ({} subjects): deterministic {deterministic}, schema-valid {valid}; LOO MV {:.3} / conventional {:.3}",
            ing.dataset.n(),
            a.mv.selected_accuracy,
            a.conventional.selected_accuracy
        ),
    ))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mvlogit"))
        .args(args)
        .env_remove("MVLOGIT_DATA_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let eeg = tmp.path().join("eeg");
    let ds = tmp.path().join("ds.json");
    let (eeg_s, ds_s) = (eeg.to_str().unwrap(), ds.to_str().unwrap());
    run_cli(&["ingest-eeg", "--synthetic", "--data-dir", eeg_s, "--out", ds_s])?;
    let sim = ["simulate", "--sigma", "0.3", "--replicates", "40", "--seed", "9", "--threads", "1"];
    let pipe = ["eeg-pipeline", "--data", ds_s, "--seed", "9", "--threads", "1"];
    let sim_same = run_cli(&sim)? == run_cli(&sim)?;
    let pipe_same = run_cli(&pipe)? == run_cli(&pipe)?;
    Ok((sim_same && pipe_same, format!("simulate identical: {sim_same}; eeg-pipeline identical: {pipe_same}")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient and Hessian", criterion_1),
        ("constrained equivalence", criterion_2),
        ("coefficient study", criterion_3),
        ("accuracy study", criterion_4),
        ("interval machinery", criterion_5),
        ("GLRAM", criterion_6),
        ("multi-class reduction", criterion_7),
        ("EEG pipeline", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {} {name}: {} [{:.1}s] {detail}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
