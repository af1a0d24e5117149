use super::*;
use crate::data::MatrixDataset;
use crate::inference::covariance_estimate;
use crate::model::success_probability;
use crate::solver::{fisher_hessian, fit, gradient, log_likelihood};
use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_block(rng: &mut ChaCha8Rng, p: usize, q: usize, baseline: usize) -> ThetaParam {
    let mut alpha = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    alpha[baseline] = 1.0;
    let beta = DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0));
    ThetaParam::new(rng.random_range(-0.5..0.5), alpha, beta, baseline).unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng, p: usize, q: usize, h: usize, baseline: usize) -> ThetaMulti {
    let blocks = (0..h - 1).map(|_| random_block(rng, p, q, baseline)).collect();
    ThetaMulti::new(blocks, h, h).unwrap()
}

fn draw_data(rng: &mut ChaCha8Rng, truth: &ThetaMulti, n: usize) -> MultiClassDataset {
    let (p, q) = (truth.p(), truth.q());
    let mut matrices = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let probs = class_probabilities(truth, &x).unwrap();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = probs.len();
        for (h, &pr) in probs.iter().enumerate() {
            acc += pr;
            if u < acc {
                label = h + 1;
                break;
            }
        }
        labels.push(label);
        matrices.push(x);
    }
    MultiClassDataset::new(matrices, labels, truth.num_classes()).unwrap()
}

fn as_binary(data: &MultiClassDataset) -> MatrixDataset {
    data.one_vs_rest(1)
}

#[test]
fn zero_predictors_give_uniform_probabilities() {
    for h in 2..6 {
        let theta = ThetaMulti::initial(2, 3, 0, h, h).unwrap();
        // Zero free parameters leave alpha = e_1 and beta = 0.
        let probs = class_probabilities(&theta, &DMatrix::from_element(2, 3, 0.7)).unwrap();
        for &pr in probs.iter() {
            assert!((pr - 1.0 / h as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn two_classes_match_binary_probability_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let block = random_block(&mut rng, 3, 4, 1);
        let theta = ThetaMulti::new(vec![block.clone()], 2, 2).unwrap();
        let x = DMatrix::from_fn(3, 4, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let probs = class_probabilities(&theta, &x).unwrap();
        assert_eq!(probs[0], success_probability(&block, &x).unwrap());
    }
}

#[test]
fn probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for h in [3, 4, 7] {
        let theta = random_theta(&mut rng, 4, 3, h, 2);
        for _ in 0..20 {
            let x = DMatrix::from_fn(4, 3, |_, _| 5.0 * rng.sample::<f64, _>(StandardNormal));
            let probs = class_probabilities(&theta, &x).unwrap();
            assert!((probs.sum() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn reference_class_is_identified() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = random_theta(&mut rng, 3, 3, 4, 0);
    let x = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let before = class_probabilities(&theta, &x).unwrap();
    for k in 0..3 {
        let mut free = theta.to_free();
        free[k * 6] += 0.5;
        let moved = ThetaMulti::from_free(&free, 3, 3, 0, 4, 4).unwrap();
        let after = class_probabilities(&moved, &x).unwrap();
        assert!((after[k] - before[k]) > 1e-3, "raising gamma_{} must raise its probability", k + 1);
        assert!(after[3] < before[3]);
    }
}

#[test]
fn custom_reference_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let blocks = vec![random_block(&mut rng, 2, 2, 0), random_block(&mut rng, 2, 2, 0)];
    let theta = ThetaMulti::new(blocks.clone(), 3, 1).unwrap();
    assert_eq!(theta.block_classes(), vec![2, 3]);
    assert_eq!(theta.block_for_class(3), Some(&blocks[1]));
    assert!(theta.block_for_class(1).is_none());
    let x = DMatrix::zeros(2, 2);
    let probs = class_probabilities(&theta, &x).unwrap();
    let e: Vec<f64> = blocks.iter().map(|b| b.gamma().exp()).collect();
    let total = 1.0 + e[0] + e[1];
    assert!((probs[0] - 1.0 / total).abs() < 1e-15);
    assert!((probs[2] - e[1] / total).abs() < 1e-15);
    assert!(ThetaMulti::new(blocks, 3, 4).is_err());
}

#[test]
fn log_likelihood_examples() {
    let one = MultiClassDataset::new(vec![DMatrix::zeros(2, 2)], vec![3], 3).unwrap();
    let zero = ThetaMulti::initial(2, 2, 0, 3, 3).unwrap();
    assert!((multiclass_log_likelihood(&zero, &one).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = random_theta(&mut rng, 3, 2, 2, 0);
    let data = draw_data(&mut rng, &theta, 40);
    let binary = log_likelihood(&theta.blocks()[0], &as_binary(&data)).unwrap();
    let multi = multiclass_log_likelihood(&theta, &data).unwrap();
    assert!((binary - multi).abs() < 1e-12 * binary.abs());

    // Per-term oracle with direct exponentials.
    let theta = random_theta(&mut rng, 3, 2, 4, 1);
    let data = draw_data(&mut rng, &theta, 30);
    let mut oracle = 0.0;
    for (x, &y) in data.matrices().iter().zip(data.labels()) {
        let eta: Vec<f64> = theta.blocks().iter().map(|b| b.gamma() + (b.alpha().transpose() * x * b.beta())[0]).collect();
        let denom = 1.0 + eta.iter().map(|t| t.exp()).sum::<f64>();
        let num = if y == 4 { 1.0 } else { eta[y - 1].exp() };
        oracle += (num / denom).ln();
    }
    let ll = multiclass_log_likelihood(&theta, &data).unwrap();
    assert!((ll - oracle).abs() < 1e-10 * oracle.abs());
}

fn penalized(theta: &ThetaMulti, data: &MultiClassDataset, lambda: f64, kind: PenaltyKind) -> f64 {
    multiclass_log_likelihood(theta, data).unwrap() - multiclass_penalty(theta, kind, lambda)
}

fn fd_gradient(theta: &ThetaMulti, data: &MultiClassDataset, lambda: f64, kind: PenaltyKind) -> DVector<f64> {
    let free = theta.to_free();
    let rebuild = |v: &DVector<f64>| {
        ThetaMulti::from_free(v, theta.p(), theta.q(), theta.baseline_row(), theta.num_classes(), theta.reference_class())
            .unwrap()
    };
    DVector::from_fn(free.len(), |k, _| {
        let h = 1e-5 * (1.0 + free[k].abs());
        let mut up = free.clone();
        up[k] += h;
        let mut dn = free.clone();
        dn[k] -= h;
        (penalized(&rebuild(&up), data, lambda, kind) - penalized(&rebuild(&dn), data, lambda, kind)) / (2.0 * h)
    })
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10 {
        let (p, q) = (rng.random_range(1..5), rng.random_range(1..4));
        let b = rng.random_range(0..p);
        let truth = random_theta(&mut rng, p, q, 3, b);
        let data = draw_data(&mut rng, &truth, 60);
        let at = random_theta(&mut rng, p, q, 3, b);
        let kind = if case % 2 == 0 { PenaltyKind::AllTheta } else { PenaltyKind::NoIntercept };
        let lambda = rng.random_range(0.0..3.0);
        let g = multiclass_gradient(&at, &data, lambda, kind).unwrap();
        let fd = fd_gradient(&at, &data, lambda, kind);
        assert!((&g - &fd).norm() / fd.norm().max(1e-12) < 1e-6, "case {case}");
    }
}

#[test]
fn multinomial_weights_are_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 1..6 {
        for _ in 0..20 {
            let raw: Vec<f64> = (0..=k).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw[..k].iter().map(|v| v / total).collect();
            let w = multinomial_weights(&probs);
            assert!((&w - w.transpose()).amax() < 1e-15);
            assert!(w.symmetric_eigenvalues().min() > -1e-10);
        }
    }
}

#[test]
fn two_class_curvature_matches_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_theta(&mut rng, 3, 4, 2, 2);
    let data = draw_data(&mut rng, &truth, 80);
    let at = random_theta(&mut rng, 3, 4, 2, 2);
    let cfg = FitConfig::with_lambda(1.5, PenaltyKind::AllTheta);
    let h_multi = multiclass_fisher_hessian(&at, &data, 1.5, PenaltyKind::AllTheta).unwrap();
    let h_bin = fisher_hessian(&at.blocks()[0], &as_binary(&data), &cfg).unwrap();
    assert!((&h_multi - &h_bin).amax() < 1e-10 * h_bin.amax());
    let g_multi = multiclass_gradient(&at, &data, 1.5, PenaltyKind::AllTheta).unwrap();
    let g_bin = gradient(&at.blocks()[0], &as_binary(&data), &cfg).unwrap();
    assert!((&g_multi - &g_bin).amax() < 1e-10 * g_bin.amax());
}

#[test]
fn two_class_fit_matches_binary_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..5 {
        let truth = random_theta(&mut rng, 4, 3, 2, 0);
        let data = draw_data(&mut rng, &truth, 120);
        let lambda = [0.0, 0.5, 2.0, 8.0, 1.0][case];
        let multi = multiclass_fit(&data, &MultiFitConfig::with_lambda(lambda, PenaltyKind::NoIntercept)).unwrap();
        let single = fit(&as_binary(&data), &FitConfig::with_lambda(lambda, PenaltyKind::NoIntercept)).unwrap();
        assert!(multi.converged && single.converged);
        assert_eq!(multi.theta.baseline_row(), single.theta.baseline_row());
        assert!((multi.theta.to_free() - single.theta.to_free()).amax() < 1e-8);
        assert!((multi.loglik - single.loglik).abs() < 1e-8);

        let cov_m = multiclass_covariance(&multi, &data).unwrap();
        let cov_b = covariance_estimate(&single, &as_binary(&data)).unwrap();
        assert!((&cov_m.sigma_hat - &cov_b.sigma_hat).amax() < 1e-6 * cov_b.sigma_hat.amax());
    }
}

struct NegPenalized<'a> {
    data: &'a MultiClassDataset,
    template: ThetaMulti,
    lambda: f64,
}

impl NegPenalized<'_> {
    fn eval(&self, v: &[f64]) -> f64 {
        let t = &self.template;
        let theta = ThetaMulti::from_free(&DVector::from_column_slice(v), t.p(), t.q(), t.baseline_row(), 3, 3).unwrap();
        -penalized(&theta, self.data, self.lambda, PenaltyKind::NoIntercept)
    }
}

impl CostFunction for NegPenalized<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(v))
    }
}

impl Gradient for NegPenalized<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    // Black box: central differences of the cost only.
    fn gradient(&self, v: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok((0..v.len())
            .map(|k| {
                let h = 1e-6 * (1.0 + v[k].abs());
                let mut up = v.clone();
                up[k] += h;
                let mut dn = v.clone();
                dn[k] -= h;
                (self.eval(&up) - self.eval(&dn)) / (2.0 * h)
            })
            .collect())
    }
}

#[test]
fn three_class_fit_agrees_with_black_box_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let truth = random_theta(&mut rng, 4, 3, 3, 0);
    let data = draw_data(&mut rng, &truth, 500);
    let cfg = MultiFitConfig { baseline_row: Some(0), ..MultiFitConfig::with_lambda(0.5, PenaltyKind::NoIntercept) };
    let ours = multiclass_fit(&data, &cfg).unwrap();
    assert!(ours.converged);
    assert!(ours.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs()));

    let problem = NegPenalized { data: &data, template: ours.theta.clone(), lambda: 0.5 };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10).with_tolerance_grad(1e-7).unwrap();
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(vec![0.0; 14]).max_iters(500))
        .run()
        .unwrap();
    let oracle = res.state.best_param.unwrap();
    let diff = (ours.theta.to_free() - DVector::from_vec(oracle)).amax();
    assert!(diff < 1e-4, "newton vs black-box optimizer differ by {diff}");

    let recovery = (ours.theta.to_free() - truth.to_free()).amax();
    assert!(recovery < 0.75, "sup error against truth {recovery}");
}

#[test]
fn covariance_is_symmetric_psd_and_reduces_at_zero_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = random_theta(&mut rng, 3, 2, 3, 0);
    let data = draw_data(&mut rng, &truth, 300);
    let fitted = multiclass_fit(&data, &MultiFitConfig { baseline_row: Some(0), ..MultiFitConfig::default() }).unwrap();
    let cov = multiclass_covariance(&fitted, &data).unwrap();
    let s = &cov.sigma_hat;
    assert!((s - s.transpose()).amax() < 1e-10 * s.amax());
    assert!(s.clone().symmetric_eigenvalues().min() > -1e-10 * s.amax());

    let n = data.n() as f64;
    let info = multiclass_fisher_hessian(&fitted.theta, &data, 0.0, PenaltyKind::NoIntercept).unwrap();
    let bread_inv = (info / n).try_inverse().unwrap();
    assert!((s - &bread_inv).amax() < 1e-8 * bread_inv.amax());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let theta = ThetaMulti::initial(2, 2, 0, 3, 3).unwrap();
    let data = MultiClassDataset::new(vec![DMatrix::zeros(3, 2)], vec![1], 3).unwrap();
    assert!(multiclass_log_likelihood(&theta, &data).is_err());
    assert!(class_probabilities(&theta, &DMatrix::zeros(2, 3)).is_err());
    let four = MultiClassDataset::new(vec![DMatrix::zeros(2, 2)], vec![1], 4).unwrap();
    assert!(multiclass_log_likelihood(&theta, &four).is_err());
}
