//! Overflow-free logistic helpers.

/// Logistic function `1 / (1 + e^-t)`, branching on sign so neither side overflows.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)`.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `log(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(e^0 + sum_k e^{t_k})`: the normaliser of a softmax with a reference
/// category whose score is fixed at zero.
pub fn log1p_sum_exp(t: &[f64]) -> f64 {
    let m = t.iter().copied().fold(0.0_f64, f64::max);
    let s: f64 = (-m).exp() + t.iter().map(|&v| (v - m).exp()).sum::<f64>();
    m + s.ln()
}

/// Bernoulli log-likelihood `y*t - log(1+e^t)` of one observation.
pub fn bernoulli_loglik(y: f64, t: f64) -> f64 {
    y * t - softplus(t)
}
