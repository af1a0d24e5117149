//! Generalized low-rank approximation of a collection of matrices.
//!
//! Finds column-orthonormal `A` (p x p0) and `B` (q x q0) maximizing
//! `sum_i ||A' X_i B||_F^2` by alternating eigendecompositions: with `B` fixed,
//! `A` spans the top-`p0` eigenvectors of `sum_i X_i B B' X_i'`; with `A`
//! fixed, `B` spans the top-`q0` eigenvectors of `sum_i X_i' A A' X_i`. The
//! start is `B = [I_q0; 0]`, so runs are reproducible.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::row_major;
use crate::error::{MvError, Result};

/// Fitted projection bases plus the centering matrix used before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlramBases {
    #[serde(with = "row_major")]
    pub a: DMatrix<f64>,
    #[serde(with = "row_major")]
    pub b: DMatrix<f64>,
    /// Subtracted from every matrix before projection; `None` when fitting was uncentered.
    #[serde(with = "row_major::option", default)]
    pub mean: Option<DMatrix<f64>>,
    /// Captured energy `sum_i ||A' X_i B||^2` after each sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlramOptions {
    /// Subtract the per-entry sample mean before fitting.
    pub center: bool,
    /// Stop when the relative change of the objective falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlramOptions {
    fn default() -> Self {
        Self { center: true, tol: 1e-10, max_iter: 200 }
    }
}

impl GlramBases {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.nrows()
    }

    pub fn p0(&self) -> usize {
        self.a.ncols()
    }

    pub fn q0(&self) -> usize {
        self.b.ncols()
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }

    fn centered(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.shape() != (self.p(), self.q()) {
            return Err(MvError::dims(
                format!("{}x{}", self.p(), self.q()),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(match &self.mean {
            Some(m) => x - m,
            None => x.clone(),
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MvError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| MvError::io(path, e))
    }
}

/// Per-entry sample mean.
pub fn mean_matrix(matrices: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = matrices.first().ok_or_else(|| MvError::InvalidInput("no matrices".into()))?;
    let mut sum = DMatrix::zeros(first.nrows(), first.ncols());
    for m in matrices {
        sum += m;
    }
    Ok(sum / matrices.len() as f64)
}

fn check_input(matrices: &[DMatrix<f64>], p0: usize, q0: usize) -> Result<(usize, usize)> {
    let first = matrices.first().ok_or_else(|| MvError::InvalidInput("no matrices".into()))?;
    let (p, q) = first.shape();
    for (i, m) in matrices.iter().enumerate() {
        if m.shape() != (p, q) {
            return Err(MvError::dims(format!("{p}x{q}"), format!("{}x{} (matrix {i})", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MvError::InvalidInput(format!("non-finite entry in matrix {i}")));
        }
    }
    if p0 == 0 || p0 > p {
        return Err(MvError::InvalidInput(format!("p0 must be in 1..={p}, got {p0}")));
    }
    if q0 == 0 || q0 > q {
        return Err(MvError::InvalidInput(format!("q0 must be in 1..={q}, got {q0}")));
    }
    Ok((p, q))
}

/// Top-`k` eigenvectors of a symmetric matrix, by decreasing eigenvalue, each
/// signed so its largest-magnitude entry is positive.
fn top_eigenvectors(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut out = DMatrix::zeros(m.nrows(), k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(src);
        let lead = v.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        out.set_column(c, &(v * sign));
    }
    out
}

/// `sum_i Y_i Y_i'` with `Y_i = X_i B`.
fn row_scatter(matrices: &[DMatrix<f64>], b: &DMatrix<f64>) -> DMatrix<f64> {
    let p = matrices[0].nrows();
    let mut s = DMatrix::zeros(p, p);
    for x in matrices {
        let y = x * b;
        s.gemm(1.0, &y, &y.transpose(), 1.0);
    }
    s
}

/// `sum_i Z_i Z_i'` with `Z_i = X_i' A`.
fn column_scatter(matrices: &[DMatrix<f64>], a: &DMatrix<f64>) -> DMatrix<f64> {
    let q = matrices[0].ncols();
    let mut s = DMatrix::zeros(q, q);
    for x in matrices {
        let z = x.tr_mul(a);
        s.gemm(1.0, &z, &z.transpose(), 1.0);
    }
    s
}

fn captured(matrices: &[DMatrix<f64>], a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    matrices.iter().map(|x| (a.tr_mul(x) * b).norm_squared()).sum()
}

/// Fits GLRAM bases of size `p0 x q0`.
pub fn glram_fit(matrices: &[DMatrix<f64>], p0: usize, q0: usize, options: &GlramOptions) -> Result<GlramBases> {
    let (p, q) = check_input(matrices, p0, q0)?;
    if !(options.tol >= 0.0) || options.max_iter == 0 {
        return Err(MvError::InvalidInput("tol must be >= 0 and max_iter >= 1".into()));
    }
    let (work, mean) = if options.center {
        let mean = mean_matrix(matrices)?;
        (matrices.iter().map(|x| x - &mean).collect::<Vec<_>>(), Some(mean))
    } else {
        (matrices.to_vec(), None)
    };

    let mut b = DMatrix::identity(q, q0);
    let mut a = DMatrix::identity(p, p0);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..options.max_iter {
        a = top_eigenvectors(&row_scatter(&work, &b), p0);
        b = top_eigenvectors(&column_scatter(&work, &a), q0);
        let obj = captured(&work, &a, &b);
        let prev = trace.last().copied();
        trace.push(obj);
        if let Some(prev) = prev {
            if (obj - prev).abs() <= options.tol * obj.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(GlramBases { a, b, mean, objective_trace: trace, converged })
}

/// `A' (X - mean) B`.
pub fn glram_project(bases: &GlramBases, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(bases.a.tr_mul(&bases.centered(x)?) * &bases.b)
}

/// `A A' (X - mean) B B'`, in the centered coordinates.
pub fn glram_reconstruct(bases: &GlramBases, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(&bases.a * glram_project(bases, x)? * bases.b.transpose())
}

/// `sum_i ||(X_i - mean) - A A' (X_i - mean) B B'||_F^2`.
pub fn reconstruction_error(bases: &GlramBases, matrices: &[DMatrix<f64>]) -> Result<f64> {
    matrices
        .iter()
        .map(|x| Ok((bases.centered(x)? - glram_reconstruct(bases, x)?).norm_squared()))
        .sum()
}

/// `sum_i ||A' (X_i - mean) B||_F^2`.
pub fn captured_energy(bases: &GlramBases, matrices: &[DMatrix<f64>]) -> Result<f64> {
    matrices.iter().map(|x| Ok(glram_project(bases, x)?.norm_squared())).sum()
}

/// `sum_i ||X_i - mean||_F^2`.
pub fn total_energy(bases: &GlramBases, matrices: &[DMatrix<f64>]) -> Result<f64> {
    matrices.iter().map(|x| Ok(bases.centered(x)?.norm_squared())).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_set(seed: u64, n: usize, p: usize, q: usize) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal))).collect()
    }

    fn uncentered() -> GlramOptions {
        GlramOptions { center: false, ..GlramOptions::default() }
    }

    #[test]
    fn full_bases_capture_everything() {
        let xs = random_set(1, 6, 5, 4);
        let bases = glram_fit(&xs, 5, 4, &uncentered()).unwrap();
        let total: f64 = xs.iter().map(|x| x.norm_squared()).sum();
        assert!((bases.objective() - total).abs() < 1e-10 * total);
        assert!(reconstruction_error(&bases, &xs).unwrap() < 1e-10 * total);
    }

    #[test]
    fn identity_bases_project_to_self() {
        let bases = GlramBases {
            a: DMatrix::identity(3, 3),
            b: DMatrix::identity(2, 2),
            mean: None,
            objective_trace: vec![],
            converged: true,
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(glram_project(&bases, &x).unwrap(), x);
        assert_eq!(glram_project(&bases, &DMatrix::zeros(3, 2)).unwrap(), DMatrix::zeros(3, 2));
        assert!(glram_project(&bases, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn rank_one_in_span_is_reconstructed() {
        let xs = random_set(2, 10, 6, 5);
        let bases = glram_fit(&xs, 3, 2, &uncentered()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = &bases.a * nalgebra::DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &bases.b * nalgebra::DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &u * v.transpose();
        assert!((glram_reconstruct(&bases, &x).unwrap() - &x).amax() < 1e-10);
    }

    #[test]
    fn orthonormal_monotone_and_energy_identity() {
        for (seed, p0, q0) in [(4, 2, 3), (5, 4, 1), (6, 1, 1)] {
            let xs = random_set(seed, 20, 7, 5);
            let bases = glram_fit(&xs, p0, q0, &GlramOptions::default()).unwrap();
            assert!((bases.a.tr_mul(&bases.a) - DMatrix::identity(p0, p0)).amax() < 1e-10);
            assert!((bases.b.tr_mul(&bases.b) - DMatrix::identity(q0, q0)).amax() < 1e-10);
            assert!(bases.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0]));
            let cap = captured_energy(&bases, &xs).unwrap();
            let err = reconstruction_error(&bases, &xs).unwrap();
            let total = total_energy(&bases, &xs).unwrap();
            assert!((cap + err - total).abs() < 1e-8 * total);
            assert!((cap - bases.objective()).abs() < 1e-8 * total);
        }
    }

    #[test]
    fn single_matrix_matches_svd() {
        let x = random_set(7, 1, 6, 5).remove(0);
        let opts = GlramOptions { center: false, tol: 0.0, max_iter: 500 };
        let bases = glram_fit(std::slice::from_ref(&x), 2, 2, &opts).unwrap();
        let svd = x.clone().svd(true, true);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!((bases.objective() - (sv[0] * sv[0] + sv[1] * sv[1])).abs() < 1e-9 * sv[0] * sv[0]);
    }

    #[test]
    fn rotation_leaves_error_unchanged() {
        let xs = random_set(8, 12, 5, 4);
        let bases = glram_fit(&xs, 3, 2, &GlramOptions::default()).unwrap();
        let theta: f64 = 0.7;
        let mut q = DMatrix::identity(3, 3);
        q[(0, 0)] = theta.cos();
        q[(0, 1)] = -theta.sin();
        q[(1, 0)] = theta.sin();
        q[(1, 1)] = theta.cos();
        let rotated = GlramBases { a: &bases.a * q, ..bases.clone() };
        let e0 = reconstruction_error(&bases, &xs).unwrap();
        let e1 = reconstruction_error(&rotated, &xs).unwrap();
        assert!((e0 - e1).abs() < 1e-10 * e0);
    }

    #[test]
    fn nested_dimensions_do_not_increase_error() {
        let xs = random_set(9, 15, 8, 6);
        let errs: Vec<f64> = (1..=8)
            .map(|p0| {
                let b = glram_fit(&xs, p0, 3, &GlramOptions::default()).unwrap();
                reconstruction_error(&b, &xs).unwrap()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)), "{errs:?}");
    }

    #[test]
    fn rejects_bad_targets_and_round_trips() {
        let xs = random_set(10, 3, 4, 3);
        assert!(glram_fit(&xs, 0, 1, &GlramOptions::default()).is_err());
        assert!(glram_fit(&xs, 2, 4, &GlramOptions::default()).is_err());
        let bases = glram_fit(&xs, 2, 2, &GlramOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bases.json");
        bases.save_json(&path).unwrap();
        let back = GlramBases::load_json(&path).unwrap();
        assert_eq!(back, bases);
    }
}
