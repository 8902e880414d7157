//! Small dense linear-algebra helpers shared by the simulator, estimator and solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Clips every singular value of `m` to at most `cap`. Matrices already inside
/// the ball are returned unchanged (bit-for-bit).
pub fn clip_spectral(m: &DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let cap = cap.max(0.0);
    if spectral_norm(m) <= cap {
        return m.clone();
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m * (cap / m.norm());
    }
    let mut svd = m.clone().svd(true, true);
    for s in svd.singular_values.iter_mut() {
        if *s > cap {
            *s = cap;
        }
    }
    svd.recompose().expect("u and v were requested")
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Rescales `m` so its spectral norm equals `target` (zero matrices stay zero).
pub fn with_spectral_norm(m: DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let s = spectral_norm(&m);
    if s == 0.0 {
        m
    } else {
        m * (target / s)
    }
}

/// Uniform sample from the Euclidean ball of the given radius in `dim` dimensions.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    let mut dir = gaussian_vector(rng, dim);
    let norm = dir.norm();
    if norm == 0.0 {
        return DVector::zeros(dim);
    }
    dir /= norm;
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / dim as f64))
}

/// Uniform sample from the Frobenius ball of the given radius over `rows x cols` matrices.
pub fn uniform_in_frobenius_ball<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    radius: f64,
) -> DMatrix<f64> {
    let v = uniform_in_ball(rng, rows * cols, radius);
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Random symmetric positive semi-definite matrix `L L^T / dim`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let l = gaussian_matrix(rng, dim, dim);
    let q = &l * l.transpose() / dim as f64;
    (&q + q.transpose()) * 0.5
}
