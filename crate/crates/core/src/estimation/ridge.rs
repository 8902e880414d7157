use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, config, contract, Error, Result};
use crate::lds_sim::{MarkovOperator, Stability};
use crate::linalg::clip_spectral;

/// Sufficient statistics of a ridge regression `y ~ G phi` with `phi` the
/// stacked past perturbations.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    h: usize,
    yx: DMatrix<f64>,
    xx: DMatrix<f64>,
    rows: usize,
}

impl RidgeAccumulator {
    pub fn new(p: usize, m: usize, h: usize) -> Self {
        Self { h, yx: DMatrix::zeros(p, h * m), xx: DMatrix::zeros(h * m, h * m), rows: 0 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn add(&mut self, y: &DVector<f64>, phi: &DVector<f64>) -> Result<()> {
        check_len("regression target", y.len(), self.yx.nrows())?;
        check_len("regressor", phi.len(), self.xx.nrows())?;
        self.yx.ger(1.0, y, phi, 1.0);
        self.xx.ger(1.0, phi, phi, 1.0);
        self.rows += 1;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.yx.fill(0.0);
        self.xx.fill(0.0);
        self.rows = 0;
    }

    /// `(sum y phi') (sum phi phi' + lambda I)^{-1}` split into Markov blocks.
    pub fn solve(&self, lambda: f64, t: i64) -> Result<MarkovOperator> {
        if self.rows == 0 {
            return Err(contract("ridge regression needs at least one row"));
        }
        if !(lambda >= 0.0) {
            return Err(config("ridge weight must be nonnegative"));
        }
        let dim = self.xx.nrows();
        let gram = &self.xx + DMatrix::identity(dim, dim) * lambda;
        let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
        let chol = gram.cholesky().ok_or_else(|| {
            Error::Singular(format!(
                "regressor Gram matrix is not positive definite ({} rows, lambda = {lambda})",
                self.rows
            ))
        })?;
        let l = chol.l_dirty();
        if (0..dim).any(|i| l[(i, i)] * l[(i, i)] <= 1e-14 * scale) {
            return Err(Error::Singular(format!(
                "regressor Gram matrix is numerically rank deficient ({} rows, lambda = {lambda})",
                self.rows
            )));
        }
        // G = YX' (XX' + lambda I)^{-1}  <=>  (XX' + lambda I) G' = XY'
        let g = chol.solve(&self.yx.transpose()).transpose();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("ridge solve produced non-finite values".into()));
        }
        MarkovOperator::from_stacked(t, &g, self.h)
    }
}

/// One estimation period with its buffered regression rows.
#[derive(Debug, Clone)]
pub struct EstimationWindow {
    /// Period index, 1-based.
    pub k: usize,
    pub t_s: usize,
    pub t_e: usize,
    /// `(y_p, stack(du_{p-1}, ..., du_{p-h}))` for each `p` in the regression range.
    pub rows: Vec<(DVector<f64>, DVector<f64>)>,
}

/// Ridge estimate of the Markov operator from a window's rows (unprojected).
pub fn ls_estimate(window: &EstimationWindow, h: usize, lambda: f64) -> Result<MarkovOperator> {
    let (y0, phi0) = window
        .rows
        .first()
        .ok_or_else(|| contract(format!("estimation window {} has no regression rows", window.k)))?;
    if h == 0 || phi0.len() % h != 0 {
        return Err(contract("regressor length must be a multiple of h"));
    }
    let mut acc = RidgeAccumulator::new(y0.len(), phi0.len() / h, h);
    for (y, phi) in &window.rows {
        acc.add(y, phi)?;
    }
    acc.solve(lambda, window.t_e as i64)
}

/// Clips every block to the decay envelope `kappa_a kappa_b (1-gamma)^(k-1)`.
pub fn project_g(g_hat: &MarkovOperator, bounds: &Stability) -> MarkovOperator {
    let mut out = g_hat.clone();
    for (i, block) in out.blocks_mut().iter_mut().enumerate() {
        let cap = bounds.kappa_a * bounds.kappa_b * (1.0 - bounds.gamma).powi(i as i32);
        *block = clip_spectral(block, cap);
    }
    out
}
