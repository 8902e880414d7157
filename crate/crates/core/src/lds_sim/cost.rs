use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, contract, Error, Result};
use crate::linalg::spectral_norm;

/// A user-supplied convex stage cost `c_t(y, u)`.
pub trait StageCost: Send + Sync + fmt::Debug {
    fn value(&self, t: usize, y: &DVector<f64>, u: &DVector<f64>) -> f64;

    /// `(grad_y, grad_u)`; `None` when the cost cannot provide one.
    fn gradient(
        &self,
        _t: usize,
        _y: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }

    fn is_convex(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub enum CostKind {
    /// `y' Q y + u' R u` with symmetric PSD `Q`, `R`.
    Quadratic { q: DMatrix<f64>, r: DMatrix<f64> },
    /// `alpha_t' [y; u]`, one coefficient vector per step.
    Linear { alpha: Vec<DVector<f64>> },
    Custom(Arc<dyn StageCost>),
}

/// Stage-cost family together with its regularity constants `(L, G)`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub kind: CostKind,
    /// Lipschitz constant `L` (the `|c(z) - c(z')| <= L R |z - z'|` form).
    pub lipschitz: f64,
    /// Gradient constant `G`.
    pub grad_bound: f64,
}

impl CostSpec {
    /// Quadratic cost; `L = G = 2 max(|Q|_2, |R|_2)`.
    pub fn quadratic(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(contract("Q and R must be square"));
        }
        let sym_tol = 1e-10 * (1.0 + q.norm() + r.norm());
        if (&q - q.transpose()).norm() > sym_tol || (&r - r.transpose()).norm() > sym_tol {
            return Err(contract("Q and R must be symmetric"));
        }
        let min_eig = |m: &DMatrix<f64>| {
            if m.is_empty() {
                0.0
            } else {
                m.clone().symmetric_eigenvalues().min()
            }
        };
        if min_eig(&q) < -sym_tol || min_eig(&r) < -sym_tol {
            return Err(contract("Q and R must be positive semi-definite"));
        }
        let scale = 2.0 * spectral_norm(&q).max(spectral_norm(&r));
        Ok(Self { kind: CostKind::Quadratic { q, r }, lipschitz: scale, grad_bound: scale })
    }

    /// Linear cost; `L = G = max_t |alpha_t|`.
    pub fn linear(alpha: Vec<DVector<f64>>) -> Self {
        let g = alpha.iter().map(|a| a.norm()).fold(0.0, f64::max);
        Self { kind: CostKind::Linear { alpha }, lipschitz: g, grad_bound: g }
    }

    pub fn custom(cost: Arc<dyn StageCost>, lipschitz: f64, grad_bound: f64) -> Self {
        Self { kind: CostKind::Custom(cost), lipschitz, grad_bound }
    }

    pub fn is_convex(&self) -> bool {
        match &self.kind {
            CostKind::Custom(c) => c.is_convex(),
            _ => true,
        }
    }

    fn alpha_at<'a>(alpha: &'a [DVector<f64>], t: usize) -> Result<&'a DVector<f64>> {
        if t == 0 || t > alpha.len() {
            return Err(contract(format!(
                "linear cost has {} coefficient vectors, asked for t = {t}",
                alpha.len()
            )));
        }
        Ok(&alpha[t - 1])
    }

    /// `c_t(y, u)`.
    pub fn value(&self, t: usize, y: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        match &self.kind {
            CostKind::Quadratic { q, r } => {
                check_len("cost output", y.len(), q.nrows())?;
                check_len("cost input", u.len(), r.nrows())?;
                Ok(y.dot(&(q * y)) + u.dot(&(r * u)))
            }
            CostKind::Linear { alpha } => {
                let a = Self::alpha_at(alpha, t)?;
                check_len("linear cost coefficient", a.len(), y.len() + u.len())?;
                let (ay, au) = (a.rows(0, y.len()), a.rows(y.len(), u.len()));
                Ok(ay.dot(y) + au.dot(u))
            }
            CostKind::Custom(c) => Ok(c.value(t, y, u)),
        }
    }

    /// `(grad_y c_t, grad_u c_t)` at `(y, u)`.
    pub fn gradient(
        &self,
        t: usize,
        y: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        match &self.kind {
            CostKind::Quadratic { q, r } => {
                check_len("cost output", y.len(), q.nrows())?;
                check_len("cost input", u.len(), r.nrows())?;
                Ok((q * y * 2.0, r * u * 2.0))
            }
            CostKind::Linear { alpha } => {
                let a = Self::alpha_at(alpha, t)?;
                check_len("linear cost coefficient", a.len(), y.len() + u.len())?;
                Ok((a.rows(0, y.len()).into_owned(), a.rows(y.len(), u.len()).into_owned()))
            }
            CostKind::Custom(c) => c.gradient(t, y, u).ok_or_else(|| {
                Error::UnsupportedCost("custom cost does not supply a gradient".into())
            }),
        }
    }
}
