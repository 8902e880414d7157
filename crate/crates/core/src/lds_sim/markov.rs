use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, config, contract, Result};
use crate::linalg::spectral_norm;
use crate::lds_sim::SystemPath;

/// The `h` leading Markov blocks `G^[1..h]` at a time `t`; block `k` maps the
/// input applied `k` steps ago to the current output.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovOperator {
    pub t: i64,
    blocks: Vec<DMatrix<f64>>,
}

impl MarkovOperator {
    pub fn new(t: i64, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(config("history h must be at least 1"));
        }
        let shape = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(contract("Markov blocks must share one shape"));
        }
        Ok(Self { t, blocks })
    }

    pub fn zeros(t: i64, p: usize, m: usize, h: usize) -> Self {
        Self { t, blocks: vec![DMatrix::zeros(p, m); h.max(1)] }
    }

    pub fn h(&self) -> usize {
        self.blocks.len()
    }

    /// (p, m)
    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].shape()
    }

    /// Block `k`, 1-based.
    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k - 1]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.blocks
    }

    /// `[G^[1], ..., G^[h]]` as one `p x hm` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (p, m) = self.block_shape();
        let mut out = DMatrix::zeros(p, m * self.h());
        for (k, b) in self.blocks.iter().enumerate() {
            out.view_mut((0, k * m), (p, m)).copy_from(b);
        }
        out
    }

    pub fn from_stacked(t: i64, stacked: &DMatrix<f64>, h: usize) -> Result<Self> {
        if h == 0 || stacked.ncols() % h != 0 {
            return Err(contract("stacked Markov matrix width must be a multiple of h"));
        }
        let m = stacked.ncols() / h;
        let p = stacked.nrows();
        let blocks = (0..h).map(|k| stacked.view((0, k * m), (p, m)).into_owned()).collect();
        Ok(Self { t, blocks })
    }

    /// `sum_k G^[k] v_k` where `inputs[k-1] = v_k`.
    pub fn apply(&self, inputs: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_len("Markov input window", inputs.len(), self.h())?;
        let (p, m) = self.block_shape();
        let mut out = DVector::zeros(p);
        for (g, v) in self.blocks.iter().zip(inputs) {
            check_len("Markov input", v.len(), m)?;
            out.gemv(1.0, g, v, 1.0);
        }
        Ok(out)
    }

    /// Frobenius distance over all blocks.
    pub fn distance(&self, other: &MarkovOperator) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Membership in the set of operators with `|G^[k]|_2 <= kappa_a kappa_b (1-gamma)^(k-1)`.
    pub fn in_set(&self, kappa_a: f64, kappa_b: f64, gamma: f64, tol: f64) -> bool {
        self.blocks.iter().enumerate().all(|(i, g)| {
            spectral_norm(g) <= kappa_a * kappa_b * (1.0 - gamma).powi(i as i32) + tol
        })
    }
}

/// Markov operator of `sys` at time `t` with history `h`:
/// `G^[1] = C_t B_{t-1}`, `G^[k] = C_t A_{t-1} ... A_{t-k+1} B_{t-k}`.
pub fn markov_operator(sys: &SystemPath, t: i64, h: usize) -> Result<MarkovOperator> {
    if h < 1 {
        return Err(config("history h must be at least 1"));
    }
    let mut prefix = sys.c(t).clone();
    let mut blocks = Vec::with_capacity(h);
    for k in 1..=h as i64 {
        blocks.push(&prefix * sys.b(t - k));
        if (k as usize) < h {
            prefix = &prefix * sys.a(t - k);
        }
    }
    MarkovOperator::new(t, blocks)
}
