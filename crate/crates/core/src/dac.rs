//! Disturbance-action policies: controls, truncated outputs and costs, their
//! analytic gradients, projection onto the policy class and the online
//! gradient step.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, config, contract, Result};
use crate::lds_sim::{CostSpec, MarkovOperator};

/// Disturbance gains `M^[1..h]` (each `m x q`) with per-block Frobenius cap `kappa_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DacParams {
    blocks: Vec<DMatrix<f64>>,
    kappa_m: f64,
}

impl DacParams {
    /// Checked constructor; every block must satisfy `|M^[k]|_F <= kappa_m`.
    pub fn new(blocks: Vec<DMatrix<f64>>, kappa_m: f64) -> Result<Self> {
        validate_blocks(&blocks)?;
        if !(kappa_m >= 0.0) {
            return Err(config("kappa_M must be nonnegative"));
        }
        let tol = 1e-12 * (1.0 + kappa_m);
        if blocks.iter().any(|b| b.norm() > kappa_m + tol) {
            return Err(contract("DAC block outside the policy class"));
        }
        Ok(Self { blocks, kappa_m })
    }

    pub fn zeros(m: usize, q: usize, h: usize, kappa_m: f64) -> Self {
        Self { blocks: vec![DMatrix::zeros(m, q); h.max(1)], kappa_m }
    }

    pub fn h(&self) -> usize {
        self.blocks.len()
    }

    pub fn kappa_m(&self) -> f64 {
        self.kappa_m
    }

    /// (m, q)
    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].shape()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Block `k`, 1-based.
    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k - 1]
    }

    /// Frobenius norm of all blocks stacked.
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &DacParams) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened parameter vector (block-major, column-major inside a block).
    pub fn to_vec(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.iter().copied()).collect()
    }

    /// Inverse of [`DacParams::to_vec`]; the result is projected onto the class.
    pub fn from_vec(values: &[f64], m: usize, q: usize, h: usize, kappa_m: f64) -> Result<Self> {
        check_len("flattened DAC parameters", values.len(), m * q * h)?;
        let blocks = values.chunks(m * q).map(|c| DMatrix::from_column_slice(m, q, c)).collect();
        Ok(project_dac(blocks, kappa_m))
    }
}

fn validate_blocks(blocks: &[DMatrix<f64>]) -> Result<()> {
    if blocks.is_empty() {
        return Err(config("history h must be at least 1"));
    }
    let shape = blocks[0].shape();
    if blocks.iter().any(|b| b.shape() != shape) {
        return Err(contract("DAC blocks must share one shape"));
    }
    Ok(())
}

/// Gradient with respect to each DAC block.
#[derive(Debug, Clone, PartialEq)]
pub struct DacGradient {
    pub blocks: Vec<DMatrix<f64>>,
}

impl DacGradient {
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Most-recent-first buffer of past vectors: `lag(1)` is the newest entry.
/// Lags before the start of the episode read as zero.
#[derive(Debug, Clone)]
pub struct LagBuffer {
    dim: usize,
    capacity: usize,
    items: VecDeque<DVector<f64>>,
    zero: DVector<f64>,
}

impl LagBuffer {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self { dim, capacity, items: VecDeque::with_capacity(capacity), zero: DVector::zeros(dim) }
    }

    pub fn push(&mut self, v: DVector<f64>) -> Result<()> {
        check_len("history entry", v.len(), self.dim)?;
        if self.items.len() == self.capacity {
            self.items.pop_back();
        }
        self.items.push_front(v);
        Ok(())
    }

    /// Entry pushed `k` pushes ago (1-based), or zero.
    pub fn lag(&self, k: usize) -> &DVector<f64> {
        if k == 0 {
            return &self.zero;
        }
        self.items.get(k - 1).unwrap_or(&self.zero)
    }

    /// `[lag(1), ..., lag(len)]`, zero-padded.
    pub fn window(&self, len: usize) -> Vec<DVector<f64>> {
        (1..=len).map(|k| self.lag(k).clone()).collect()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

/// `u = sum_k M^[k] w_{t-k}` with `w_hist[k-1] = w_{t-k}`.
pub fn dac_control(params: &DacParams, w_hist: &[DVector<f64>]) -> Result<DVector<f64>> {
    dac_control_at(params, w_hist, 0)
}

/// DAC input `offset` steps in the past: `sum_k M^[k] w_{t-offset-k}`.
fn dac_control_at(params: &DacParams, w_hist: &[DVector<f64>], offset: usize) -> Result<DVector<f64>> {
    let h = params.h();
    if w_hist.len() < h + offset {
        return Err(contract(format!(
            "disturbance history holds {} entries, need {}",
            w_hist.len(),
            h + offset
        )));
    }
    let (m, q) = params.block_shape();
    let mut u = DVector::zeros(m);
    for (k, block) in params.blocks.iter().enumerate() {
        let w = &w_hist[offset + k];
        check_len("disturbance", w.len(), q)?;
        u.gemv(1.0, block, w, 1.0);
    }
    Ok(u)
}

/// Euclidean projection onto the policy class: each block is radially
/// rescaled into the Frobenius ball of radius `kappa_m`. Blocks already within
/// one part in 1e12 of the ball are left untouched so that projection is
/// idempotent under rounding.
pub fn project_dac(blocks: Vec<DMatrix<f64>>, kappa_m: f64) -> DacParams {
    let kappa_m = kappa_m.max(0.0);
    let slack = kappa_m * (1.0 + 1e-12);
    let blocks = blocks
        .into_iter()
        .map(|b| {
            let norm = b.norm();
            if norm > slack {
                b * (kappa_m / norm)
            } else {
                b
            }
        })
        .collect();
    DacParams { blocks, kappa_m }
}

/// Everything a truncated cost at time `t` depends on besides the policy.
#[derive(Debug, Clone)]
pub struct TruncatedContext {
    /// Time index the context belongs to (selects `c_t`).
    pub t: usize,
    /// True `G_t` or an estimate.
    pub g: MarkovOperator,
    /// `s_t` or its estimate.
    pub s_hat: DVector<f64>,
    /// `w_hist[i-1] = w_{t-i}` for `i = 1..=2h`.
    pub w_hist: Vec<DVector<f64>>,
}

impl TruncatedContext {
    fn check(&self, h: usize) -> Result<()> {
        if self.g.h() != h {
            return Err(contract(format!(
                "Markov operator history {} does not match policy history {h}",
                self.g.h()
            )));
        }
        if self.w_hist.len() < 2 * h {
            return Err(contract("truncated context needs 2h past disturbances"));
        }
        check_len("natural output", self.s_hat.len(), self.g.block_shape().0)
    }
}

/// The `h + 1` policies that shape a truncated output.
#[derive(Debug, Clone, Copy)]
pub enum PolicyWindow<'a> {
    /// One policy replicated across the window.
    Fixed(&'a DacParams),
    /// `[M_t, M_{t-1}, ..., M_{t-h}]`.
    Sequence(&'a [DacParams]),
}

impl PolicyWindow<'_> {
    fn at(&self, lag: usize) -> &DacParams {
        match self {
            PolicyWindow::Fixed(m) => m,
            PolicyWindow::Sequence(ms) => &ms[lag],
        }
    }

    fn h(&self) -> Result<usize> {
        match self {
            PolicyWindow::Fixed(m) => Ok(m.h()),
            PolicyWindow::Sequence(ms) => {
                let h = ms.first().map(|m| m.h()).ok_or_else(|| contract("empty policy window"))?;
                if ms.len() != h + 1 {
                    return Err(contract(format!(
                        "policy window holds {} entries, expected h + 1 = {}",
                        ms.len(),
                        h + 1
                    )));
                }
                Ok(h)
            }
        }
    }
}

/// `y~ = s_hat + sum_k G^[k] u_{t-k}` with `u_window[k-1] = u_{t-k}`.
pub fn truncated_output(ctx: &TruncatedContext, u_window: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_len("natural output", ctx.s_hat.len(), ctx.g.block_shape().0)?;
    Ok(&ctx.s_hat + ctx.g.apply(u_window)?)
}

/// DAC inputs induced by a policy window: `(u_t, [u_{t-1}, ..., u_{t-h}])`.
pub fn window_inputs(
    ctx: &TruncatedContext,
    window: PolicyWindow<'_>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let h = window.h()?;
    ctx.check(h)?;
    let u_now = dac_control_at(window.at(0), &ctx.w_hist, 0)?;
    let past = (1..=h)
        .map(|k| dac_control_at(window.at(k), &ctx.w_hist, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((u_now, past))
}

/// `c_t(y~_t, u_t)` where every input inside `y~_t` and `u_t` itself is the DAC
/// input induced by the matching entry of the policy window.
pub fn truncated_cost(ctx: &TruncatedContext, cost: &CostSpec, window: PolicyWindow<'_>) -> Result<f64> {
    let (u_now, past) = window_inputs(ctx, window)?;
    let y = truncated_output(ctx, &past)?;
    cost.value(ctx.t, &y, &u_now)
}

/// Gradient of `F_t(M) = c_t(y~_t(M), u_t(M))` with one `M` replicated across
/// the window:
/// `dF/dM^[k] = sum_i G^[i]' grad_y w_{t-i-k}' + grad_u w_{t-k}'`.
pub fn grad_truncated_cost(
    params: &DacParams,
    ctx: &TruncatedContext,
    cost: &CostSpec,
) -> Result<DacGradient> {
    let h = params.h();
    let (u_now, past) = window_inputs(ctx, PolicyWindow::Fixed(params))?;
    let y = truncated_output(ctx, &past)?;
    let (grad_y, grad_u) = cost.gradient(ctx.t, &y, &u_now)?;
    // back-propagate grad_y through each Markov block once
    let pulled: Vec<DVector<f64>> = ctx.g.blocks().iter().map(|g| g.tr_mul(&grad_y)).collect();
    let (m, q) = params.block_shape();
    let mut blocks = Vec::with_capacity(h);
    for k in 1..=h {
        let mut gk = &grad_u * ctx.w_hist[k - 1].transpose();
        for i in 1..=h {
            gk.ger(1.0, &pulled[i - 1], &ctx.w_hist[i + k - 1], 1.0);
        }
        debug_assert_eq!(gk.shape(), (m, q));
        blocks.push(gk);
    }
    Ok(DacGradient { blocks })
}

/// `M_{t+1} = Proj(M_t - eta * grad)`.
pub fn ogd_step(params: &DacParams, grad: &DacGradient, eta: f64) -> Result<DacParams> {
    if !(eta >= 0.0) {
        return Err(config("step size must be nonnegative"));
    }
    check_len("gradient blocks", grad.blocks.len(), params.h())?;
    let blocks = params
        .blocks
        .iter()
        .zip(&grad.blocks)
        .map(|(m, g)| m - g * eta)
        .collect();
    Ok(project_dac(blocks, params.kappa_m))
}

/// Problem constants feeding the closed-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Cost Lipschitz constant `L`.
    pub lipschitz: f64,
    /// Cost gradient constant `G`.
    pub grad_bound: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub kappa_w: f64,
    pub kappa_e: f64,
    pub kappa_m: f64,
    pub h: usize,
    pub gamma: f64,
    pub n: usize,
    pub m: usize,
}

/// Constants of the online-optimization-with-memory reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcoConstants {
    /// Memory-Lipschitz constant.
    pub l_f: f64,
    /// Gradient bound.
    pub g_f: f64,
    /// Diameter of the policy class.
    pub diameter: f64,
    /// Output/input magnitude bound.
    pub d_tilde: f64,
}

pub fn compute_oco_constants(c: &ProblemConstants) -> OcoConstants {
    let h = c.h as f64;
    let d_tilde = (c.kappa_m * c.kappa_w * h
        + c.kappa_a * c.kappa_w / c.gamma
        + c.kappa_e
        + c.kappa_a * c.kappa_b * c.kappa_m * c.kappa_w * h / c.gamma)
        .max(1.0);
    let l_f = c.lipschitz * d_tilde * (c.kappa_a * c.kappa_b * c.kappa_w * h.sqrt() + c.kappa_w * h.sqrt());
    let g_f = c.grad_bound
        * d_tilde
        * h
        * (c.n * c.m) as f64
        * (c.kappa_a * c.kappa_b * c.kappa_w / c.gamma + c.kappa_w);
    let diameter = 2.0 * c.kappa_m * h.sqrt();
    OcoConstants { l_f, g_f, diameter, d_tilde }
}

/// `h = ceil(log T / log(1 / (1 - gamma)))`, at least 1.
pub fn theoretical_history(horizon: usize, gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) || horizon < 1 {
        return Err(config("history rule needs gamma in (0, 1) and T >= 1"));
    }
    let h = ((horizon as f64).ln() / (1.0 / (1.0 - gamma)).ln()).ceil();
    Ok((h as usize).max(1))
}

/// `eta = D / sqrt(G_f (G_f + L_f h^2) T)`.
pub fn theoretical_step_size(oco: &OcoConstants, h: usize, horizon: usize) -> f64 {
    let h2 = (h * h) as f64;
    oco.diameter / (oco.g_f * (oco.g_f + oco.l_f * h2) * horizon as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_psd, uniform_in_ball};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, m: usize, q: usize, h: usize, kappa: f64) -> DacParams {
        let blocks = (0..h).map(|_| gaussian_matrix(rng, m, q)).collect();
        project_dac(blocks, kappa)
    }

    fn random_ctx(rng: &mut ChaCha8Rng, p: usize, m: usize, q: usize, h: usize) -> TruncatedContext {
        let blocks = (0..h).map(|_| gaussian_matrix(rng, p, m)).collect();
        TruncatedContext {
            t: 1,
            g: MarkovOperator::new(1, blocks).unwrap(),
            s_hat: gaussian_vector(rng, p),
            w_hist: (0..2 * h).map(|_| gaussian_vector(rng, q)).collect(),
        }
    }

    #[test]
    fn control_zero_gain_and_identity() {
        let w = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])];
        let zero = DacParams::zeros(2, 2, 2, 1.0);
        assert_eq!(dac_control(&zero, &w).unwrap(), DVector::zeros(2));
        let ident = DacParams::new(vec![DMatrix::identity(2, 2)], 2.0).unwrap();
        assert_eq!(dac_control(&ident, &w).unwrap(), w[0]);
    }

    #[test]
    fn control_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = random_params(&mut rng, 2, 3, 3, 5.0);
        let w: Vec<_> = (0..3).map(|_| gaussian_vector(&mut rng, 3)).collect();
        let u = dac_control(&params, &w).unwrap();
        for i in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for j in 0..3 {
                    acc += params.blocks()[k][(i, j)] * w[k][j];
                }
            }
            assert!((u[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn control_rejects_short_history() {
        let params = DacParams::zeros(1, 1, 3, 1.0);
        assert!(dac_control(&params, &[DVector::zeros(1)]).is_err());
    }

    #[test]
    fn projection_cases() {
        let inside = vec![DMatrix::from_element(2, 2, 0.1)];
        assert_eq!(project_dac(inside.clone(), 1.0).blocks(), &inside[..]);
        let big = DMatrix::from_row_slice(1, 2, &[1.2, 1.6]);
        let p = project_dac(vec![big.clone()], 1.0);
        assert_eq!(p.blocks()[0], big / 2.0);
        assert!((p.blocks()[0].norm() - 1.0).abs() < 1e-15);
    }

    /// Projection oracle: bisection on the multiplier of the norm constraint,
    /// `X(mu) = M / (1 + mu)`, plus random feasible points that must not be closer.
    #[test]
    fn projection_matches_multiplier_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let kappa = 0.5;
            let blocks: Vec<_> = (0..2).map(|_| gaussian_matrix(&mut rng, 2, 2)).collect();
            let proj = project_dac(blocks.clone(), kappa);
            for (orig, got) in blocks.iter().zip(proj.blocks()) {
                let oracle = if orig.norm() <= kappa {
                    orig.clone()
                } else {
                    let (mut lo, mut hi) = (0.0f64, 1e6f64);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if (orig / (1.0 + mid)).norm() > kappa {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    orig / (1.0 + hi)
                };
                assert!((got - &oracle).norm() < 1e-9);
                let best = (got - orig).norm();
                for _ in 0..200 {
                    let cand = DMatrix::from_column_slice(2, 2, uniform_in_ball(&mut rng, 4, kappa).as_slice());
                    assert!((cand - orig).norm() >= best - 1e-12);
                }
            }
        }
    }

    #[test]
    fn truncated_output_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ctx = random_ctx(&mut rng, 2, 2, 2, 3);
        let zeros = vec![DVector::zeros(2); 3];
        assert_eq!(truncated_output(&ctx, &zeros).unwrap(), ctx.s_hat);

        ctx.g = MarkovOperator::new(
            1,
            vec![DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)],
        )
        .unwrap();
        let v = DVector::from_vec(vec![0.3, -0.7]);
        let mut u = zeros.clone();
        u[0] = v.clone();
        assert_eq!(truncated_output(&ctx, &u).unwrap(), &ctx.s_hat + v);
    }

    #[test]
    fn truncated_output_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ctx = random_ctx(&mut rng, 3, 2, 2, 4);
        let u: Vec<_> = (0..4).map(|_| gaussian_vector(&mut rng, 2)).collect();
        let y = truncated_output(&ctx, &u).unwrap();
        for i in 0..3 {
            let mut acc = ctx.s_hat[i];
            for k in 0..4 {
                for j in 0..2 {
                    acc += ctx.g.blocks()[k][(i, j)] * u[k][j];
                }
            }
            assert!((y[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_cost_zero_and_linear() {
        let h = 2;
        let ctx = TruncatedContext {
            t: 1,
            g: MarkovOperator::zeros(1, 2, 1, h),
            s_hat: DVector::zeros(2),
            w_hist: vec![DVector::zeros(1); 2 * h],
        };
        let quad = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let params = DacParams::zeros(1, 1, h, 1.0);
        assert_eq!(truncated_cost(&ctx, &quad, PolicyWindow::Fixed(&params)).unwrap(), 0.0);

        let alpha = DVector::from_vec(vec![2.0, -1.0, 0.5]);
        let lin = CostSpec::linear(vec![alpha.clone()]);
        let ctx = TruncatedContext { s_hat: DVector::from_vec(vec![1.0, 3.0]), ..ctx };
        // u = 0 and y~ = s_hat since G = 0
        assert_eq!(truncated_cost(&ctx, &lin, PolicyWindow::Fixed(&params)).unwrap(), -1.0);
    }

    #[test]
    fn truncated_cost_matches_bilinear_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p, m, q, h) = (3, 2, 2, 2);
        let ctx = random_ctx(&mut rng, p, m, q, h);
        let qm = random_psd(&mut rng, p);
        let rm = random_psd(&mut rng, m);
        let cost = CostSpec::quadratic(qm.clone(), rm.clone()).unwrap();
        let window: Vec<_> = (0..=h).map(|_| random_params(&mut rng, m, q, h, 2.0)).collect();
        let got = truncated_cost(&ctx, &cost, PolicyWindow::Sequence(&window)).unwrap();

        let u_of = |lag: usize| {
            let mut u = vec![0.0; m];
            for k in 0..h {
                for i in 0..m {
                    for j in 0..q {
                        u[i] += window[lag].blocks()[k][(i, j)] * ctx.w_hist[lag + k][j];
                    }
                }
            }
            u
        };
        let mut y = ctx.s_hat.iter().copied().collect::<Vec<_>>();
        for k in 1..=h {
            let uk = u_of(k);
            for i in 0..p {
                for j in 0..m {
                    y[i] += ctx.g.blocks()[k - 1][(i, j)] * uk[j];
                }
            }
        }
        let u0 = u_of(0);
        let mut want = 0.0;
        for i in 0..p {
            for j in 0..p {
                want += y[i] * qm[(i, j)] * y[j];
            }
        }
        for i in 0..m {
            for j in 0..m {
                want += u0[i] * rm[(i, j)] * u0[j];
            }
        }
        assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn gradient_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ctx = random_ctx(&mut rng, 2, 2, 2, 2);
        let params = random_params(&mut rng, 2, 2, 2, 1.0);
        let lin = CostSpec::linear(vec![DVector::zeros(4)]);
        let g = grad_truncated_cost(&params, &ctx, &lin).unwrap();
        assert_eq!(g.norm(), 0.0);

        ctx.w_hist = vec![DVector::zeros(2); 4];
        let quad = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(grad_truncated_cost(&params, &ctx, &quad).unwrap().norm(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..20 {
            let (p, m, q, h) = (3, 2, 2, 1 + trial % 3);
            let ctx = random_ctx(&mut rng, p, m, q, h);
            let cost = if trial % 2 == 0 {
                CostSpec::quadratic(random_psd(&mut rng, p), random_psd(&mut rng, m)).unwrap()
            } else {
                CostSpec::linear(vec![gaussian_vector(&mut rng, p + m)])
            };
            let params = random_params(&mut rng, m, q, h, 1e6);
            let grad = grad_truncated_cost(&params, &ctx, &cost).unwrap();
            let eps = 1e-5;
            for k in 0..h {
                for idx in 0..m * q {
                    let bump = |d: f64| {
                        let mut blocks = params.blocks().to_vec();
                        blocks[k][idx] += d;
                        let pm = DacParams::new(blocks, 1e6).unwrap();
                        truncated_cost(&ctx, &cost, PolicyWindow::Fixed(&pm)).unwrap()
                    };
                    let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    let an = grad.blocks[k][idx];
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn custom_cost_without_gradient_is_rejected() {
        #[derive(Debug)]
        struct NoGrad;
        impl crate::lds_sim::StageCost for NoGrad {
            fn value(&self, _: usize, y: &DVector<f64>, _: &DVector<f64>) -> f64 {
                y.norm()
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = random_ctx(&mut rng, 1, 1, 1, 1);
        let cost = CostSpec::custom(std::sync::Arc::new(NoGrad), 1.0, 1.0);
        let params = DacParams::zeros(1, 1, 1, 1.0);
        assert!(matches!(
            grad_truncated_cost(&params, &ctx, &cost),
            Err(crate::Error::UnsupportedCost(_))
        ));
    }

    #[test]
    fn ogd_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng, 2, 2, 2, 1.0);
        let zero = DacGradient { blocks: vec![DMatrix::zeros(2, 2); 2] };
        assert_eq!(ogd_step(&params, &zero, 0.7).unwrap(), params);
        let grad = DacGradient { blocks: (0..2).map(|_| gaussian_matrix(&mut rng, 2, 2)).collect() };
        assert_eq!(ogd_step(&params, &grad, 0.0).unwrap(), params);
        let big = DacGradient { blocks: vec![DMatrix::from_element(2, 2, -1e3); 2] };
        let next = ogd_step(&params, &big, 1.0).unwrap();
        for b in next.blocks() {
            assert!(b.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn oco_constants_hand_evaluation() {
        let c = ProblemConstants {
            lipschitz: 1.0,
            grad_bound: 1.0,
            kappa_a: 1.0,
            kappa_b: 1.0,
            kappa_w: 1.0,
            kappa_e: 1.0,
            kappa_m: 1.0,
            h: 1,
            gamma: 0.5,
            n: 1,
            m: 1,
        };
        // d~ = 1 + 2 + 1 + 2, L_f = 6 * (1 + 1), G_f = 6 * (2 + 1), D = 2
        let k = compute_oco_constants(&c);
        assert_eq!(k.d_tilde, 6.0);
        assert_eq!(k.l_f, 12.0);
        assert_eq!(k.g_f, 18.0);
        assert_eq!(k.diameter, 2.0);

        let zero_w = compute_oco_constants(&ProblemConstants { kappa_w: 0.0, ..c });
        assert_eq!((zero_w.l_f, zero_w.g_f), (0.0, 0.0));
        let double_l = compute_oco_constants(&ProblemConstants { lipschitz: 2.0, ..c });
        assert_eq!(double_l.l_f, 2.0 * k.l_f);
    }

    #[test]
    fn theoretical_rules() {
        // ln(1024) / ln(2) = 10
        assert_eq!(theoretical_history(1024, 0.5).unwrap(), 10);
        assert_eq!(theoretical_history(1, 0.5).unwrap(), 1);
        assert!(theoretical_history(10, 1.0).is_err());
        let oco = OcoConstants { l_f: 2.0, g_f: 2.0, diameter: 4.0, d_tilde: 1.0 };
        // 4 / sqrt(2 * (2 + 2 * 4) * 5) = 4 / 10
        assert!((theoretical_step_size(&oco, 2, 5) - 0.4).abs() < 1e-15);
    }

    /// Random instance satisfying the class bounds: G in the decaying set,
    /// |w| <= kappa_w, |s| <= kappa_a kappa_w / gamma + kappa_e.
    fn bounded_instance(
        rng: &mut ChaCha8Rng,
        dims: (usize, usize, usize),
        h: usize,
        consts: &ProblemConstants,
    ) -> TruncatedContext {
        let (p, m, q) = dims;
        let blocks = (0..h)
            .map(|k| {
                let cap = consts.kappa_a * consts.kappa_b * (1.0 - consts.gamma).powi(k as i32);
                crate::linalg::with_spectral_norm(gaussian_matrix(rng, p, m), cap * rng.random::<f64>())
            })
            .collect();
        let s_cap = consts.kappa_a * consts.kappa_w / consts.gamma + consts.kappa_e;
        TruncatedContext {
            t: 1,
            g: MarkovOperator::new(1, blocks).unwrap(),
            s_hat: uniform_in_ball(rng, p, s_cap),
            w_hist: (0..2 * h).map(|_| uniform_in_ball(rng, q, consts.kappa_w)).collect(),
        }
    }

    #[test]
    fn memory_lipschitz_and_gradient_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (p, m, q, h) = (2, 2, 2, 3);
        for _ in 0..100 {
            let qm = random_psd(&mut rng, p);
            let rm = random_psd(&mut rng, m);
            let cost = CostSpec::quadratic(qm, rm).unwrap();
            let consts = ProblemConstants {
                lipschitz: cost.lipschitz,
                grad_bound: cost.grad_bound,
                kappa_a: 1.0,
                kappa_b: 0.8,
                kappa_w: 0.7,
                kappa_e: 0.0,
                kappa_m: 0.6,
                h,
                gamma: 0.4,
                n: 2,
                m,
            };
            let oco = compute_oco_constants(&consts);
            let ctx = bounded_instance(&mut rng, (p, m, q), h, &consts);
            let window: Vec<_> = (0..=h).map(|_| random_params(&mut rng, m, q, h, consts.kappa_m)).collect();
            let lag = rng.random_range(0..=h);
            let mut other = window.clone();
            other[lag] = random_params(&mut rng, m, q, h, consts.kappa_m);
            let f1 = truncated_cost(&ctx, &cost, PolicyWindow::Sequence(&window)).unwrap();
            let f2 = truncated_cost(&ctx, &cost, PolicyWindow::Sequence(&other)).unwrap();
            assert!((f1 - f2).abs() <= oco.l_f * window[lag].distance(&other[lag]) + 1e-12);

            let g = grad_truncated_cost(&window[0], &ctx, &cost).unwrap();
            assert!(g.norm() <= oco.g_f);
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-3.0f64..3.0, 8),
            b in proptest::collection::vec(-3.0f64..3.0, 8),
            kappa in 0.0f64..2.0,
        ) {
            let pa = DacParams::from_vec(&a, 2, 2, 2, kappa).unwrap();
            let pb = DacParams::from_vec(&b, 2, 2, 2, kappa).unwrap();
            let again = project_dac(pa.blocks().to_vec(), kappa);
            prop_assert_eq!(&again, &pa);
            let raw_dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(pa.distance(&pb) <= raw_dist + 1e-12);
        }

        #[test]
        fn control_is_linear_in_gains(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
            w in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let to = |v: &[f64]| DacParams::from_vec(v, 2, 3, 2, 1e9).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let hist = vec![DVector::from_column_slice(&w[..3]), DVector::from_column_slice(&w[3..])];
            let lhs = dac_control(&to(&sum), &hist).unwrap();
            let rhs = dac_control(&to(&a), &hist).unwrap() + dac_control(&to(&b), &hist).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn lag_buffer_pads_with_zeros() {
        let mut buf = LagBuffer::new(1, 2);
        buf.push(DVector::from_vec(vec![1.0])).unwrap();
        buf.push(DVector::from_vec(vec![2.0])).unwrap();
        buf.push(DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(buf.lag(1)[0], 3.0);
        assert_eq!(buf.lag(2)[0], 2.0);
        assert_eq!(buf.lag(3)[0], 0.0);
        assert!(buf.push(DVector::zeros(2)).is_err());
    }
}
