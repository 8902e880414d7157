//! Best fixed disturbance-action policy in hindsight and regret bookkeeping.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dac::{dac_control, project_dac, DacParams, LagBuffer};
use crate::error::{check_len, config, contract, Error, Result};
use crate::lds_sim::{rollout, Controller, CostKind, CostSpec, DisturbanceRealization, EpisodeTrace, SystemPath};
use crate::linalg::uniform_in_frobenius_ball;

/// Applies one fixed set of DAC gains for the whole episode, without exploration.
#[derive(Debug, Clone)]
pub struct FixedDac {
    params: DacParams,
    w_hist: LagBuffer,
}

impl FixedDac {
    pub fn new(params: DacParams) -> Self {
        let (_, q) = params.block_shape();
        let h = params.h();
        Self { params, w_hist: LagBuffer::new(q, h) }
    }
}

impl Controller for FixedDac {
    fn act(&mut self, _t: usize, _y: &DVector<f64>) -> Result<DVector<f64>> {
        dac_control(&self.params, &self.w_hist.window(self.params.h()))
    }

    fn observe(&mut self, _t: usize, w: &DVector<f64>, _cost: &CostSpec) -> Result<()> {
        self.w_hist.push(w.clone())
    }
}

/// Closed-loop trace of the fixed policy `params` from `x_1 = 0`.
pub fn counterfactual_trace(
    params: &DacParams,
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    cost: &CostSpec,
) -> Result<EpisodeTrace> {
    let (n, m, _, q) = sys.dims();
    if params.block_shape() != (m, q) {
        return Err(contract("DAC gains do not match the system's input and disturbance dimensions"));
    }
    rollout(sys, dist, &mut FixedDac::new(params.clone()), cost, &DVector::zeros(n))
}

/// Per-step costs of the fixed policy `params`.
pub fn counterfactual_rollout(
    params: &DacParams,
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    cost: &CostSpec,
) -> Result<Vec<f64>> {
    Ok(counterfactual_trace(params, sys, dist, cost)?.costs())
}

/// `y_t(theta) = y0_t + Y_t theta`, `u_t(theta) = U_t theta` with `theta` the
/// flattened gains (see [`DacParams::to_vec`]).
#[derive(Debug, Clone)]
pub struct AffineSensitivity {
    pub y0: Vec<DVector<f64>>,
    pub y_jac: Vec<DMatrix<f64>>,
    pub u_jac: Vec<DMatrix<f64>>,
    dims: (usize, usize, usize),
}

impl AffineSensitivity {
    pub fn new(sys: &SystemPath, dist: &DisturbanceRealization, h: usize) -> Result<Self> {
        if h < 1 {
            return Err(config("history h must be at least 1"));
        }
        let (n, m, _, q) = sys.dims();
        let d = h * m * q;
        let horizon = sys.horizon();
        let mut x0 = DVector::zeros(n);
        let mut xj = DMatrix::zeros(n, d);
        let (mut y0, mut y_jac, mut u_jac) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon), Vec::with_capacity(horizon));
        for t in 1..=horizon {
            let ti = t as i64;
            let w = dist.w(ti).ok_or_else(|| contract(format!("no disturbance at t = {t}")))?;
            let e = dist.e(ti).ok_or_else(|| contract(format!("no noise at t = {t}")))?;
            // u_i = sum_k sum_j M^[k]_{ij} w_{t-k, j}; column-major flattening per block
            let mut uj = DMatrix::zeros(m, d);
            for k in 1..=h {
                if t > k {
                    let wk = dist.w(ti - k as i64).expect("inside horizon");
                    for j in 0..q {
                        for i in 0..m {
                            uj[(i, (k - 1) * m * q + j * m + i)] = wk[j];
                        }
                    }
                }
            }
            y0.push(sys.c(ti) * &x0 + e);
            y_jac.push(sys.c(ti) * &xj);
            x0 = sys.a(ti) * &x0 + sys.bw(ti) * w;
            xj = sys.a(ti) * &xj + sys.b(ti) * &uj;
            u_jac.push(uj);
        }
        Ok(Self { y0, y_jac, u_jac, dims: (m, q, h) })
    }

    pub fn horizon(&self) -> usize {
        self.y0.len()
    }

    pub fn dim(&self) -> usize {
        let (m, q, h) = self.dims;
        m * q * h
    }

    pub fn output(&self, t: usize, theta: &DVector<f64>) -> DVector<f64> {
        &self.y0[t - 1] + &self.y_jac[t - 1] * theta
    }

    pub fn input(&self, t: usize, theta: &DVector<f64>) -> DVector<f64> {
        &self.u_jac[t - 1] * theta
    }
}

/// Total counterfactual cost as a function of the flattened gains.
#[derive(Debug, Clone)]
pub enum HindsightObjective {
    /// `theta' H theta + 2 g' theta + c`.
    Quadratic { hess: DMatrix<f64>, lin: DVector<f64>, constant: f64 },
    General { sens: AffineSensitivity, cost: CostSpec },
}

impl HindsightObjective {
    pub fn new(sys: &SystemPath, dist: &DisturbanceRealization, cost: &CostSpec, h: usize) -> Result<Self> {
        if !cost.is_convex() {
            return Err(Error::UnsupportedCost("comparator search needs a convex cost".into()));
        }
        let sens = AffineSensitivity::new(sys, dist, h)?;
        if let CostKind::Quadratic { q, r } = &cost.kind {
            let d = sens.dim();
            let mut hess = DMatrix::zeros(d, d);
            let mut lin = DVector::zeros(d);
            let mut constant = 0.0;
            for t in 0..sens.horizon() {
                let qy = q * &sens.y_jac[t];
                hess += sens.y_jac[t].transpose() * &qy + sens.u_jac[t].transpose() * r * &sens.u_jac[t];
                let qy0 = q * &sens.y0[t];
                lin += sens.y_jac[t].tr_mul(&qy0);
                constant += sens.y0[t].dot(&qy0);
            }
            hess = (&hess + hess.transpose()) * 0.5;
            return Ok(Self::Quadratic { hess, lin, constant });
        }
        Ok(Self::General { sens, cost: cost.clone() })
    }

    pub fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        match self {
            Self::Quadratic { hess, lin, constant } => {
                Ok(theta.dot(&(hess * theta)) + 2.0 * lin.dot(theta) + constant)
            }
            Self::General { sens, cost } => {
                let mut total = 0.0;
                for t in 1..=sens.horizon() {
                    total += cost.value(t, &sens.output(t, theta), &sens.input(t, theta))?;
                }
                Ok(total)
            }
        }
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Quadratic { hess, lin, .. } => Ok((hess * theta + lin) * 2.0),
            Self::General { sens, cost } => {
                let mut g = DVector::zeros(theta.len());
                for t in 1..=sens.horizon() {
                    let (gy, gu) = cost.gradient(t, &sens.output(t, theta), &sens.input(t, theta))?;
                    g += sens.y_jac[t - 1].tr_mul(&gy) + sens.u_jac[t - 1].tr_mul(&gu);
                }
                Ok(g)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Stop once the projected-gradient norm of the per-step average objective falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Number of starting points including the origin.
    pub starts: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 10_000, starts: 5, seed: 0 }
    }
}

/// Result of the hindsight search.
#[derive(Debug, Clone)]
pub struct Comparator {
    pub m_star: DacParams,
    /// Per-step costs of `m_star` replayed on the episode.
    pub costs: Vec<f64>,
    pub objective: f64,
    /// Best objective reached from each starting point, with its start value.
    pub starts: Vec<(f64, f64)>,
    pub converged: bool,
    /// Projected-gradient norm at `m_star` (per-step average objective).
    pub pg_norm: f64,
}

struct Shape {
    m: usize,
    q: usize,
    h: usize,
    kappa_m: f64,
}

impl Shape {
    fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        let blocks = theta
            .as_slice()
            .chunks(self.m * self.q)
            .map(|c| DMatrix::from_column_slice(self.m, self.q, c))
            .collect();
        DVector::from_vec(project_dac(blocks, self.kappa_m).to_vec())
    }

    fn params(&self, theta: &DVector<f64>) -> Result<DacParams> {
        DacParams::from_vec(theta.as_slice(), self.m, self.q, self.h, self.kappa_m)
    }
}

/// Projected gradient descent with backtracking on `f / scale`.
fn pgd(
    obj: &HindsightObjective,
    shape: &Shape,
    start: DVector<f64>,
    scale: f64,
    params: &SolverParams,
) -> Result<(DVector<f64>, f64, bool, f64)> {
    let f = |th: &DVector<f64>| obj.value(th).map(|v| v / scale);
    let mut theta = shape.project(&start);
    let mut val = f(&theta)?;
    let mut step = 1.0;
    let mut pg_norm = f64::INFINITY;
    for _ in 0..params.max_iters {
        let grad = obj.gradient(&theta)? / scale;
        pg_norm = (&theta - shape.project(&(&theta - &grad))).norm();
        if pg_norm < params.tol {
            return Ok((theta, val, true, pg_norm));
        }
        step *= 2.0;
        loop {
            let cand = shape.project(&(&theta - &grad * step));
            let diff = &cand - &theta;
            let cand_val = f(&cand)?;
            if cand_val <= val + grad.dot(&diff) + diff.norm_squared() / (2.0 * step) {
                theta = cand;
                val = cand_val;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Ok((theta, val, false, pg_norm));
            }
        }
    }
    Ok((theta, val, false, pg_norm))
}

/// Minimizes the total counterfactual cost over the DAC class with `h` blocks
/// and per-block cap `kappa_m`. Starts from zero and `starts - 1` random
/// points of the class; ties go to the smallest-norm gains.
pub fn best_dac_in_hindsight(
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    cost: &CostSpec,
    h: usize,
    kappa_m: f64,
    params: &SolverParams,
) -> Result<Comparator> {
    let (_, m, _, q) = sys.dims();
    let obj = HindsightObjective::new(sys, dist, cost, h)?;
    let shape = Shape { m, q, h, kappa_m: kappa_m.max(0.0) };
    let scale = sys.horizon() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(DVector<f64>, f64, bool, f64)> = None;
    let mut starts = Vec::with_capacity(params.starts.max(1));
    for s in 0..params.starts.max(1) {
        let start = if s == 0 {
            DVector::zeros(h * m * q)
        } else {
            let blocks: Vec<f64> = (0..h)
                .flat_map(|_| uniform_in_frobenius_ball(&mut rng, m, q, shape.kappa_m).iter().copied().collect::<Vec<_>>())
                .collect();
            DVector::from_vec(blocks)
        };
        let start_val = obj.value(&shape.project(&start))?;
        let (theta, val, conv, pg) = pgd(&obj, &shape, start, scale, params)?;
        starts.push((start_val, val * scale));
        let better = match &best {
            None => true,
            Some((b_theta, b_val, _, _)) => {
                let tie = (val - b_val).abs() <= 1e-12 * b_val.abs().max(1.0);
                if tie {
                    theta.norm() < b_theta.norm()
                } else {
                    val < *b_val
                }
            }
        };
        if better {
            best = Some((theta, val, conv, pg));
        }
    }
    let (theta, _, converged, pg_norm) = best.expect("at least one start");
    let m_star = shape.params(&theta)?;
    let costs = counterfactual_rollout(&m_star, sys, dist, cost)?;
    let objective = obj.value(&theta)?;
    Ok(Comparator { m_star, costs, objective, starts, converged, pg_norm })
}

#[derive(Debug, Clone)]
pub struct RegretSeries {
    pub m_star: Option<DacParams>,
    pub comparator_costs: Vec<f64>,
    /// `R_t` for `t = 1..=T`.
    pub cumulative: Vec<f64>,
}

impl RegretSeries {
    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `ln R_T`, when positive.
    pub fn log_final(&self) -> Option<f64> {
        let r = self.final_regret();
        (r > 0.0).then(|| r.ln())
    }
}

/// `R_t = sum_{s<=t} (policy_s - comparator_s)`, accumulated term by term.
pub fn cumulative_regret(policy: &[f64], comparator: &[f64]) -> Result<Vec<f64>> {
    check_len("comparator cost sequence", comparator.len(), policy.len())?;
    let mut acc = 0.0;
    Ok(policy
        .iter()
        .zip(comparator)
        .map(|(p, c)| {
            acc += p - c;
            acc
        })
        .collect())
}

pub fn regret_series(trace: &EpisodeTrace, comparator: &Comparator) -> Result<RegretSeries> {
    Ok(RegretSeries {
        m_star: Some(comparator.m_star.clone()),
        comparator_costs: comparator.costs.clone(),
        cumulative: cumulative_regret(&trace.costs(), &comparator.costs)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub used: usize,
    /// Points dropped because `R_T <= 0`.
    pub excluded: Vec<(f64, f64)>,
}

/// Least-squares slope of `ln R_T` against `ln T`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let (kept, excluded): (Vec<_>, Vec<_>) = points.iter().copied().partition(|&(t, r)| r > 0.0 && t > 0.0);
    for (t, r) in &excluded {
        eprintln!("warning: excluding scaling point T = {t}, R_T = {r} (not positive)");
    }
    if kept.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 positive regret points, have {}",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let xs: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all horizons are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(ScalingFit { slope, intercept, slope_stderr, used: kept.len(), excluded })
}
