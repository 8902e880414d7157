use nalgebra::DVector;

use crate::dac::DacParams;
use crate::error::{check_len, contract, Result};
use crate::lds_sim::{markov_operator, CostSpec, DisturbanceRealization, MarkovOperator, SystemPath};

/// One application of the dynamics at time `t`:
/// `x_{t+1} = A_t x + B_t u + B_{t,w} w_t`, `y = C_t x + e_t`.
pub fn step(
    sys: &SystemPath,
    t: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dist: &DisturbanceRealization,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if t < 1 || t > sys.horizon() {
        return Err(contract(format!("time {t} outside 1..={}", sys.horizon())));
    }
    let (n, m, p, q) = sys.dims();
    check_len("state", x.len(), n)?;
    check_len("input", u.len(), m)?;
    let ti = t as i64;
    let w = dist.w(ti).ok_or_else(|| contract(format!("no disturbance at t = {t}")))?;
    let e = dist.e(ti).ok_or_else(|| contract(format!("no noise at t = {t}")))?;
    check_len("disturbance", w.len(), q)?;
    check_len("noise", e.len(), p)?;
    let x_next = sys.a(ti) * x + sys.b(ti) * u + sys.bw(ti) * w;
    let y = sys.c(ti) * x + e;
    Ok((x_next, y))
}

/// Zero-input outputs `s_1..s_T` from the initial state `x1`.
pub fn natural_outputs(
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    x1: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let (_, m, _, _) = sys.dims();
    let zero = DVector::zeros(m);
    let mut x = x1.clone();
    let mut out = Vec::with_capacity(sys.horizon());
    for t in 1..=sys.horizon() {
        let (x_next, y) = step(sys, t, &x, &zero, dist)?;
        out.push(y);
        x = x_next;
    }
    Ok(out)
}

/// Natural output `s_t` (output at `t` under all-zero inputs, from `x_1 = 0`).
pub fn natural_output(
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    t: usize,
) -> Result<DVector<f64>> {
    if t < 1 || t > sys.horizon() {
        return Err(contract(format!("time {t} outside 1..={}", sys.horizon())));
    }
    let (n, m, _, _) = sys.dims();
    let zero = DVector::zeros(m);
    let mut x = DVector::zeros(n);
    for s in 1..t {
        x = step(sys, s, &x, &zero, dist)?.0;
    }
    Ok(step(sys, t, &x, &zero, dist)?.1)
}

/// What a controller reports after each step.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    /// Policy parameters used to produce `u_t`.
    pub params: Option<DacParams>,
    /// System estimate used at `t`.
    pub estimate: Option<MarkovOperator>,
    pub detection: bool,
    pub perturbation: Option<DVector<f64>>,
}

/// A control law driven through the rollout protocol.
///
/// At step `t` the rollout calls [`Controller::act`] with `y_t` only; the
/// disturbance `w_t` and the cost function `c_t` arrive afterwards through
/// [`Controller::observe`]. A controller therefore never sees `w_t` or `c_t`
/// before committing to `u_t`.
pub trait Controller {
    fn act(&mut self, t: usize, y: &DVector<f64>) -> Result<DVector<f64>>;

    fn observe(&mut self, t: usize, w: &DVector<f64>, cost: &CostSpec) -> Result<()>;

    fn diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics::default()
    }
}

/// Always applies zero input.
#[derive(Debug, Clone)]
pub struct ZeroController {
    pub m: usize,
}

impl Controller for ZeroController {
    fn act(&mut self, _t: usize, _y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.m))
    }

    fn observe(&mut self, _t: usize, _w: &DVector<f64>, _cost: &CostSpec) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub cost: f64,
    pub params: Option<DacParams>,
    pub estimate: Option<MarkovOperator>,
    /// `|G_hat_t - G_t|_F` over the estimate's history length.
    pub estimation_error: Option<f64>,
    pub detection: bool,
    pub perturbation: Option<DVector<f64>>,
}

/// Per-step record of one episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub records: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost).sum()
    }

    pub fn detection_times(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.detection).map(|r| r.t).collect()
    }
}

/// Runs `controller` on the system for the full horizon starting from `x1`.
pub fn rollout(
    sys: &SystemPath,
    dist: &DisturbanceRealization,
    controller: &mut dyn Controller,
    cost: &CostSpec,
    x1: &DVector<f64>,
) -> Result<EpisodeTrace> {
    let (n, m, _, _) = sys.dims();
    check_len("initial state", x1.len(), n)?;
    if dist.horizon() < sys.horizon() {
        return Err(contract("disturbance realization is shorter than the system horizon"));
    }
    let mut x = x1.clone();
    let mut records = Vec::with_capacity(sys.horizon());
    for t in 1..=sys.horizon() {
        let ti = t as i64;
        let e = dist.e(ti).expect("checked horizon");
        let y = sys.c(ti) * &x + e;
        let u = controller.act(t, &y)?;
        if u.len() != m {
            return Err(contract(format!(
                "controller returned an input of dimension {} at t = {t}, expected {m}",
                u.len()
            )));
        }
        let c = cost.value(t, &y, &u)?;
        let (x_next, _) = step(sys, t, &x, &u, dist)?;
        let w = dist.w(ti).expect("checked horizon");
        controller.observe(t, w, cost)?;
        let diag = controller.diagnostics();
        let estimation_error = match &diag.estimate {
            Some(g_hat) => Some(markov_operator(sys, ti, g_hat.h())?.distance(g_hat)),
            None => None,
        };
        records.push(StepRecord {
            t,
            x: std::mem::replace(&mut x, x_next),
            y,
            u,
            cost: c,
            params: diag.params,
            estimate: diag.estimate,
            estimation_error,
            detection: diag.detection,
            perturbation: diag.perturbation,
        });
    }
    Ok(EpisodeTrace { records })
}
