//! Online control loops built on disturbance-action policies: full knowledge,
//! zero knowledge with periodic or change-point-driven estimation, and the
//! comparison baselines.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dac::{dac_control, grad_truncated_cost, ogd_step, project_dac, DacParams, LagBuffer, TruncatedContext};
use crate::error::{config, contract, Result};
use crate::estimation::{
    estimate_s_hat, ls_estimate, project_g, EstimatorConfig, EstimatorMode, ExplorationLog,
    NaturalOutputSetting, OnlineEstimator, SHatHistory,
};
use crate::lds_sim::{
    markov_operator, natural_outputs, Controller, CostSpec, DisturbanceRealization, MarkovOperator,
    Stability, StepDiagnostics, SystemPath,
};
use crate::linalg::{gaussian_matrix, gaussian_vector, uniform_in_frobenius_ball, with_spectral_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "olc-fk")]
    OlcFk,
    #[serde(rename = "olc-zk")]
    OlcZk,
    #[serde(rename = "olc-zk-cpd")]
    OlcZkCpd,
    #[serde(rename = "fixed-M", alias = "fixed-m")]
    FixedM,
    #[serde(rename = "random-M", alias = "random-m")]
    RandomM,
    #[serde(rename = "fixed-G", alias = "fixed-g")]
    FixedG,
    #[serde(rename = "random-G", alias = "random-g")]
    RandomG,
    #[serde(rename = "olc-ti")]
    OlcTi,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 8] = [
        ControllerKind::OlcFk,
        ControllerKind::OlcZk,
        ControllerKind::OlcZkCpd,
        ControllerKind::FixedM,
        ControllerKind::RandomM,
        ControllerKind::FixedG,
        ControllerKind::RandomG,
        ControllerKind::OlcTi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::OlcFk => "olc-fk",
            ControllerKind::OlcZk => "olc-zk",
            ControllerKind::OlcZkCpd => "olc-zk-cpd",
            ControllerKind::FixedM => "fixed-M",
            ControllerKind::RandomM => "random-M",
            ControllerKind::FixedG => "fixed-G",
            ControllerKind::RandomG => "random-G",
            ControllerKind::OlcTi => "olc-ti",
        }
    }

    pub fn needs_estimator(self) -> bool {
        !matches!(self, ControllerKind::OlcFk | ControllerKind::FixedM | ControllerKind::RandomM)
    }

    pub fn learns(self) -> bool {
        !matches!(self, ControllerKind::FixedM | ControllerKind::RandomM)
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Starting gains for the fixed-gain baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGain {
    Zero,
    /// Each block uniform in the Frobenius ball of radius `kappa_M`.
    #[default]
    Random,
}

/// Fully resolved controller parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub eta: f64,
    pub h: usize,
    pub kappa_m: f64,
    /// Required by every kind that estimates, perturbs or redraws estimates.
    pub estimator: Option<EstimatorConfig>,
    pub setting: NaturalOutputSetting,
    /// Confidence radius for change-point detection.
    pub beta: f64,
    /// Gains used by `fixed-M`; every other kind starts from zero.
    pub initial_gain: InitialGain,
    /// Exploration prefix length for `olc-ti`.
    pub explore_steps: usize,
    pub seed: u64,
}

impl ControllerSpec {
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.h < 1 {
            return Err(config(format!("{kind}: history h must be at least 1")));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(config(format!("{kind}: step size eta must be finite and nonnegative")));
        }
        if !(self.kappa_m >= 0.0) || !self.kappa_m.is_finite() {
            return Err(config(format!("{kind}: kappa_M must be finite and nonnegative")));
        }
        match (&self.estimator, kind.needs_estimator()) {
            (Some(_), false) => {
                return Err(config(format!("{kind}: takes no estimator configuration")))
            }
            (None, true) => return Err(config(format!("{kind}: estimator configuration required"))),
            (Some(est), true) => {
                est.validate()?;
                if est.h != self.h {
                    return Err(config(format!("{kind}: estimator h differs from controller h")));
                }
                let want = if kind == ControllerKind::OlcZkCpd { EstimatorMode::Cpd } else { EstimatorMode::Periodic };
                if est.mode != want {
                    return Err(config(format!("{kind}: estimator mode must be {want:?}")));
                }
            }
            (None, false) => {}
        }
        if kind == ControllerKind::OlcZkCpd && !(self.beta > 0.0) {
            return Err(config(format!("{kind}: beta must be positive")));
        }
        if kind == ControllerKind::OlcTi && self.explore_steps <= self.h {
            return Err(config(format!("{kind}: exploration prefix must exceed h")));
        }
        Ok(())
    }
}

/// Where `G_hat_t` comes from.
#[derive(Debug, Clone)]
enum Model {
    /// Gains only; no system model.
    None,
    Estimator(Box<OnlineEstimator>),
    Fixed(MarkovOperator),
    /// Redrawn at every multiple of `period`.
    Random { period: usize, current: MarkovOperator },
    /// True operator and natural outputs.
    Full { sys: Arc<SystemPath>, natural: Arc<Vec<DVector<f64>>> },
    /// True operator, estimated natural outputs.
    Oracle(Arc<SystemPath>),
    /// Explore for `until` steps, then one estimate held forever.
    ExploreThenFreeze { until: usize, log: ExplorationLog, frozen: Option<MarkovOperator> },
}

/// Per-episode controller state; implements the rollout protocol.
#[derive(Debug, Clone)]
pub struct ControllerState {
    spec: ControllerSpec,
    bounds: Stability,
    dims: (usize, usize, usize),
    m_t: DacParams,
    model: Model,
    w_hist: LagBuffer,
    u_hist: LagBuffer,
    /// Drives exploration perturbations only.
    perturb_rng: ChaCha8Rng,
    /// Drives random gains and random estimates.
    aux_rng: ChaCha8Rng,
    // quantities fixed at `act(t)` and consumed by `observe(t)`
    g_t: Option<MarkovOperator>,
    s_t: Option<DVector<f64>>,
    diag: StepDiagnostics,
}

fn perturbation_sigma(spec: &ControllerSpec) -> f64 {
    spec.estimator.as_ref().map_or(0.0, |e| e.sigma)
}

/// Random operator in the decaying set: each block a Gaussian direction with
/// spectral norm uniform on `[0, cap_k]`.
fn random_operator(rng: &mut ChaCha8Rng, p: usize, m: usize, h: usize, bounds: &Stability) -> MarkovOperator {
    use rand::Rng;
    let blocks = (0..h)
        .map(|k| {
            let cap = bounds.kappa_a * bounds.kappa_b * (1.0 - bounds.gamma).powi(k as i32);
            with_spectral_norm(gaussian_matrix(rng, p, m), cap * rng.random::<f64>())
        })
        .collect();
    MarkovOperator::new(0, blocks).expect("h >= 1")
}

fn random_gains(rng: &mut ChaCha8Rng, m: usize, q: usize, h: usize, kappa_m: f64) -> DacParams {
    let blocks = (0..h).map(|_| uniform_in_frobenius_ball(rng, m, q, kappa_m)).collect();
    project_dac(blocks, kappa_m)
}

impl ControllerState {
    /// Builds a controller that only knows the dimensions `(m, p, q)` and the
    /// stability constants. Full-knowledge controllers use
    /// [`ControllerState::with_full_knowledge`].
    pub fn new(spec: ControllerSpec, dims: (usize, usize, usize), bounds: Stability) -> Result<Self> {
        spec.validate()?;
        if spec.kind == ControllerKind::OlcFk {
            return Err(config("olc-fk needs the true system; use with_full_knowledge"));
        }
        Self::build(spec, dims, bounds, Model::None)
    }

    pub fn with_full_knowledge(
        spec: ControllerSpec,
        sys: Arc<SystemPath>,
        dist: &DisturbanceRealization,
    ) -> Result<Self> {
        spec.validate()?;
        let (n, m, p, q) = sys.dims();
        let natural = Arc::new(natural_outputs(&sys, dist, &DVector::zeros(n))?);
        let bounds = sys.stability();
        Self::build(spec, (m, p, q), bounds, Model::Full { sys, natural })
    }

    fn build(spec: ControllerSpec, dims: (usize, usize, usize), bounds: Stability, full: Model) -> Result<Self> {
        let (m, p, q) = dims;
        let h = spec.h;
        let mut perturb_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        perturb_rng.set_stream(0);
        let mut aux_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        aux_rng.set_stream(1);
        let model = match spec.kind {
            ControllerKind::OlcFk => full,
            ControllerKind::OlcZk | ControllerKind::OlcZkCpd => {
                let est = spec.estimator.clone().expect("validated");
                Model::Estimator(Box::new(OnlineEstimator::new(est, bounds, p, m, spec.beta)?))
            }
            ControllerKind::FixedM | ControllerKind::RandomM => Model::None,
            ControllerKind::FixedG => Model::Fixed(random_operator(&mut aux_rng, p, m, h, &bounds)),
            ControllerKind::RandomG => Model::Random {
                period: spec.estimator.as_ref().expect("validated").t_p(),
                current: random_operator(&mut aux_rng, p, m, h, &bounds),
            },
            ControllerKind::OlcTi => Model::ExploreThenFreeze {
                until: spec.explore_steps,
                log: ExplorationLog::new(m, h),
                frozen: None,
            },
        };
        let m_t = match (spec.kind, spec.initial_gain) {
            (ControllerKind::FixedM, InitialGain::Random) => random_gains(&mut aux_rng, m, q, h, spec.kappa_m),
            _ => DacParams::zeros(m, q, h, spec.kappa_m),
        };
        Ok(Self {
            w_hist: LagBuffer::new(q, 2 * h),
            u_hist: LagBuffer::new(m, h),
            spec,
            bounds,
            dims,
            m_t,
            model,
            perturb_rng,
            aux_rng,
            g_t: None,
            s_t: None,
            diag: StepDiagnostics::default(),
        })
    }

    /// Test hook: every step uses the true `G_t` of `sys` in place of an
    /// estimate (natural outputs are still reconstructed).
    pub fn with_oracle(mut self, sys: Arc<SystemPath>) -> Self {
        self.model = Model::Oracle(sys);
        self
    }

    /// Pins `G_hat_t` to `g` at every step.
    pub fn with_fixed_estimate(mut self, g: MarkovOperator) -> Self {
        self.model = Model::Fixed(g);
        self
    }

    /// Overrides the starting gains (projected onto the policy class).
    pub fn with_initial_gains(mut self, gains: &DacParams) -> Self {
        self.m_t = project_dac(gains.blocks().to_vec(), self.spec.kappa_m);
        self
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn params(&self) -> &DacParams {
        &self.m_t
    }

    pub fn estimator(&self) -> Option<&OnlineEstimator> {
        match &self.model {
            Model::Estimator(e) => Some(e),
            _ => None,
        }
    }

    fn exploring(&self, t: usize) -> bool {
        match &self.model {
            Model::ExploreThenFreeze { until, .. } => t <= *until,
            _ => self.spec.kind.learns() && self.spec.kind != ControllerKind::OlcFk,
        }
    }

    /// Brings the model up to date with `y_t` and returns `(G_hat_t, detection)`.
    fn model_at(&mut self, t: usize, y: &DVector<f64>) -> Result<(Option<MarkovOperator>, bool)> {
        let h = self.spec.h;
        let (m, p, _) = self.dims;
        let ti = t as i64;
        Ok(match &mut self.model {
            Model::None => (None, false),
            Model::Estimator(est) => {
                let detected = est.update(t, y.clone())?;
                (Some(est.estimate().clone()), detected)
            }
            Model::Fixed(g) => (Some(g.clone()), false),
            Model::Random { period, current } => {
                if t % *period == 0 {
                    *current = random_operator(&mut self.aux_rng, p, m, h, &self.bounds);
                }
                (Some(current.clone()), false)
            }
            Model::Full { sys, .. } | Model::Oracle(sys) => (Some(markov_operator(sys, ti, h)?), false),
            Model::ExploreThenFreeze { until, log, frozen } => {
                log.push_output(t, y.clone())?;
                if t == *until + 1 {
                    let lambda = self.spec.estimator.as_ref().expect("validated").lambda;
                    let window = log.window(1, 1, *until, 1 + h, *until)?;
                    let mut g = ls_estimate(&window, h, lambda)?;
                    g.t = ti;
                    *frozen = Some(project_g(&g, &self.bounds));
                }
                let g = frozen.clone().unwrap_or_else(|| MarkovOperator::zeros(ti, p, m, h));
                (Some(g), false)
            }
        })
    }

    fn natural_output(&self, t: usize, y: &DVector<f64>, g: &MarkovOperator) -> Result<DVector<f64>> {
        if let Model::Full { natural, .. } = &self.model {
            return natural
                .get(t - 1)
                .cloned()
                .ok_or_else(|| contract(format!("no natural output for t = {t}")));
        }
        let h = self.spec.h;
        let history = match self.spec.setting {
            NaturalOutputSetting::S1 => {
                return estimate_s_hat(self.spec.setting, g, SHatHistory::Disturbances(&self.w_hist.window(h)))
            }
            NaturalOutputSetting::S2 => self.u_hist.window(h),
        };
        estimate_s_hat(self.spec.setting, g, SHatHistory::Inputs { y, u_hist: &history })
    }
}

impl Controller for ControllerState {
    fn act(&mut self, t: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, p, q) = self.dims;
        let h = self.spec.h;
        if y.len() != p {
            return Err(contract(format!("output has dimension {}, expected {p}", y.len())));
        }
        let (g_t, detection) = self.model_at(t, y)?;
        let s_t = match &g_t {
            Some(g) => Some(self.natural_output(t, y, g)?),
            None => None,
        };
        if self.spec.kind == ControllerKind::RandomM {
            self.m_t = random_gains(&mut self.aux_rng, m, q, h, self.spec.kappa_m);
        }
        let mut u = dac_control(&self.m_t, &self.w_hist.window(h))?;
        let perturbation = if self.exploring(t) {
            let du = gaussian_vector(&mut self.perturb_rng, m) * perturbation_sigma(&self.spec);
            if self.exploring_prefix(t) {
                u = du.clone();
            } else {
                u += &du;
            }
            Some(du)
        } else {
            None
        };
        match &mut self.model {
            Model::Estimator(est) => est.record_perturbation(t, perturbation.clone().unwrap_or_else(|| DVector::zeros(m)))?,
            Model::ExploreThenFreeze { log, until, .. } if t <= *until => {
                log.push_perturbation(t, perturbation.clone().unwrap_or_else(|| DVector::zeros(m)))?
            }
            _ => {}
        }
        self.u_hist.push(u.clone())?;
        self.diag = StepDiagnostics { params: Some(self.m_t.clone()), estimate: g_t.clone(), detection, perturbation };
        self.g_t = g_t;
        self.s_t = s_t;
        Ok(u)
    }

    fn observe(&mut self, t: usize, w: &DVector<f64>, cost: &CostSpec) -> Result<()> {
        let learning = self.spec.kind.learns() && !self.exploring_prefix(t);
        if learning {
            let (g, s) = match (self.g_t.take(), self.s_t.take()) {
                (Some(g), Some(s)) => (g, s),
                _ => return Err(contract(format!("observe({t}) called before act({t})"))),
            };
            let ctx = TruncatedContext { t, g, s_hat: s, w_hist: self.w_hist.window(2 * self.spec.h) };
            let grad = grad_truncated_cost(&self.m_t, &ctx, cost)?;
            self.m_t = ogd_step(&self.m_t, &grad, self.spec.eta)?;
        }
        self.w_hist.push(w.clone())
    }

    fn diagnostics(&self) -> StepDiagnostics {
        self.diag.clone()
    }
}

impl ControllerState {
    fn exploring_prefix(&self, t: usize) -> bool {
        matches!(&self.model, Model::ExploreThenFreeze { until, .. } if t <= *until)
    }
}

/// Builds the controller for `spec` on a given episode. Only the full-knowledge
/// kind reads the system and disturbances; every other kind receives the
/// dimensions and stability constants alone.
pub fn build_controller(
    spec: &ControllerSpec,
    sys: &Arc<SystemPath>,
    dist: &DisturbanceRealization,
) -> Result<ControllerState> {
    if spec.kind == ControllerKind::OlcFk {
        return ControllerState::with_full_knowledge(spec.clone(), sys.clone(), dist);
    }
    let (_, m, p, q) = sys.dims();
    ControllerState::new(spec.clone(), (m, p, q), sys.stability())
}
