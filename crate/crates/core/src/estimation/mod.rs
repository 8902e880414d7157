//! Online system identification from exploration perturbations: ridge
//! estimates over periods, change-point detection and natural-output
//! reconstruction.

mod online;
mod ridge;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dac::ProblemConstants;
use crate::error::{check_len, config, contract, Result};
use crate::lds_sim::{MarkovOperator, Stability};
use crate::linalg::spectral_norm;

pub use online::{cpd_running_estimate, ExplorationLog, OnlineEstimator};
pub use ridge::{ls_estimate, project_g, EstimationWindow, RidgeAccumulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Re-estimate every `N + 2h` steps and use the estimate for the next period.
    Periodic,
    /// Periods of `N + h` steps compared for change points, with a running
    /// estimate restarted at each detection.
    Cpd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Core window length `N`.
    #[serde(rename = "N")]
    pub n_core: usize,
    pub h: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub mode: EstimatorMode,
}

impl EstimatorConfig {
    pub fn t_p(&self) -> usize {
        match self.mode {
            EstimatorMode::Periodic => self.n_core + 2 * self.h,
            EstimatorMode::Cpd => self.n_core + self.h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h < 1 {
            return Err(config("history h must be at least 1"));
        }
        if self.n_core < 1 {
            return Err(config("window length N must be at least 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(config("ridge weight lambda must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(config("exploration sigma must be finite and nonnegative"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(config("failure probability delta must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Estimates in force over time plus the raw per-period estimates and the
/// detection record.
#[derive(Debug, Clone)]
pub struct EstimateTimeline {
    /// `(t, G)`: `G` is in force from `t` until the next entry.
    segments: Vec<(usize, MarkovOperator)>,
    /// Raw (unprojected) estimate of each completed period.
    pub period_estimates: Vec<(usize, MarkovOperator)>,
    pub detection_times: Vec<usize>,
    /// Start of the current detection epoch (1 before any detection).
    pub last_detection: usize,
}

impl EstimateTimeline {
    /// Starts with the zero operator in force from `t = 1`.
    pub fn new(p: usize, m: usize, h: usize) -> Self {
        Self {
            segments: vec![(1, MarkovOperator::zeros(0, p, m, h))],
            period_estimates: Vec::new(),
            detection_times: Vec::new(),
            last_detection: 1,
        }
    }

    pub fn current(&self) -> &MarkovOperator {
        &self.segments.last().expect("timeline is never empty").1
    }

    /// Estimate in force at time `t`.
    pub fn estimate_at(&self, t: usize) -> &MarkovOperator {
        let idx = self.segments.partition_point(|(start, _)| *start <= t);
        &self.segments[idx.saturating_sub(1)].1
    }

    /// Times at which the estimate in force changed.
    pub fn breakpoints(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|(t, _)| *t).collect()
    }

    pub fn set_from(&mut self, t: usize, g: MarkovOperator) {
        match self.segments.last_mut() {
            Some((start, last)) if *start == t => *last = g,
            _ => self.segments.push((t, g)),
        }
    }
}

/// Stores the raw estimate of a completed period and puts its projection in
/// force for the following period, which starts at `window.t_e`.
pub fn periodic_update(
    timeline: &mut EstimateTimeline,
    window: &EstimationWindow,
    cfg: &EstimatorConfig,
    bounds: &Stability,
) -> Result<()> {
    let g = ls_estimate(window, cfg.h, cfg.lambda)?;
    timeline.set_from(window.t_e, project_g(&g, bounds));
    timeline.period_estimates.push((window.k, g));
    Ok(())
}

/// Confidence radius of a period estimate.
pub fn compute_beta(delta: f64, lambda: f64, sigma: f64, h: usize, n_core: usize, c: &ProblemConstants) -> f64 {
    let hf = h as f64;
    let ab_over_g = c.kappa_a * c.kappa_b / c.gamma;
    let r_u = c.kappa_m * c.kappa_w * hf + 3.0 * sigma * (c.m as f64 + (1.0 / delta).ln()).sqrt();
    let r_s = c.kappa_a * c.kappa_w / c.gamma + c.kappa_e + 2.0 * r_u * ab_over_g;
    let zeta = r_s + ab_over_g * c.kappa_m * c.kappa_w * hf + ab_over_g * r_u;
    let confidence = (c.n as f64 * 2f64.ln() + 2.0 * (2.0 * hf / delta).ln()).sqrt();
    let bias = if lambda == 0.0 {
        0.0
    } else {
        lambda * ab_over_g / (zeta * sigma * (hf * n_core as f64).sqrt())
    };
    2.0 * hf.sqrt() * zeta * (confidence + bias)
}

/// `2 beta / (sigma sqrt(N))`; infinite without exploration.
pub fn detection_threshold(beta: f64, sigma: f64, n_core: usize) -> f64 {
    if sigma <= 0.0 {
        f64::INFINITY
    } else {
        2.0 * beta / (sigma * (n_core as f64).sqrt())
    }
}

/// True iff `current` differs from any earlier period estimate of the epoch by
/// strictly more than `threshold` in spectral norm.
pub fn cpd_check(epoch: &[MarkovOperator], current: &MarkovOperator, threshold: f64) -> bool {
    let now = current.stacked();
    epoch.iter().any(|g| spectral_norm(&(&now - g.stacked())) > threshold)
}

/// How natural outputs are reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaturalOutputSetting {
    /// Disturbances observed: `s_hat = sum_k G_hat^[k] w_{t-k}`.
    S1,
    /// Outputs observed: `s_hat = y_t - sum_k G_hat^[k] u_{t-k}`.
    S2,
}

/// History handed to [`estimate_s_hat`]; `*_hist[k-1]` is the value `k` steps back.
#[derive(Debug, Clone, Copy)]
pub enum SHatHistory<'a> {
    Disturbances(&'a [DVector<f64>]),
    Inputs { y: &'a DVector<f64>, u_hist: &'a [DVector<f64>] },
}

pub fn estimate_s_hat(
    setting: NaturalOutputSetting,
    g_hat: &MarkovOperator,
    history: SHatHistory<'_>,
) -> Result<DVector<f64>> {
    let h = g_hat.h();
    match (setting, history) {
        (NaturalOutputSetting::S1, SHatHistory::Disturbances(w_hist)) => {
            if w_hist.len() < h {
                return Err(contract("natural-output estimate needs h past disturbances"));
            }
            g_hat.apply(&w_hist[..h])
        }
        (NaturalOutputSetting::S2, SHatHistory::Inputs { y, u_hist }) => {
            if u_hist.len() < h {
                return Err(contract("natural-output estimate needs h past inputs"));
            }
            check_len("output", y.len(), g_hat.block_shape().0)?;
            Ok(y - g_hat.apply(&u_hist[..h])?)
        }
        (s, _) => Err(contract(format!("history does not match natural-output setting {s:?}"))),
    }
}

/// Rounds values that are within floating-point noise of an integer.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// `N = ceil(Gamma^-0.8 T^0.8)` raised to at least `h + 1`, and
/// `sigma = Gamma^0.2 T^-0.2`.
pub fn theoretical_scalings(gamma_t: f64, horizon: usize, h: usize) -> Result<(usize, f64)> {
    if !(gamma_t >= 1.0) || horizon < 1 {
        return Err(config("scalings need Gamma_T >= 1 and T >= 1"));
    }
    let t = horizon as f64;
    let n = snap(gamma_t.powf(-0.8) * t.powf(0.8)).ceil() as usize;
    let sigma = gamma_t.powf(0.2) * t.powf(-0.2);
    Ok((n.max(h + 1), sigma))
}
