use nalgebra::DVector;

use crate::error::{check_len, contract, Result};
use crate::estimation::{
    cpd_check, detection_threshold, ls_estimate, periodic_update, project_g, EstimateTimeline,
    EstimationWindow, EstimatorConfig, EstimatorMode, RidgeAccumulator,
};
use crate::lds_sim::{MarkovOperator, Stability};

/// Outputs and exploration perturbations recorded so far, indexed by time.
#[derive(Debug, Clone)]
pub struct ExplorationLog {
    m: usize,
    h: usize,
    y: Vec<DVector<f64>>,
    du: Vec<DVector<f64>>,
}

impl ExplorationLog {
    pub fn new(m: usize, h: usize) -> Self {
        Self { m, h, y: Vec::new(), du: Vec::new() }
    }

    pub fn push_output(&mut self, t: usize, y: DVector<f64>) -> Result<()> {
        if t != self.y.len() + 1 {
            return Err(contract(format!("output for t = {t} recorded out of order")));
        }
        self.y.push(y);
        Ok(())
    }

    pub fn push_perturbation(&mut self, t: usize, du: DVector<f64>) -> Result<()> {
        if t != self.du.len() + 1 {
            return Err(contract(format!("perturbation for t = {t} recorded out of order")));
        }
        check_len("perturbation", du.len(), self.m)?;
        self.du.push(du);
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.y.len()
    }

    /// `stack(du_{p-1}, ..., du_{p-h})`, zero before time 1.
    pub fn regressor(&self, p: usize) -> DVector<f64> {
        let mut phi = DVector::zeros(self.h * self.m);
        for l in 1..=self.h {
            if p > l {
                if let Some(du) = self.du.get(p - l - 1) {
                    phi.rows_mut((l - 1) * self.m, self.m).copy_from(du);
                }
            }
        }
        phi
    }

    pub fn row(&self, p: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let y = self
            .y
            .get(p.wrapping_sub(1))
            .ok_or_else(|| contract(format!("no output recorded for p = {p}")))?;
        if p > self.du.len() + 1 {
            return Err(contract(format!("perturbations before p = {p} not recorded")));
        }
        Ok((y.clone(), self.regressor(p)))
    }

    /// Window `k` over `[t_s, t_e]` with regression rows `p in [lo, hi]`.
    pub fn window(&self, k: usize, t_s: usize, t_e: usize, lo: usize, hi: usize) -> Result<EstimationWindow> {
        let rows = (lo.max(1)..=hi).map(|p| self.row(p)).collect::<Result<Vec<_>>>()?;
        Ok(EstimationWindow { k, t_s, t_e, rows })
    }
}

/// Streaming estimator: feeds the period grid, the change-point test and (in
/// detection mode) the running estimate since the last detection.
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    cfg: EstimatorConfig,
    bounds: Stability,
    threshold: f64,
    log: ExplorationLog,
    timeline: EstimateTimeline,
    epoch: Vec<MarkovOperator>,
    running: RidgeAccumulator,
}

impl OnlineEstimator {
    /// `beta` only matters in detection mode.
    pub fn new(cfg: EstimatorConfig, bounds: Stability, p: usize, m: usize, beta: f64) -> Result<Self> {
        cfg.validate()?;
        let threshold = detection_threshold(beta, cfg.sigma, cfg.n_core);
        Ok(Self {
            log: ExplorationLog::new(m, cfg.h),
            timeline: EstimateTimeline::new(p, m, cfg.h),
            running: RidgeAccumulator::new(p, m, cfg.h),
            epoch: Vec::new(),
            cfg,
            bounds,
            threshold,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn log(&self) -> &ExplorationLog {
        &self.log
    }

    pub fn timeline(&self) -> &EstimateTimeline {
        &self.timeline
    }

    pub fn estimate(&self) -> &MarkovOperator {
        self.timeline.current()
    }

    pub fn record_perturbation(&mut self, t: usize, du: DVector<f64>) -> Result<()> {
        self.log.push_perturbation(t, du)
    }

    /// Records `y_t` and refreshes the estimate in force at `t`. Returns
    /// whether a change point was declared at `t`.
    pub fn update(&mut self, t: usize, y: DVector<f64>) -> Result<bool> {
        self.log.push_output(t, y)?;
        let h = self.cfg.h;
        let tp = self.cfg.t_p();
        let mut detected = false;
        if t % tp == 0 {
            let k = t / tp;
            let t_s = if k == 1 { 1 } else { t - tp };
            match self.cfg.mode {
                EstimatorMode::Periodic => {
                    let window = self.log.window(k, t_s, t, t_s + h, t - h)?;
                    periodic_update(&mut self.timeline, &window, &self.cfg, &self.bounds)?;
                }
                EstimatorMode::Cpd => {
                    let window = self.log.window(k, t_s, t, t_s + h, t)?;
                    let g = ls_estimate(&window, h, self.cfg.lambda)?;
                    self.timeline.period_estimates.push((k, g.clone()));
                    if !self.epoch.is_empty() && cpd_check(&self.epoch, &g, self.threshold) {
                        detected = true;
                        self.timeline.detection_times.push(t);
                        self.timeline.last_detection = t;
                        self.epoch.clear();
                        self.running.clear();
                    } else {
                        self.epoch.push(g);
                    }
                }
            }
        }
        if self.cfg.mode == EstimatorMode::Cpd && t >= self.timeline.last_detection + 2 * h {
            let (y_p, phi) = self.log.row(t - h)?;
            self.running.add(&y_p, &phi)?;
            let g = self.running.solve(self.cfg.lambda, t as i64)?;
            self.timeline.set_from(t, project_g(&g, &self.bounds));
        }
        Ok(detected)
    }
}

/// Batch form of the running estimate: ridge over `p in [t_d + h, t - h]`,
/// projected; before `t_d + 2h` the previous estimate is held.
pub fn cpd_running_estimate(
    t: usize,
    t_d: usize,
    log: &ExplorationLog,
    cfg: &EstimatorConfig,
    bounds: &Stability,
    previous: &MarkovOperator,
) -> Result<MarkovOperator> {
    let h = cfg.h;
    if t < t_d + 2 * h {
        return Ok(previous.clone());
    }
    let window = log.window(0, t_d, t, t_d + h, t - h)?;
    let mut g = ls_estimate(&window, h, cfg.lambda)?;
    g.t = t as i64;
    Ok(project_g(&g, bounds))
}
