use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::linalg::{gaussian_vector, uniform_in_ball};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceKind {
    /// Independent draws, uniform in the ball of radius `kappa_w`.
    Uniform,
    /// Per-coordinate sinusoids with random phases; `period` in steps.
    Sinusoid { period: f64 },
    /// One random direction of length `kappa_w`, held for the whole episode.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub kind: DisturbanceKind,
    pub kappa_w: f64,
    /// Measurement-noise bound; noise is uniform in the ball of this radius.
    #[serde(default)]
    pub kappa_e: f64,
}

impl DisturbanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_w >= 0.0 && self.kappa_w.is_finite()) {
            return Err(config("disturbance.kappa_w must be nonnegative"));
        }
        if !(self.kappa_e >= 0.0 && self.kappa_e.is_finite()) {
            return Err(config("disturbance.kappa_e must be nonnegative"));
        }
        if let DisturbanceKind::Sinusoid { period } = self.kind {
            if !(period > 0.0) {
                return Err(config("disturbance.period must be positive"));
            }
        }
        Ok(())
    }
}

/// Disturbance and measurement-noise sequences for one episode (1-based times).
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceRealization {
    w_seq: Vec<DVector<f64>>,
    e_seq: Vec<DVector<f64>>,
    pub kappa_w: f64,
    pub kappa_e: f64,
}

impl DisturbanceRealization {
    pub fn new(w_seq: Vec<DVector<f64>>, e_seq: Vec<DVector<f64>>) -> Self {
        let kappa_w = w_seq.iter().map(|w| w.norm()).fold(0.0, f64::max);
        let kappa_e = e_seq.iter().map(|e| e.norm()).fold(0.0, f64::max);
        Self { w_seq, e_seq, kappa_w, kappa_e }
    }

    /// All-zero disturbances and noise.
    pub fn zeros(horizon: usize, q: usize, p: usize) -> Self {
        Self::new(vec![DVector::zeros(q); horizon], vec![DVector::zeros(p); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.w_seq.len()
    }

    /// Disturbance `w_t`, or `None` outside `1..=T`.
    pub fn w(&self, t: i64) -> Option<&DVector<f64>> {
        if t < 1 {
            return None;
        }
        self.w_seq.get(t as usize - 1)
    }

    pub fn e(&self, t: i64) -> Option<&DVector<f64>> {
        if t < 1 {
            return None;
        }
        self.e_seq.get(t as usize - 1)
    }

    pub fn w_seq(&self) -> &[DVector<f64>] {
        &self.w_seq
    }

    pub fn e_seq(&self) -> &[DVector<f64>] {
        &self.e_seq
    }

    pub fn has_noise(&self) -> bool {
        self.e_seq.iter().any(|e| e.iter().any(|&v| v != 0.0))
    }
}

pub fn generate_disturbance(
    cfg: &DisturbanceConfig,
    q: usize,
    p: usize,
    horizon: usize,
    seed: u64,
) -> Result<DisturbanceRealization> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_seq: Vec<DVector<f64>> = match cfg.kind {
        DisturbanceKind::Uniform => {
            (0..horizon).map(|_| uniform_in_ball(&mut rng, q, cfg.kappa_w)).collect()
        }
        DisturbanceKind::Sinusoid { period } => {
            let phases: Vec<f64> = (0..q).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
            let amp = cfg.kappa_w / (q as f64).sqrt();
            (1..=horizon)
                .map(|t| {
                    DVector::from_fn(q, |i, _| {
                        amp * (2.0 * PI * t as f64 / period + phases[i]).sin()
                    })
                })
                .collect()
        }
        DisturbanceKind::Constant => {
            let mut dir = gaussian_vector(&mut rng, q);
            let norm = dir.norm();
            if norm > 0.0 {
                dir *= cfg.kappa_w / norm;
            }
            vec![dir; horizon]
        }
    };
    let e_seq = if cfg.kappa_e > 0.0 {
        (0..horizon).map(|_| uniform_in_ball(&mut rng, p, cfg.kappa_e)).collect()
    } else {
        vec![DVector::zeros(p); horizon]
    };
    Ok(DisturbanceRealization { w_seq, e_seq, kappa_w: cfg.kappa_w, kappa_e: cfg.kappa_e })
}
