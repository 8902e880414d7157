use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::linalg::{gaussian_matrix, spectral_norm, with_spectral_norm};

/// Stability constants of a generated system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// Largest output-map spectral norm over the horizon.
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub gamma: f64,
}

/// How the system matrices evolve over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// One regime for the whole episode.
    Constant,
    /// New (A, B) drawn at each listed time; times are 1-based.
    Piecewise { change_times: Vec<usize> },
    /// `count` change times drawn uniformly without replacement from `2..=T`.
    RandomChanges { count: usize },
    /// (A_t, B_t) redrawn every step as a jittered copy of a nominal pair.
    PerStep { jitter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMap {
    /// `C_t = I` (requires `p == n`).
    Identity,
    /// Random `C` with unit spectral norm, constant over time.
    RandomConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceMap {
    /// `B_{t,w} = I` (requires `q == n`).
    Identity,
    /// `B_{t,w} = B_t` (requires `q == m`).
    Matched,
    /// Random constant map with unit spectral norm.
    Random,
}

/// Generation parameters for [`generate_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub gamma: f64,
    pub kappa_b: f64,
    pub schedule: Schedule,
    pub output_map: OutputMap,
    pub disturbance_map: DisturbanceMap,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 || self.q == 0 {
            return Err(config("system dimensions n, m, p, q must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config(format!("system.gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.kappa_b > 0.0 && self.kappa_b.is_finite()) {
            return Err(config("system.kappa_b must be positive"));
        }
        if self.output_map == OutputMap::Identity && self.p != self.n {
            return Err(config("system.output_map = identity requires p == n"));
        }
        match self.disturbance_map {
            DisturbanceMap::Identity if self.q != self.n => {
                return Err(config("system.disturbance_map = identity requires q == n"))
            }
            DisturbanceMap::Matched if self.q != self.m => {
                return Err(config("system.disturbance_map = matched requires q == m"))
            }
            _ => {}
        }
        match &self.schedule {
            Schedule::Piecewise { change_times } => {
                if change_times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config("schedule.change_times must be strictly increasing"));
                }
                if change_times.first() == Some(&0) {
                    return Err(config("schedule.change_times are 1-based"));
                }
            }
            Schedule::PerStep { jitter } if !(*jitter >= 0.0) => {
                return Err(config("schedule.jitter must be nonnegative"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Full time-indexed realization of the system matrices for one episode.
///
/// Times are 1-based. Lookups at nonpositive times return the time-1 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath {
    horizon: usize,
    a_seq: Vec<DMatrix<f64>>,
    b_seq: Vec<DMatrix<f64>>,
    bw_seq: Vec<DMatrix<f64>>,
    c_seq: Vec<DMatrix<f64>>,
    change_times: Vec<usize>,
    stability: Stability,
}

impl SystemPath {
    /// Builds a path from explicit per-step matrices and checks every invariant.
    ///
    /// `change_times` is derived from where any of the matrices differ from the
    /// previous step.
    pub fn new(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        bw_seq: Vec<DMatrix<f64>>,
        c_seq: Vec<DMatrix<f64>>,
        gamma: f64,
        kappa_b: f64,
    ) -> Result<Self> {
        Self::build(a_seq, b_seq, bw_seq, c_seq, gamma, kappa_b, true)
    }

    /// Like [`SystemPath::new`] but skips the norm bounds, for degenerate
    /// test systems (e.g. `A = I`). Shapes are still checked.
    pub fn new_unchecked(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        bw_seq: Vec<DMatrix<f64>>,
        c_seq: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::build(a_seq, b_seq, bw_seq, c_seq, 0.5, f64::INFINITY, false)
    }

    fn build(
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        bw_seq: Vec<DMatrix<f64>>,
        c_seq: Vec<DMatrix<f64>>,
        gamma: f64,
        kappa_b: f64,
        check_bounds: bool,
    ) -> Result<Self> {
        let horizon = a_seq.len();
        if horizon == 0 {
            return Err(config("horizon must be positive"));
        }
        if b_seq.len() != horizon || bw_seq.len() != horizon || c_seq.len() != horizon {
            return Err(contract("all matrix sequences must have the horizon length"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(config(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let n = a_seq[0].nrows();
        let m = b_seq[0].ncols();
        let q = bw_seq[0].ncols();
        let p = c_seq[0].nrows();
        let tol = 1e-9;
        let mut kappa_a: f64 = 0.0;
        let mut max_b: f64 = 0.0;
        for t in 0..horizon {
            let (a, b, bw, c) = (&a_seq[t], &b_seq[t], &bw_seq[t], &c_seq[t]);
            if a.shape() != (n, n) || b.shape() != (n, m) || bw.shape() != (n, q) || c.shape() != (p, n)
            {
                return Err(contract(format!("matrix shapes inconsistent at t = {}", t + 1)));
            }
            if check_bounds && spectral_norm(a) > (1.0 - gamma) * (1.0 + tol) {
                return Err(config(format!("||A_{}||_2 exceeds 1 - gamma", t + 1)));
            }
            if check_bounds && spectral_norm(b) > kappa_b * (1.0 + tol) {
                return Err(config(format!("||B_{}||_2 exceeds kappa_b", t + 1)));
            }
            kappa_a = kappa_a.max(spectral_norm(c));
            max_b = max_b.max(spectral_norm(b));
        }
        let kappa_b = if check_bounds { kappa_b } else { max_b };
        let change_times = (1..horizon)
            .filter(|&i| {
                a_seq[i] != a_seq[i - 1]
                    || b_seq[i] != b_seq[i - 1]
                    || bw_seq[i] != bw_seq[i - 1]
                    || c_seq[i] != c_seq[i - 1]
            })
            .map(|i| i + 1)
            .collect();
        Ok(Self {
            horizon,
            a_seq,
            b_seq,
            bw_seq,
            c_seq,
            change_times,
            stability: Stability { kappa_a, kappa_b, gamma },
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// (n, m, p, q): state, input, output and disturbance dimensions.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.a_seq[0].nrows(),
            self.b_seq[0].ncols(),
            self.c_seq[0].nrows(),
            self.bw_seq[0].ncols(),
        )
    }

    pub fn change_times(&self) -> &[usize] {
        &self.change_times
    }

    /// Number of changes over the horizon.
    pub fn num_changes(&self) -> usize {
        self.change_times.len()
    }

    pub fn stability(&self) -> Stability {
        self.stability
    }

    fn index(&self, t: i64) -> usize {
        (t.max(1) as usize).min(self.horizon) - 1
    }

    pub fn a(&self, t: i64) -> &DMatrix<f64> {
        &self.a_seq[self.index(t)]
    }

    pub fn b(&self, t: i64) -> &DMatrix<f64> {
        &self.b_seq[self.index(t)]
    }

    pub fn bw(&self, t: i64) -> &DMatrix<f64> {
        &self.bw_seq[self.index(t)]
    }

    pub fn c(&self, t: i64) -> &DMatrix<f64> {
        &self.c_seq[self.index(t)]
    }

    /// Stable content hash (FNV-1a over the matrix bits) used to check sharing.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let seqs = [&self.a_seq, &self.b_seq, &self.bw_seq, &self.c_seq];
        for seq in seqs {
            for m in seq.iter() {
                for v in m.iter() {
                    for byte in v.to_bits().to_le_bytes() {
                        h ^= byte as u64;
                        h = h.wrapping_mul(0x100000001b3);
                    }
                }
            }
        }
        h
    }
}

fn draw_regime(rng: &mut ChaCha8Rng, cfg: &SystemConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = with_spectral_norm(gaussian_matrix(rng, cfg.n, cfg.n), 1.0 - cfg.gamma);
    let b = with_spectral_norm(gaussian_matrix(rng, cfg.n, cfg.m), cfg.kappa_b);
    (a, b)
}

/// Draws a system path for `horizon` steps. Deterministic in `(cfg, horizon, seed)`.
pub fn generate_system(cfg: &SystemConfig, horizon: usize, seed: u64) -> Result<SystemPath> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(config("horizon must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = match cfg.output_map {
        OutputMap::Identity => DMatrix::identity(cfg.p, cfg.n),
        OutputMap::RandomConstant => with_spectral_norm(gaussian_matrix(&mut rng, cfg.p, cfg.n), 1.0),
    };
    let bw_fixed = match cfg.disturbance_map {
        DisturbanceMap::Identity => Some(DMatrix::identity(cfg.n, cfg.q)),
        DisturbanceMap::Random => {
            Some(with_spectral_norm(gaussian_matrix(&mut rng, cfg.n, cfg.q), 1.0))
        }
        DisturbanceMap::Matched => None,
    };

    let mut a_seq = Vec::with_capacity(horizon);
    let mut b_seq = Vec::with_capacity(horizon);
    match &cfg.schedule {
        Schedule::PerStep { jitter } => {
            let (a0, b0) = draw_regime(&mut rng, cfg);
            for _ in 0..horizon {
                let za = gaussian_matrix(&mut rng, cfg.n, cfg.n);
                let zb = gaussian_matrix(&mut rng, cfg.n, cfg.m);
                a_seq.push(with_spectral_norm(&a0 + za * *jitter, 1.0 - cfg.gamma));
                b_seq.push(with_spectral_norm(&b0 + zb * *jitter, cfg.kappa_b));
            }
        }
        schedule => {
            let changes: Vec<usize> = match schedule {
                Schedule::Constant => Vec::new(),
                Schedule::Piecewise { change_times } => {
                    if let Some(&last) = change_times.last() {
                        if last > horizon {
                            return Err(config(format!(
                                "change time {last} is beyond the horizon {horizon}"
                            )));
                        }
                    }
                    change_times.iter().copied().filter(|&t| t > 1).collect()
                }
                Schedule::RandomChanges { count } => {
                    if *count > horizon.saturating_sub(1) {
                        return Err(config("schedule.count exceeds the available change slots"));
                    }
                    let mut times: Vec<usize> =
                        sample(&mut rng, horizon - 1, *count).into_iter().map(|i| i + 2).collect();
                    times.sort_unstable();
                    times
                }
                Schedule::PerStep { .. } => unreachable!(),
            };
            let mut regime = draw_regime(&mut rng, cfg);
            let mut next = changes.iter().peekable();
            for t in 1..=horizon {
                if next.peek() == Some(&&t) {
                    next.next();
                    regime = draw_regime(&mut rng, cfg);
                }
                a_seq.push(regime.0.clone());
                b_seq.push(regime.1.clone());
            }
        }
    }
    let bw_seq = match bw_fixed {
        Some(bw) => vec![bw; horizon],
        None => b_seq.clone(),
    };
    let c_seq = vec![c; horizon];
    SystemPath::new(a_seq, b_seq, bw_seq, c_seq, cfg.gamma, cfg.kappa_b)
}
