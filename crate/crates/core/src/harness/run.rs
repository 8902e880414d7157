use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controllers::{build_controller, ControllerKind, ControllerSpec, InitialGain};
use crate::dac::{compute_oco_constants, theoretical_history, theoretical_step_size, OcoConstants, ProblemConstants};
use crate::error::{Error, Result};
use crate::estimation::{compute_beta, theoretical_scalings, EstimatorConfig, EstimatorMode};
use crate::harness::{ControllerEntry, CostConfig, ExperimentConfig, RunMode};
use crate::lds_sim::{generate_disturbance, generate_system, rollout, CostSpec, DisturbanceRealization, SystemPath};
use crate::linalg::random_psd;
use crate::regret::{best_dac_in_hindsight, cumulative_regret, fit_scaling_exponent, Comparator, ScalingFit, SolverParams};

/// Random stream identifiers. Episode `i` uses seed `base_seed + i`; each
/// consumer draws from `stream_seed(seed, stream)`.
pub mod streams {
    pub const SYSTEM: u64 = 0;
    pub const DISTURBANCE: u64 = 1;
    pub const COST: u64 = 2;
    pub const COMPARATOR: u64 = 3;
    /// Controller `j` in the config uses `CONTROLLER + j`.
    pub const CONTROLLER: u64 = 100;
}

/// SplitMix64 finalizer over `seed` and `stream`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters in force for one horizon after applying the run mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedParams {
    pub horizon: usize,
    pub h: usize,
    pub eta: f64,
    #[serde(rename = "N")]
    pub n_core: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub beta: f64,
    pub detection_threshold: f64,
    pub kappa_m: f64,
    pub gamma_t: Option<f64>,
    pub explore_steps: usize,
    pub constants: ProblemConstants,
    pub oco: OcoConstants,
}

fn cost_constants(cost: &CostConfig) -> Result<(f64, f64)> {
    Ok(match cost {
        // unit spectral norm after scaling
        CostConfig::RandomQuadratic => (2.0, 2.0),
        CostConfig::Quadratic { q, r } => {
            let spec = CostSpec::quadratic(to_matrix(q), to_matrix(r))?;
            (spec.lipschitz, spec.grad_bound)
        }
        CostConfig::Linear { alpha } => {
            let n = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
            (n, n)
        }
    })
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Resolves every learning parameter for horizon `horizon`.
pub fn resolve_params(cfg: &ExperimentConfig, horizon: usize) -> Result<ResolvedParams> {
    let p = &cfg.policy;
    let sys = &cfg.system;
    let (lipschitz, grad_bound) = cost_constants(&cfg.cost)?;
    let theory = cfg.mode == RunMode::Theory;
    let h = match (p.h, theory) {
        (Some(h), _) => h,
        (None, true) => theoretical_history(horizon, sys.gamma)?,
        (None, false) => return Err(crate::error::config("policy.h is required in experiments mode")),
    };
    let constants = ProblemConstants {
        lipschitz,
        grad_bound,
        // generated output maps have unit spectral norm
        kappa_a: 1.0,
        kappa_b: sys.kappa_b,
        kappa_w: cfg.disturbance.kappa_w,
        kappa_e: cfg.disturbance.kappa_e,
        kappa_m: p.kappa_m,
        h,
        gamma: sys.gamma,
        n: sys.n,
        m: sys.m,
    };
    let oco = compute_oco_constants(&constants);
    let (n_theory, sigma_theory) = match p.gamma_t {
        Some(g) if theory => theoretical_scalings(g, horizon, h)?,
        _ => (0, 0.0),
    };
    let n_core = p.n_core.unwrap_or(n_theory);
    let sigma = p.sigma.unwrap_or(sigma_theory);
    let eta = p.eta.unwrap_or_else(|| theoretical_step_size(&oco, h, horizon));
    let beta = p.beta.unwrap_or_else(|| compute_beta(p.delta, p.lambda, sigma, h, n_core, &constants));
    let explore_steps = ((horizon as f64).powf(2.0 / 3.0) - 1e-9).ceil() as usize;
    Ok(ResolvedParams {
        horizon,
        h,
        eta,
        n_core,
        sigma,
        lambda: p.lambda,
        delta: p.delta,
        beta,
        detection_threshold: crate::estimation::detection_threshold(beta, sigma, n_core),
        kappa_m: p.kappa_m,
        gamma_t: p.gamma_t,
        explore_steps: explore_steps.max(h + 1),
        constants,
        oco,
    })
}

/// Controller spec for entry `index` of the config on episode `seed`.
pub fn controller_spec(
    entry: &ControllerEntry,
    index: usize,
    params: &ResolvedParams,
    cfg: &ExperimentConfig,
    seed: u64,
) -> ControllerSpec {
    let kind = entry.kind;
    let estimator = kind.needs_estimator().then(|| EstimatorConfig {
        n_core: params.n_core,
        h: params.h,
        lambda: params.lambda,
        sigma: params.sigma,
        delta: params.delta,
        mode: if kind == ControllerKind::OlcZkCpd { EstimatorMode::Cpd } else { EstimatorMode::Periodic },
    });
    ControllerSpec {
        kind,
        eta: entry.eta.unwrap_or(params.eta),
        h: params.h,
        kappa_m: params.kappa_m,
        estimator,
        setting: cfg.policy.setting,
        beta: params.beta,
        initial_gain: entry.initial_gain.unwrap_or(InitialGain::Random),
        explore_steps: entry.explore_steps.unwrap_or(params.explore_steps).min(params.horizon),
        seed: stream_seed(seed, streams::CONTROLLER + index as u64),
    }
}

/// System, disturbances and cost of one episode.
pub struct EpisodeSetup {
    pub seed: u64,
    pub sys: Arc<SystemPath>,
    pub dist: DisturbanceRealization,
    pub cost: CostSpec,
}

pub fn episode_setup(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<EpisodeSetup> {
    let s = &cfg.system;
    let sys = Arc::new(generate_system(s, horizon, stream_seed(seed, streams::SYSTEM))?);
    let dist = generate_disturbance(&cfg.disturbance, s.q, s.p, horizon, stream_seed(seed, streams::DISTURBANCE))?;
    let cost = match &cfg.cost {
        CostConfig::RandomQuadratic => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, streams::COST));
            let q = random_psd(&mut rng, s.p);
            let r = random_psd(&mut rng, s.m);
            let unit = |m: DMatrix<f64>| {
                let norm = crate::linalg::spectral_norm(&m);
                if norm > 0.0 { m / norm } else { m }
            };
            CostSpec::quadratic(unit(q), unit(r))?
        }
        CostConfig::Quadratic { q, r } => CostSpec::quadratic(to_matrix(q), to_matrix(r))?,
        CostConfig::Linear { alpha } => CostSpec::linear(vec![DVector::from_column_slice(alpha); horizon]),
    };
    Ok(EpisodeSetup { seed, sys, dist, cost })
}

/// What one controller produced on one episode.
#[derive(Debug, Clone)]
pub struct ControllerEpisode {
    pub costs: Vec<f64>,
    pub regret: Vec<f64>,
    /// `NaN` where the controller holds no estimate.
    pub est_err: Vec<f64>,
    pub detection_times: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub seed: u64,
    pub system_fingerprint: u64,
    pub num_changes: usize,
    pub comparator_objective: f64,
    pub controllers: Vec<ControllerEpisode>,
}

pub fn run_episode(cfg: &ExperimentConfig, params: &ResolvedParams, seed: u64) -> Result<EpisodeResult> {
    let setup = episode_setup(cfg, params.horizon, seed)?;
    let wrap = |controller: &str, e: Error| Error::Episode { seed, controller: controller.to_string(), source: Box::new(e) };
    let solver = SolverParams {
        tol: cfg.comparator.tol,
        max_iters: cfg.comparator.max_iters,
        starts: cfg.comparator.starts,
        seed: stream_seed(seed, streams::COMPARATOR),
    };
    let comparator: Comparator =
        best_dac_in_hindsight(&setup.sys, &setup.dist, &setup.cost, params.h, params.kappa_m, &solver)
            .map_err(|e| wrap("comparator", e))?;
    let n = setup.sys.dims().0;
    let mut controllers = Vec::with_capacity(cfg.controllers.len());
    for (j, entry) in cfg.controllers.iter().enumerate() {
        let spec = controller_spec(entry, j, params, cfg, seed);
        let run = || -> Result<ControllerEpisode> {
            let mut ctrl = build_controller(&spec, &setup.sys, &setup.dist)?;
            let trace = rollout(&setup.sys, &setup.dist, &mut ctrl, &setup.cost, &DVector::zeros(n))?;
            let costs = trace.costs();
            if let Some(bad) = costs.iter().position(|c| !c.is_finite()) {
                return Err(crate::error::contract(format!("non-finite cost at t = {}", bad + 1)));
            }
            let regret = cumulative_regret(&costs, &comparator.costs)?;
            Ok(ControllerEpisode {
                est_err: trace.records.iter().map(|r| r.estimation_error.unwrap_or(f64::NAN)).collect(),
                detection_times: trace.detection_times(),
                costs,
                regret,
            })
        };
        controllers.push(run().map_err(|e| wrap(&entry.label(), e))?);
    }
    Ok(EpisodeResult {
        seed,
        system_fingerprint: setup.sys.fingerprint(),
        num_changes: setup.sys.num_changes(),
        comparator_objective: comparator.objective,
        controllers,
    })
}

/// Per-step statistics across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub t: usize,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub cost_mean: f64,
    pub est_err_mean: f64,
    /// Mean number of detections up to and including `t`.
    pub detections_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerAggregate {
    pub name: String,
    pub kind: ControllerKind,
    pub series: Vec<SeriesRow>,
    pub final_regrets: Vec<f64>,
    pub final_regret_mean: f64,
    pub final_regret_std: f64,
    pub detection_times: Vec<Vec<usize>>,
}

impl ControllerAggregate {
    /// Mean per-step cost over `t in [from, to]` (1-based, inclusive).
    pub fn mean_cost(&self, from: usize, to: usize) -> f64 {
        let rows = &self.series[from - 1..to];
        rows.iter().map(|r| r.cost_mean).sum::<f64>() / rows.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub system_fingerprint: String,
    pub num_changes: usize,
    pub comparator_objective: f64,
}

#[derive(Debug, Clone)]
pub struct AggregateResult {
    pub params: ResolvedParams,
    pub controllers: Vec<ControllerAggregate>,
    pub episodes: Vec<EpisodeMeta>,
}

/// Mean and unbiased standard deviation (0 for a single sample).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn nan_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.filter(|x| !x.is_nan()).fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

pub fn aggregate(cfg: &ExperimentConfig, params: ResolvedParams, mut episodes: Vec<EpisodeResult>) -> AggregateResult {
    // order by seed so aggregates do not depend on completion order
    episodes.sort_by_key(|e| e.seed);
    let horizon = params.horizon;
    let controllers = cfg
        .controllers
        .iter()
        .enumerate()
        .map(|(j, entry)| {
            let runs: Vec<&ControllerEpisode> = episodes.iter().map(|e| &e.controllers[j]).collect();
            let mut counts = vec![0usize; runs.len()];
            let series = (1..=horizon)
                .map(|t| {
                    let regrets: Vec<f64> = runs.iter().map(|r| r.regret[t - 1]).collect();
                    let (regret_mean, regret_std) = mean_std(&regrets);
                    for (c, r) in counts.iter_mut().zip(&runs) {
                        *c += r.detection_times.binary_search(&t).is_ok() as usize;
                    }
                    SeriesRow {
                        t,
                        regret_mean,
                        regret_std,
                        cost_mean: runs.iter().map(|r| r.costs[t - 1]).sum::<f64>() / runs.len() as f64,
                        est_err_mean: nan_mean(runs.iter().map(|r| r.est_err[t - 1])),
                        detections_mean: counts.iter().sum::<usize>() as f64 / runs.len() as f64,
                    }
                })
                .collect();
            let final_regrets: Vec<f64> = runs.iter().map(|r| *r.regret.last().unwrap_or(&0.0)).collect();
            let (final_regret_mean, final_regret_std) = mean_std(&final_regrets);
            ControllerAggregate {
                name: entry.label(),
                kind: entry.kind,
                series,
                final_regrets,
                final_regret_mean,
                final_regret_std,
                detection_times: runs.iter().map(|r| r.detection_times.clone()).collect(),
            }
        })
        .collect();
    let episodes = episodes
        .iter()
        .map(|e| EpisodeMeta {
            seed: e.seed,
            system_fingerprint: format!("{:016x}", e.system_fingerprint),
            num_changes: e.num_changes,
            comparator_objective: e.comparator_objective,
        })
        .collect();
    AggregateResult { params, controllers, episodes }
}

/// Runs every controller on `runs` seeded episodes at `horizon`.
pub fn run_at_horizon(cfg: &ExperimentConfig, horizon: usize) -> Result<AggregateResult> {
    cfg.validate()?;
    let params = resolve_params(cfg, horizon)?;
    let episodes = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| run_episode(cfg, &params, cfg.base_seed + i))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, params, episodes))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateResult> {
    run_at_horizon(cfg, cfg.horizon)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub results: Vec<AggregateResult>,
    /// Per controller label, the log-log fit of mean final regret against `T`.
    pub fits: Vec<(String, Option<ScalingFit>)>,
}

pub fn sweep(cfg: &ExperimentConfig, horizons: &[usize]) -> Result<SweepResult> {
    let results = horizons.iter().map(|&t| run_at_horizon(cfg, t)).collect::<Result<Vec<_>>>()?;
    let fits = cfg
        .controllers
        .iter()
        .enumerate()
        .map(|(j, entry)| {
            let points: Vec<(f64, f64)> =
                results.iter().map(|r| (r.params.horizon as f64, r.controllers[j].final_regret_mean)).collect();
            (entry.label(), fit_scaling_exponent(&points).ok())
        })
        .collect();
    Ok(SweepResult { results, fits })
}

/// The comparison lineup: both zero-knowledge variants and the five baselines.
pub fn comparison_lineup() -> Vec<ControllerEntry> {
    [
        ControllerKind::OlcZk,
        ControllerKind::OlcZkCpd,
        ControllerKind::FixedM,
        ControllerKind::RandomM,
        ControllerKind::FixedG,
        ControllerKind::RandomG,
        ControllerKind::OlcTi,
    ]
    .into_iter()
    .map(ControllerEntry::of)
    .collect()
}

pub fn compare(cfg: &ExperimentConfig) -> Result<AggregateResult> {
    let mut cfg = cfg.clone();
    cfg.controllers = comparison_lineup();
    run_experiment(&cfg)
}
