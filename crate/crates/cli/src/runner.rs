//! Seeded execution of (algorithm x seed) grids.

use std::time::Instant;

use glinbandit::bandit::{simulate, BGlinCb, BOptions, BanditError, BanditParams, RsGlinCb, UniformRandom};
use glinbandit::env::{
    compute_kappa_set_problem1, instance_rng, kappa_sample_armsets, parse_scripted_armsets, sample_theta_sphere,
    ArmGenerator, EnvError, Instance, KappaEstimates, RunTrace,
};
use glinbandit::{GlmLink, Vector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Algorithm, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read arm file {path}: {message}")]
    ArmsFile { path: String, message: String },
    #[error("seed {seed}: {source}")]
    Instance {
        seed: u64,
        #[source]
        source: EnvError,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Per-run seed: word 0 of the ChaCha stream `seed` under key `root`.
pub fn derive_seed(root: u64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(seed);
    rng.next_u64()
}

#[derive(Clone, Debug)]
pub struct SeedSetup {
    pub seed: u64,
    pub run_seed: u64,
    pub instance: Instance,
    pub kappa: KappaEstimates,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub outcome: Result<RunTrace, BanditError>,
}

impl RunResult {
    pub fn run_id(&self) -> String {
        run_id(self.algorithm, self.seed)
    }
}

pub fn run_id(algorithm: Algorithm, seed: u64) -> String {
    format!("{}-{}", algorithm.name(), seed)
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub setups: Vec<SeedSetup>,
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn traces(&self, algorithm: Algorithm) -> impl Iterator<Item = &RunTrace> {
        self.runs
            .iter()
            .filter(move |r| r.algorithm == algorithm)
            .filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(|r| r.outcome.is_err())
    }
}

fn load_script(cfg: &ExperimentConfig) -> Result<Option<Vec<Vec<Vector>>>, RunError> {
    let Some(path) = &cfg.arms_file else {
        return Ok(None);
    };
    let err = |message: String| RunError::ArmsFile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let sets = parse_scripted_armsets(&text).map_err(|e| err(e.to_string()))?;
    if sets.len() < cfg.horizon {
        return Err(err(format!("{} rounds scripted, T = {}", sets.len(), cfg.horizon)));
    }
    let (d, k) = (sets[0][0].len(), sets[0].len());
    if d != cfg.d || k != cfg.k {
        return Err(err(format!("file has d = {d}, K = {k}; config has d = {}, K = {}", cfg.d, cfg.k)));
    }
    Ok(Some(sets))
}

/// Instance and kappa oracles for one configured seed.
pub fn seed_setup(cfg: &ExperimentConfig, script: Option<&Vec<Vec<Vector>>>, seed: u64) -> Result<SeedSetup, RunError> {
    let run_seed = derive_seed(cfg.root_seed, seed);
    let link = cfg.link.link();
    let wrap = |source| RunError::Instance { seed, source };
    let (instance, kappa) = match script {
        None => {
            let theta = sample_theta_sphere(cfg.d, cfg.s, &mut instance_rng(run_seed));
            let inst = Instance::new(theta, link, ArmGenerator::IidUnitBall { d: cfg.d, k: cfg.k }, cfg.s).map_err(wrap)?;
            let sets = kappa_sample_armsets(cfg.d, cfg.k, cfg.kappa_samples, run_seed);
            let kappa = compute_kappa_set_problem1(&inst, &sets).map_err(wrap)?;
            (inst, kappa)
        }
        Some(sets) => {
            let theta = sample_theta_sphere(cfg.d, cfg.s, &mut instance_rng(run_seed));
            let inst = Instance::new(theta, link, ArmGenerator::Scripted(sets.clone()), cfg.s).map_err(wrap)?;
            let kappa = compute_kappa_set_problem1(&inst, &sets[..cfg.horizon]).map_err(wrap)?;
            (inst, kappa)
        }
    };
    Ok(SeedSetup {
        seed,
        run_seed,
        instance,
        kappa,
    })
}

/// Kappa used to configure the policies: the override if given, else the
/// oracle value.
pub fn policy_kappa(cfg: &ExperimentConfig, setup: &SeedSetup) -> f64 {
    cfg.kappa_override.unwrap_or(setup.kappa.kappa)
}

pub fn policy_params(cfg: &ExperimentConfig, algorithm: Algorithm, kappa: f64, link: &GlmLink) -> BanditParams {
    let r = link.reward_bound();
    let mut params = match algorithm {
        Algorithm::Bglincb => BanditParams::batched(cfg.d, cfg.k, cfg.horizon, cfg.s, r, kappa, cfg.m.unwrap_or(2)),
        _ => BanditParams::rarely_switching(cfg.d, cfg.k, cfg.horizon, cfg.s, r, kappa, cfg.delta),
    };
    if let Some(g) = cfg.gamma {
        params = params.with_gamma(g);
    }
    if let Some(l) = cfg.lambda {
        params = params.with_lambda(l);
    }
    params
}

pub fn b_options(cfg: &ExperimentConfig) -> BOptions {
    let mut opts = BOptions::default();
    opts.distributional.alpha = cfg.flags.alpha;
    opts
}

/// Runs one algorithm on one prepared seed.
pub fn run_one(cfg: &ExperimentConfig, algorithm: Algorithm, setup: &SeedSetup) -> Result<RunTrace, BanditError> {
    let inst = &setup.instance;
    let params = policy_params(cfg, algorithm, policy_kappa(cfg, setup), &inst.link);
    let seed = setup.run_seed;
    match algorithm {
        Algorithm::UniformRandom => simulate(&mut UniformRandom::new(), inst, cfg.horizon, seed),
        Algorithm::Bglincb => {
            let mut p = BGlinCb::new(params, inst.link.clone(), b_options(cfg))?;
            simulate(&mut p, inst, cfg.horizon, seed)
        }
        Algorithm::Rsglincb | Algorithm::AlwaysUpdate => {
            let opts = cfg.flags.rs_options(algorithm == Algorithm::AlwaysUpdate);
            let mut p = RsGlinCb::new(params, inst.link.clone(), opts)?;
            simulate(&mut p, inst, cfg.horizon, seed)
        }
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| RunError::Pool(e.to_string()))
}

/// Prepares every seed and logs the kappa oracles.
pub fn prepare(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<SeedSetup>, RunError> {
    let script = load_script(cfg)?;
    let setups: Vec<SeedSetup> = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| seed_setup(cfg, script.as_ref(), seed))
            .collect::<Result<_, _>>()
    })?;
    for s in &setups {
        log::info!(
            "seed {}: kappa = {:.6}, kappa* = {:.6}, kappa_hat = {:.6} (slope stderr {:.2e}){}",
            s.seed,
            s.kappa.kappa,
            s.kappa.kappa_star,
            s.kappa.kappa_hat,
            s.kappa.mean_slope_stderr,
            cfg.kappa_override
                .map(|k| format!(", policies use kappa_override = {k}"))
                .unwrap_or_default()
        );
    }
    Ok(setups)
}

/// Runs every (algorithm, seed) pair on a pool of `jobs` workers (default:
/// all cores). Results are ordered by algorithm as configured, then seed.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentResult, RunError> {
    let setups = prepare(cfg, jobs)?;
    let tasks: Vec<(Algorithm, &SeedSetup)> = cfg
        .algorithms()
        .into_iter()
        .flat_map(|a| setups.iter().map(move |s| (a, s)))
        .collect();
    let start = Instant::now();
    let runs: Vec<RunResult> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(algorithm, setup)| {
                let outcome = run_one(cfg, algorithm, setup);
                match &outcome {
                    Ok(trace) => log::debug!(
                        "{} seed {}: regret {:.3}, switches {}/{}, {:.2?}",
                        algorithm.name(),
                        setup.seed,
                        trace.final_regret(),
                        trace.count_i,
                        trace.count_ii,
                        trace.wall_time
                    ),
                    Err(e) => log::error!("{} seed {} failed: {e}", algorithm.name(), setup.seed),
                }
                RunResult {
                    algorithm,
                    seed: setup.seed,
                    outcome,
                }
            })
            .collect()
    });
    log::info!("{} runs finished in {:.2?}", runs.len(), start.elapsed());
    Ok(ExperimentResult { setups, runs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failed: usize,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub mean_count_i: f64,
    pub mean_count_ii: f64,
    pub mean_wall_time_s: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(cfg: &ExperimentConfig, result: &ExperimentResult) -> Vec<AlgorithmSummary> {
    cfg.algorithms()
        .into_iter()
        .map(|algorithm| {
            let traces: Vec<&RunTrace> = result.traces(algorithm).collect();
            let total = result.runs.iter().filter(|r| r.algorithm == algorithm).count();
            let finals: Vec<f64> = traces.iter().map(|t| t.final_regret()).collect();
            let (mean_final_regret, std_final_regret) = mean_std(&finals);
            let avg = |f: &dyn Fn(&RunTrace) -> f64| mean_std(&traces.iter().map(|t| f(t)).collect::<Vec<_>>()).0;
            AlgorithmSummary {
                algorithm,
                runs: traces.len(),
                failed: total - traces.len(),
                mean_final_regret,
                std_final_regret,
                mean_count_i: avg(&|t| t.count_i as f64),
                mean_count_ii: avg(&|t| t.count_ii as f64),
                mean_wall_time_s: avg(&|t| t.wall_time.as_secs_f64()),
            }
        })
        .collect()
}

/// Mean and standard deviation of cumulative regret at one round.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub algorithm: String,
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn regret_curve(cfg: &ExperimentConfig, result: &ExperimentResult) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    for algorithm in cfg.algorithms() {
        let traces: Vec<&RunTrace> = result.traces(algorithm).collect();
        if traces.is_empty() {
            continue;
        }
        let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
        for i in 0..len {
            let vals: Vec<f64> = traces.iter().map(|t| t.records[i].cum_regret).collect();
            let (mean, std) = mean_std(&vals);
            points.push(CurvePoint {
                algorithm: algorithm.name().to_string(),
                t: i + 1,
                mean,
                std,
                runs: vals.len(),
            });
        }
    }
    points
}
