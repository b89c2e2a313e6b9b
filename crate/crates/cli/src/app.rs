//! Subcommand implementations behind the `glinbandit` binary.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{load_curve, write_curve, write_totals, write_traces};
use crate::plot::plot_regret;
use crate::runner::{regret_curve, run_experiment, summarize, AlgorithmSummary, ExperimentResult};
use crate::suites::{self, Check};

/// Environment variable overriding `root_seed`.
pub const SEED_ENV: &str = "GLINBANDIT_SEED";

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }
}

/// Loads a config and applies the seed override from the environment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, AppError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.root_seed = v
            .trim()
            .parse()
            .map_err(|e| ConfigError::Invalid(vec![format!("{SEED_ENV}: {e}")]))?;
        cfg.validate()?;
    }
    Ok(cfg)
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub result: ExperimentResult,
    pub totals: Vec<AlgorithmSummary>,
}

/// Runs the experiment and writes `config.toml`, `traces.csv`,
/// `summary.csv`, `totals.csv` and `regret.svg` under `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<RunOutput, AppError> {
    use anyhow::Context;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).context("cannot write config copy")?;
    let result = run_experiment(cfg, jobs).map_err(anyhow::Error::from)?;
    write_traces(&out.join("traces.csv"), &result.runs).map_err(anyhow::Error::from)?;
    let curve = regret_curve(cfg, &result);
    write_curve(&out.join("summary.csv"), &curve).map_err(anyhow::Error::from)?;
    let totals = summarize(cfg, &result);
    write_totals(&out.join("totals.csv"), &totals).map_err(anyhow::Error::from)?;
    if !curve.is_empty() {
        plot_regret(&curve, &out.join("regret.svg")).map_err(anyhow::Error::from)?;
    }
    Ok(RunOutput {
        dir: out.to_path_buf(),
        result,
        totals,
    })
}

pub fn format_totals(totals: &[AlgorithmSummary]) -> String {
    let mut s = format!(
        "{:<16} {:>5} {:>7} {:>14} {:>12} {:>10} {:>10} {:>9}\n",
        "algorithm", "runs", "failed", "final regret", "std", "count_I", "count_II", "time [s]"
    );
    for t in totals {
        s.push_str(&format!(
            "{:<16} {:>5} {:>7} {:>14.3} {:>12.3} {:>10.1} {:>10.1} {:>9.2}\n",
            t.algorithm.name(),
            t.runs,
            t.failed,
            t.mean_final_regret,
            t.std_final_regret,
            t.mean_count_i,
            t.mean_count_ii,
            t.mean_wall_time_s
        ));
    }
    s
}

pub fn cmd_run(config: &Path, out: Option<&Path>, jobs: Option<usize>) -> Result<(), AppError> {
    let cfg = load_config(config)?;
    let dir = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    let output = run_to_dir(&cfg, &dir, jobs)?;
    print!("{}", format_totals(&output.totals));
    println!("results written to {}", output.dir.display());
    let failures: Vec<String> = output
        .result
        .failures()
        .map(|r| format!("{}: {}", r.run_id(), r.outcome.as_ref().expect_err("failed run")))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(anyhow::anyhow!("{} runs failed:\n  {}", failures.len(), failures.join("\n  ")).into())
    }
}

pub fn cmd_plot(summary: &Path, out: &Path) -> Result<(), AppError> {
    let curve = load_curve(summary).map_err(anyhow::Error::from)?;
    plot_regret(&curve, out).map_err(anyhow::Error::from)?;
    println!("plot written to {}", out.display());
    Ok(())
}

pub fn cmd_kappa(config: &Path, jobs: Option<usize>) -> Result<(), AppError> {
    let cfg = load_config(config)?;
    let setups = crate::runner::prepare(&cfg, jobs).map_err(anyhow::Error::from)?;
    println!("{:>8} {:>14} {:>14} {:>14} {:>12}", "seed", "kappa", "kappa*", "kappa_hat", "stderr");
    for s in setups {
        println!(
            "{:>8} {:>14.6} {:>14.6} {:>14.6} {:>12.2e}",
            s.seed, s.kappa.kappa, s.kappa.kappa_star, s.kappa.kappa_hat, s.kappa.mean_slope_stderr
        );
    }
    Ok(())
}

/// Property suites at their full sizes, with the rarely switching
/// invariants on a small two-dimensional instance.
pub fn selftest_checks() -> Vec<Check> {
    use glinbandit::bandit::{BanditParams, RsOptions};
    use glinbandit::env::{compute_kappa_problem2, kappa_sample_armsets, unit_ball_instance};
    use glinbandit::GlmLink;

    let mut checks = vec![
        suites::design_certificates(100, 2024),
        suites::canonical_design(),
        suites::self_concordance(&GlmLink::logistic(), 1.0, -20.0, 20.0, 0.01),
        suites::self_concordance(&GlmLink::probit(), 1.0, -1.0, 1.0, 0.01),
        suites::exponential_counterexample(),
        suites::mle_gradients(100, 7),
        suites::mle_bisection(20, 11),
        suites::constrained_feasibility(100, 13),
        suites::nonconvex_grid(10, 17),
        suites::planted_elimination(500, 19),
    ];
    let mut reports = Vec::new();
    for seed in 0..10 {
        let run = || -> anyhow::Result<_> {
            let inst = unit_ball_instance(GlmLink::logistic(), 2, 10, 2.0, seed)?;
            let kappa = compute_kappa_problem2(&inst, &kappa_sample_armsets(2, 10, 2000, seed))?;
            let params = BanditParams::rarely_switching(2, 10, 3000, 2.0, 1.0, kappa, 0.05)
                .with_gamma(3.0)
                .with_lambda(1.0);
            Ok(suites::track_invariants(&inst, params, RsOptions::default(), 3000, seed, 250)?)
        };
        match run() {
            Ok(r) => reports.push(r),
            Err(e) => checks.push(Check::new(format!("invariant run, seed {seed}"), false, e.to_string())),
        }
    }
    checks.extend(suites::invariant_checks(&reports));
    checks
}

pub fn cmd_selftest() -> Result<(), AppError> {
    let checks = selftest_checks();
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed == 0 {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(anyhow::anyhow!("{failed} of {} checks failed", checks.len()).into())
    }
}
