//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::Instant;

use glinbandit::bandit::{compute_batch_schedule, RsOptions, SwitchThreshold};
use glinbandit::GlmLink;
use glinbandit_cli::config::{Algorithm, ExperimentConfig};
use glinbandit_cli::runner::{policy_kappa, policy_params, regret_curve, run_experiment, ExperimentResult};
use glinbandit_cli::suites::{self, Check};

const RS_FLAGS: &str = "[flags]\ncriterion1_threshold = 0.01\npool_all_data = true\n";

fn config(link: &str, algorithms: &str, d: usize, k: usize, s: f64, horizon: usize, extra: &str, seeds: usize) -> ExperimentConfig {
    let seeds: Vec<usize> = (0..seeds).collect();
    let text = format!(
        "problem = \"P1\"\nalgorithm = {algorithms}\nlink = \"{link}\"\nd = {d}\nK = {k}\nT = {horizon}\nS = {s:?}\nseeds = {seeds:?}\n{extra}"
    );
    ExperimentConfig::from_toml(&text).expect("acceptance config")
}

fn mean_at(cfg: &ExperimentConfig, res: &ExperimentResult, algorithm: Algorithm, t: usize) -> f64 {
    regret_curve(cfg, res)
        .into_iter()
        .find(|p| p.algorithm == algorithm.name() && p.t == t)
        .map_or(f64::NAN, |p| p.mean)
}

/// Flattening ratio `(R(T) - R(T/2)) / (R(T/2) - R(1))` and final regret
/// relative to uniform play.
fn flattening(cfg: &ExperimentConfig, res: &ExperimentResult) -> (f64, f64, f64, f64) {
    let (half, end) = (cfg.horizon / 2, cfg.horizon);
    let r1 = mean_at(cfg, res, Algorithm::Rsglincb, 1);
    let rh = mean_at(cfg, res, Algorithm::Rsglincb, half);
    let rt = mean_at(cfg, res, Algorithm::Rsglincb, end);
    let uniform = mean_at(cfg, res, Algorithm::UniformRandom, end);
    ((rt - rh) / (rh - r1), rt / uniform, rt, uniform)
}

fn failures(res: &ExperimentResult) -> usize {
    res.failures().count()
}

fn criterion_1(cfg: &ExperimentConfig, res: &ExperimentResult, secs: f64) -> Check {
    let (growth, dominance, rt, uniform) = flattening(cfg, res);
    Check::new(
        "criterion 1",
        growth < 0.35 && dominance <= 0.60 && failures(res) == 0,
        format!(
            "logistic T = 20000, 10 seeds: second-half growth {:.1}% of first half (limit 35%), \
             final regret {rt:.1} = {:.1}% of uniform {uniform:.1} (limit 60%), {} failed runs, {secs:.0} s",
            100.0 * growth,
            100.0 * dominance,
            failures(res)
        ),
    )
}

fn criterion_2(cfg: &ExperimentConfig, res: &ExperimentResult) -> Check {
    let mut worst_ratio: f64 = 0.0;
    let mut max_ii = 0;
    let mut violations = 0;
    for run in res.runs.iter().filter(|r| r.algorithm == Algorithm::Rsglincb) {
        let Ok(trace) = &run.outcome else {
            violations += 1;
            continue;
        };
        let setup = res.setups.iter().find(|s| s.seed == run.seed).expect("setup");
        let params = policy_params(cfg, Algorithm::Rsglincb, policy_kappa(cfg, setup), &GlmLink::logistic());
        let (d, r) = (params.d as f64, params.r);
        let bound = 2.0 * d * r * r * setup.kappa.kappa * params.gamma.powi(2) * params.log_t_delta()
            + d * (1.0 + params.horizon as f64 * r * r / (params.lambda * d)).log2()
            + 2.0;
        let total = (trace.count_i + trace.count_ii) as f64;
        worst_ratio = worst_ratio.max(total / bound);
        max_ii = max_ii.max(trace.count_ii);
        if total > bound {
            violations += 1;
        }
    }
    Check::new(
        "criterion 2",
        violations == 0 && max_ii <= 200,
        format!(
            "{violations} seeds above the switch bound (worst count/bound {worst_ratio:.2e}), max count_II {max_ii} (limit 200)"
        ),
    )
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let cfg = config("probit", "[\"rsglincb\", \"uniform_random\"]", 5, 20, 3.0, 5000, RS_FLAGS, 10);
    let res = run_experiment(&cfg, None).expect("probit run");
    let (growth, dominance, rt, uniform) = flattening(&cfg, &res);
    Check::new(
        "criterion 3",
        growth < 0.50 && dominance <= 0.70 && failures(&res) == 0,
        format!(
            "probit T = 5000, 10 seeds: second-half growth {:.1}% of first half (limit 50%), \
             final regret {rt:.1} = {:.1}% of uniform {uniform:.1} (limit 70%), {} failed runs, {:.0} s",
            100.0 * growth,
            100.0 * dominance,
            failures(&res),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let cfg = config("logistic", "[\"bglincb\", \"uniform_random\"]", 3, 10, 2.0, 10_000, "M = 4\n", 10);
    let res = run_experiment(&cfg, None).expect("batched run");
    let mut recomputation_counts = Vec::new();
    let mut mismatched = 0;
    let mut schedules = Vec::new();
    for run in res.runs.iter().filter(|r| r.algorithm == Algorithm::Bglincb) {
        let Ok(trace) = &run.outcome else {
            mismatched += 1;
            continue;
        };
        let setup = res.setups.iter().find(|s| s.seed == run.seed).expect("setup");
        let params = policy_params(&cfg, Algorithm::Bglincb, policy_kappa(&cfg, setup), &GlmLink::logistic());
        let schedule = compute_batch_schedule(&params).expect("schedule");
        let expected: Vec<usize> = schedule
            .iter()
            .scan(0, |end, len| {
                *end += len;
                Some(*end + 1)
            })
            .take(schedule.len().saturating_sub(1))
            .collect();
        let observed: Vec<usize> = trace.records.iter().filter(|r| r.switch2).map(|r| r.t).collect();
        if observed != expected {
            mismatched += 1;
        }
        recomputation_counts.push(trace.count_ii);
        if !schedules.contains(&schedule) {
            schedules.push(schedule);
        }
    }
    let exact = recomputation_counts.iter().all(|&c| c == 3);
    let rt = mean_at(&cfg, &res, Algorithm::Bglincb, cfg.horizon);
    let uniform = mean_at(&cfg, &res, Algorithm::UniformRandom, cfg.horizon);
    Check::new(
        "criterion 4",
        exact && mismatched == 0 && rt <= 0.7 * uniform,
        format!(
            "M = 4, T = 10000, 10 seeds: recomputations {recomputation_counts:?} (need 3 each), schedules {schedules:?}, \
             {mismatched} runs off schedule, final regret {rt:.1} = {:.1}% of uniform {uniform:.1} (limit 70%), {:.0} s",
            100.0 * rt / uniform,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn combine(name: &str, parts: Vec<Check>) -> Check {
    let pass = parts.iter().all(|c| c.pass);
    let detail = parts
        .iter()
        .map(|c| format!("[{} {}: {}]", if c.pass { "ok" } else { "fail" }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join(" ");
    Check::new(name, pass, detail)
}

fn criterion_5() -> Check {
    combine("criterion 5", vec![suites::design_certificates(100, 2024), suites::canonical_design()])
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let mut parts = vec![
        suites::self_concordance(&GlmLink::logistic(), 1.0, -20.0, 20.0, 0.01),
        suites::self_concordance(&GlmLink::probit(), 1.0, -20.0, 20.0, 0.01),
        suites::exponential_counterexample(),
    ];
    let secs = start.elapsed().as_secs_f64();
    parts.push(Check::new("runtime", secs < 1.0, format!("{secs:.3} s (limit 1 s)")));
    combine("criterion 6", parts)
}

fn criterion_7() -> Check {
    combine(
        "criterion 7",
        vec![
            suites::mle_gradients(100, 7),
            suites::mle_bisection(20, 11),
            suites::constrained_feasibility(100, 13),
            suites::nonconvex_grid(10, 17),
        ],
    )
}

fn criterion_8(cfg: &ExperimentConfig) -> Check {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.seeds = (0..20).collect();
    cfg.algorithm = glinbandit_cli::config::AlgorithmSpec::One(Algorithm::Rsglincb);
    let setups = glinbandit_cli::runner::prepare(&cfg, None).expect("criterion 8 setups");
    let opts = RsOptions {
        threshold: SwitchThreshold::Fixed(0.01),
        pool_all_data: true,
        ..RsOptions::default()
    };
    let mut reports = Vec::new();
    let mut parts = Vec::new();
    for setup in &setups {
        let params = policy_params(&cfg, Algorithm::Rsglincb, policy_kappa(&cfg, setup), &setup.instance.link);
        match suites::track_invariants(&setup.instance, params, opts, cfg.horizon, setup.run_seed, 250) {
            Ok(r) => reports.push(r),
            Err(e) => parts.push(Check::new(format!("seed {}", setup.seed), false, e.to_string())),
        }
    }
    parts.extend(suites::invariant_checks(&reports));
    parts.push(suites::planted_elimination(1000, 19));
    let mut check = combine("criterion 8", parts);
    check.detail.push_str(&format!(" ({:.0} s)", start.elapsed().as_secs_f64()));
    check
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filter: Vec<usize> = args.iter().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| filter.is_empty() || filter.contains(&n);

    let mut checks: Vec<Check> = Vec::new();
    let mut report = |c: Check| {
        println!("{c}");
        checks.push(c);
    };

    let logistic = config("logistic", "[\"rsglincb\", \"uniform_random\"]", 5, 20, 5.0, 20_000, RS_FLAGS, 10);
    if wanted(1) || wanted(2) {
        let start = Instant::now();
        let res = run_experiment(&logistic, None).expect("logistic run");
        let secs = start.elapsed().as_secs_f64();
        if wanted(1) {
            report(criterion_1(&logistic, &res, secs));
        }
        if wanted(2) {
            report(criterion_2(&logistic, &res));
        }
    }
    if wanted(3) {
        report(criterion_3());
    }
    if wanted(4) {
        report(criterion_4());
    }
    if wanted(5) {
        report(criterion_5());
    }
    if wanted(6) {
        report(criterion_6());
    }
    if wanted(7) {
        report(criterion_7());
    }
    if wanted(8) {
        report(criterion_8(&logistic));
    }

    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
