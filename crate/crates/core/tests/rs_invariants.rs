mod common;

use common::vec;
use glinbandit::bandit::{
    eliminate, simulate, BanditParams, Policy, RsGlinCb, RsOptions, SwitchThreshold,
};
use glinbandit::env::{
    compute_kappa_problem2, kappa_sample_armsets, unit_ball_instance, ArmGenerator, Instance, SeedStreams,
};
use glinbandit::linalg::min_eigenvalue;
use glinbandit::{GlmLink, Matrix, SpdMatrix, Vector};
use proptest::prelude::*;
use std::f64::consts::E;

const D: usize = 5;
const K: usize = 20;
const S: f64 = 5.0;
const HORIZON: usize = 20_000;
const DELTA: f64 = 0.05;

fn experiment_options() -> RsOptions {
    RsOptions {
        threshold: SwitchThreshold::Fixed(0.01),
        pool_all_data: true,
        ..RsOptions::default()
    }
}

fn setup(seed: u64) -> (Instance, BanditParams) {
    let inst = unit_ball_instance(GlmLink::logistic(), D, K, S, seed).unwrap();
    let kappa = compute_kappa_problem2(&inst, &kappa_sample_armsets(D, K, 2000, seed)).unwrap();
    (inst, BanditParams::rarely_switching(D, K, HORIZON, S, 1.0, kappa, DELTA))
}

struct SeedReport {
    loewner_violations: usize,
    sandwich_checks: usize,
    sandwich_violations: usize,
    premise_failures: usize,
    unsafe_eliminations: usize,
    potential: f64,
    potential_budget: f64,
    count_i: usize,
    count_ii: usize,
    count_i_bound: f64,
    count_ii_log2_bound: f64,
}

fn run_seed(seed: u64) -> SeedReport {
    let (inst, params) = setup(seed);
    run_policy(&inst, params, experiment_options(), HORIZON, seed)
}

fn run_policy(inst: &Instance, params: BanditParams, opts: RsOptions, horizon: usize, seed: u64) -> SeedReport {
    let d = inst.theta_star.len();
    let link = inst.link.clone();
    let mut policy = RsGlinCb::new(params, link.clone(), opts).unwrap();
    let mut streams = SeedStreams::new(seed);
    let lambda = params.lambda;
    let mut h_star = Matrix::identity(d, d) * lambda;
    let mut h_star_w = Matrix::identity(d, d) * lambda;
    let mut report = SeedReport {
        loewner_violations: 0,
        sandwich_checks: 0,
        sandwich_violations: 0,
        premise_failures: 0,
        unsafe_eliminations: 0,
        potential: 0.0,
        potential_budget: 0.0,
        count_i: 0,
        count_ii: 0,
        count_i_bound: 0.0,
        count_ii_log2_bound: 0.0,
    };
    let width = policy.warmup_width();
    for t in 1..=horizon {
        let armset = inst.generator.armset(t, &mut streams.env).unwrap();
        let arms = armset.arms();
        let h_before = policy.h().matrix().clone();
        let theta_o = policy.theta_o().clone();

        // confidence premise for the warm-up bounds on this arm set
        let covered = arms
            .iter()
            .all(|x| x.dot(&(&theta_o - &inst.theta_star)).abs() <= width * policy.v().inv_norm(x));
        if covered {
            let kept = eliminate(arms, &(0..arms.len()).collect::<Vec<_>>(), &theta_o, policy.v(), width);
            if !kept.contains(&inst.optimal_arm(arms)) {
                report.unsafe_eliminations += 1;
            }
        }

        let decision = policy.select(arms, &mut streams.policy).unwrap();
        let x = &arms[decision.index];
        let reward = link.sample_reward(x.dot(&inst.theta_star), &mut streams.reward).unwrap();
        policy.observe(decision.index, reward).unwrap();

        if decision.switch_i {
            h_star_w.ger(link.mu_dot(x.dot(&inst.theta_star)), x, x, 1.0);
        } else {
            h_star.ger(link.mu_dot(x.dot(&inst.theta_star)), x, x, 1.0);
        }
        let err = policy.theta_o() - &inst.theta_star;
        let premise_ok = err.dot(&(&h_star_w * &err)).sqrt() <= params.gamma;
        if !premise_ok {
            report.premise_failures += 1;
        }
        let h_after = policy.h().matrix();
        let scale = h_after.norm();
        if min_eigenvalue(&(h_after - &h_before)) < -1e-9 * scale {
            report.loewner_violations += 1;
        }
        if premise_ok && t % 250 == 0 {
            report.sandwich_checks += 1;
            let lower = min_eigenvalue(&(&h_star - h_after));
            let upper = min_eigenvalue(&(h_after * (E * E) - &h_star));
            if lower < -1e-6 * scale || upper < -1e-6 * scale {
                report.sandwich_violations += 1;
            }
        }
    }
    let d = d as f64;
    report.potential = policy.criterion_i_potential();
    report.potential_budget = 2.0 * d * (1.0 + policy.count_i() as f64 / (lambda * d)).ln();
    report.count_i = policy.count_i();
    report.count_ii = policy.count_ii();
    report.count_i_bound = 2.0 * d * params.kappa * params.gamma.powi(2) * params.log_t_delta();
    report.count_ii_log2_bound = d * (1.0 + horizon as f64 / (lambda * d)).log2();
    report
}

#[test]
fn switching_invariants_hold_over_twenty_seeds() {
    let reports: Vec<SeedReport> = (0..20).map(run_seed).collect();
    for (seed, r) in reports.iter().enumerate() {
        assert_eq!(r.loewner_violations, 0, "seed {seed}");
        assert_eq!(r.unsafe_eliminations, 0, "seed {seed}");
        assert!(r.potential <= r.potential_budget, "seed {seed}: {} > {}", r.potential, r.potential_budget);
        assert!((r.count_i as f64) <= r.count_i_bound, "seed {seed}");
        assert!((r.count_ii as f64 - 2.0) <= r.count_ii_log2_bound, "seed {seed}");
    }
}

#[test]
fn sandwich_holds_under_the_confidence_premise() {
    let mut checks = 0;
    for seed in 0..20 {
        let inst = unit_ball_instance(GlmLink::logistic(), 2, 10, 2.0, seed).unwrap();
        let kappa = compute_kappa_problem2(&inst, &kappa_sample_armsets(2, 10, 2000, seed)).unwrap();
        let params = BanditParams::rarely_switching(2, 10, 5000, 2.0, 1.0, kappa, DELTA)
            .with_gamma(3.0)
            .with_lambda(1.0);
        let r = run_policy(&inst, params, RsOptions::default(), 5000, seed);
        assert_eq!(r.sandwich_violations, 0, "seed {seed}");
        assert_eq!(r.loewner_violations, 0, "seed {seed}");
        assert_eq!(r.unsafe_eliminations, 0, "seed {seed}");
        assert!(r.potential <= r.potential_budget, "seed {seed}");
        checks += r.sandwich_checks;
    }
    assert!(checks >= 200);
}

#[test]
fn frozen_policy_repeats_its_choice() {
    let (inst, params) = setup(3);
    let mut policy = RsGlinCb::new(params, inst.link.clone(), experiment_options()).unwrap();
    let trace = simulate(&mut policy, &inst, 3000, 3).unwrap();
    assert!(trace.count_i < 3000);
    let mut streams = SeedStreams::new(99);
    let mut repeated = 0;
    for t in 1..=200 {
        let arms = inst.generator.armset(t, &mut streams.env).unwrap().into_arms();
        let mut probe = policy.clone();
        let first = probe.select(&arms, &mut streams.policy).unwrap();
        probe.observe(first.index, 0.0).unwrap();
        let second = probe.select(&arms, &mut streams.policy).unwrap();
        if !first.switch_i && !first.switch_ii && !second.switch_i && !second.switch_ii {
            assert_eq!(first.index, second.index);
            repeated += 1;
        }
    }
    assert!(repeated > 0);
}

#[test]
fn always_update_switches_every_round() {
    let (inst, params) = setup(1);
    let opts = RsOptions {
        always_update: true,
        ..experiment_options()
    };
    let mut policy = RsGlinCb::new(params, inst.link.clone(), opts).unwrap();
    assert_eq!(policy.name(), "always_update");
    let trace = simulate(&mut policy, &inst, 500, 1).unwrap();
    assert_eq!(trace.count_i + trace.count_ii, 500);
}

#[test]
fn always_update_is_no_worse_than_rare_switching() {
    let horizon = 5000;
    let (mut rare, mut always) = (0.0, 0.0);
    for seed in 0..5 {
        let (inst, params) = setup(seed);
        let mut p = RsGlinCb::new(params, inst.link.clone(), experiment_options()).unwrap();
        rare += simulate(&mut p, &inst, horizon, seed).unwrap().final_regret();
        let opts = RsOptions {
            always_update: true,
            ..experiment_options()
        };
        let mut q = RsGlinCb::new(params, inst.link.clone(), opts).unwrap();
        always += simulate(&mut q, &inst, horizon, seed).unwrap().final_regret();
    }
    assert!(always <= 1.2 * rare, "always_update {always} vs rsglincb {rare}");
}

#[test]
fn prefers_the_optimal_canonical_arm() {
    let arms = vec![vec(&[1.0, 0.0]), vec(&[0.0, 1.0])];
    let horizon = 5000;
    let inst = Instance::new(vec(&[1.0, 0.0]), GlmLink::logistic(), ArmGenerator::Fixed(arms.clone()), 1.0).unwrap();
    let kappa = compute_kappa_problem2(&inst, &[arms]).unwrap();
    let params = BanditParams::rarely_switching(2, 2, horizon, 1.0, 1.0, kappa, DELTA);
    let opts = experiment_options();
    let mut fraction = 0.0;
    for seed in 0..20 {
        let mut policy = RsGlinCb::new(params, GlmLink::logistic(), opts).unwrap();
        let trace = simulate(&mut policy, &inst, horizon, seed).unwrap();
        let tail = &trace.records[horizon - 1000..];
        fraction += tail.iter().filter(|r| r.arm_index == 0).count() as f64 / 1000.0;
    }
    fraction /= 20.0;
    assert!(fraction >= 0.95, "fraction {fraction}");
}

proptest! {
    #[test]
    fn planted_elimination_keeps_best_arm(seed in any::<u64>(), d in 2usize..6, k in 2usize..30, width in 0.0f64..3.0) {
        let mut r = common::rng(seed);
        let theta = common::random_direction(d, &mut r) * 2.0;
        let arms = glinbandit::env::sample_armset_unit_ball(d, k, &mut r);
        let m = SpdMatrix::scaled_identity(d, 1.0 + seed as f64 % 7.0).unwrap();
        let best = glinbandit::linalg::argmax(arms.iter().map(|x: &Vector| x.dot(&theta))).unwrap();
        let kept = eliminate(&arms, &(0..k).collect::<Vec<_>>(), &theta, &m, width);
        prop_assert!(kept.contains(&best));
    }
}
