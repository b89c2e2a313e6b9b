mod common;

use common::vec;
use glinbandit::bandit::{compute_batch_schedule, simulate, BGlinCb, BOptions, BanditParams, UniformRandom};
use glinbandit::env::{compute_kappa_set_problem1, kappa_sample_armsets, ArmGenerator, Instance};
use glinbandit::GlmLink;

fn planted_instance() -> Instance {
    Instance::new(vec(&[1.5, 0.5]), GlmLink::logistic(), ArmGenerator::IidUnitBall { d: 2, k: 10 }, 2.0).unwrap()
}

fn planted_params(horizon: usize, m: usize) -> BanditParams {
    let inst = planted_instance();
    let kappa = compute_kappa_set_problem1(&inst, &kappa_sample_armsets(2, 10, 2000, 0)).unwrap().kappa;
    BanditParams::batched(2, 10, horizon, 2.0, 1.0, kappa, m).with_gamma(0.1)
}

#[test]
fn planted_run_beats_uniform() {
    let horizon = 2000;
    let params = planted_params(horizon, 3);
    assert_eq!(compute_batch_schedule(&params).unwrap().len(), 3);
    let inst = planted_instance();
    let (mut ours, mut uniform) = (0.0, 0.0);
    for seed in 0..20 {
        let mut policy = BGlinCb::new(params, GlmLink::logistic(), BOptions::default()).unwrap();
        ours += simulate(&mut policy, &inst, horizon, seed).unwrap().final_regret();
        assert_eq!(policy.policy_recomputations(), 2);
        uniform += simulate(&mut UniformRandom::new(), &inst, horizon, seed).unwrap().final_regret();
    }
    assert!(ours < 0.9 * uniform, "{ours} vs uniform {uniform}");
}

#[test]
fn schedule_is_fixed_before_the_first_round() {
    let params = planted_params(3000, 4);
    let policy = BGlinCb::new(params, GlmLink::logistic(), BOptions::default()).unwrap();
    assert_eq!(policy.schedule(), compute_batch_schedule(&params).unwrap().as_slice());
    let mut a = policy.clone();
    let mut b = policy;
    let ta = simulate(&mut a, &planted_instance(), 3000, 4).unwrap();
    let tb = simulate(&mut b, &planted_instance(), 3000, 4).unwrap();
    assert_eq!(ta.records, tb.records);
}
