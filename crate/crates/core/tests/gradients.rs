mod common;

use std::time::Instant;

use common::*;
use seqmarl::worldmodel::LossConfig;

const TOL: f64 = 1e-4;

#[test]
fn dynamics_term_matches_finite_differences() {
    let mut case = model_case(1);
    let err = check_model_objective(&mut case, &only(1.0, 0.0, 0.0));
    assert!(err < TOL, "max rel err {err:e}");
}

#[test]
fn reward_term_matches_finite_differences() {
    let mut case = model_case(2);
    let err = check_model_objective(&mut case, &only(0.0, 1.0, 0.0));
    assert!(err < TOL, "max rel err {err:e}");
}

#[test]
fn q_term_matches_finite_differences() {
    let mut case = model_case(3);
    let err = check_model_objective(&mut case, &only(0.0, 0.0, 1.0));
    assert!(err < TOL, "max rel err {err:e}");
}

#[test]
fn weighted_and_teacher_forced_objectives_match() {
    let mut case = model_case(4);
    let err = check_model_objective(&mut case, &LossConfig::default());
    assert!(err < TOL, "max rel err {err:e}");
    let err = check_model_objective(&mut case, &LossConfig { teacher_forcing: true, ..LossConfig::default() });
    assert!(err < TOL, "max rel err {err:e}");
}

#[test]
fn actor_objective_matches_finite_differences() {
    for seed in [5, 6] {
        let err = check_actor_objective(seed);
        assert!(err < TOL, "seed {seed}: max rel err {err:e}");
    }
}

#[test]
fn soft_cross_entropy_matches_finite_differences() {
    for seed in 0..4 {
        let err = check_soft_cross_entropy(seed);
        assert!(err < TOL, "seed {seed}: max rel err {err:e}");
    }
}

#[test]
fn full_suite_is_fast() {
    let start = Instant::now();
    let results = gradient_suite();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    for (name, err) in results {
        assert!(err < TOL, "{name}: {err:e}");
    }
}
