//! Every crate example runs and produces consistent output.

#[allow(dead_code)]
#[path = "../examples/meta_gradient.rs"]
mod meta_gradient;
#[allow(dead_code)]
#[path = "../examples/population.rs"]
mod population;
#[allow(dead_code)]
#[path = "../examples/contribution_selection.rs"]
mod contribution_selection;
#[allow(dead_code)]
#[path = "../examples/wireless_costs.rs"]
mod wireless_costs;
#[allow(dead_code)]
#[path = "../examples/sp1_frequency.rs"]
mod sp1_frequency;
#[allow(dead_code)]
#[path = "../examples/ives_power_matching.rs"]
mod ives_power_matching;
#[allow(dead_code)]
#[path = "../examples/ural_vs_baselines.rs"]
mod ural_vs_baselines;
#[allow(dead_code)]
#[path = "../examples/nufm_training.rs"]
mod nufm_training;
#[allow(dead_code)]
#[path = "../examples/theorem_bound.rs"]
mod theorem_bound;
#[allow(dead_code)]
#[path = "../examples/eta_sweep.rs"]
mod eta_sweep;

use fmlsim::harness::AllocationMode;
use fmlsim::EstimatorMode;

#[test]
fn meta_gradient_modes() {
    let errs = meta_gradient::run_example().unwrap();
    let get = |m| errs.iter().find(|(x, _)| *x == m).unwrap().1;
    assert!(get(EstimatorMode::Hessian) < 1e-10);
    assert!(get(EstimatorMode::HessianFree) < 1e-6);
    assert!(get(EstimatorMode::FirstOrder) > get(EstimatorMode::HessianFree));
}

#[test]
fn population_example() {
    let pop = population::run_example().unwrap();
    assert_eq!(pop.train.len() + pop.test.len(), 100);
}

#[test]
fn selection_example() {
    assert_eq!(contribution_selection::run_example().unwrap().len(), 4);
}

#[test]
fn wireless_costs_example() {
    assert!(wireless_costs::run_example().unwrap().iter().all(|(e, t)| *e > 0.0 && *t > 0.0));
}

#[test]
fn sp1_example() {
    let (closed, grid) = sp1_frequency::run_example().unwrap();
    assert!(closed <= grid + 1e-9);
}

#[test]
fn ives_example() {
    let h = ives_power_matching::run_example().unwrap();
    assert!(h.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn ural_example() {
    let rows = ural_vs_baselines::run_example().unwrap();
    let ural = rows.iter().find(|(m, _)| *m == AllocationMode::Ural).unwrap().1;
    let random = rows.iter().find(|(m, _)| *m == AllocationMode::Random).unwrap().1;
    assert!(ural >= random);
}

#[test]
fn nufm_example() {
    let (a, b) = nufm_training::run_example().unwrap();
    assert!(a.is_finite() && b.is_finite());
}

#[test]
fn bound_example() {
    assert!(theorem_bound::run_example().unwrap() >= 9);
}

#[test]
fn sweep_example() {
    let rows = eta_sweep::run_example().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[1].0 <= w[0].0));
}
