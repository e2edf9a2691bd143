//! Meta-gradient estimators on one device: exact Hessian, first-order and
//! Hessian-free, against the closed-form population meta-gradient.

use fmlsim::metacore::{exact_meta_gradient, meta_gradient, EstimatorMode, MetaHyper, ParamVector};
use fmlsim::tasks::{generate_population, PopulationSpec};

pub fn run_example() -> fmlsim::Result<Vec<(EstimatorMode, f64)>> {
    let pop = generate_population(&PopulationSpec { n: 2, dim: 4, size_mean: 20.0, ..PopulationSpec::default() }, 1)?;
    let dev = &pop.devices[0];
    let theta = ParamVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]);
    let alpha = 0.05;
    let exact = exact_meta_gradient(&dev.model, &dev.data, &theta, alpha)?;
    println!("device {} with {} samples, |exact meta-gradient| = {:.6}", dev.id, dev.size(), exact.norm());
    let mut out = Vec::new();
    for mode in [EstimatorMode::Hessian, EstimatorMode::FirstOrder, EstimatorMode::HessianFree] {
        let hyper = MetaHyper { alpha, mode, ..MetaHyper::default() };
        let g = meta_gradient(&dev.model, &theta, &dev.data, &dev.data, &dev.data, &hyper)?;
        let rel = (&g - &exact).norm() / exact.norm();
        println!("{mode:?}: relative error {rel:.3e}");
        out.push((mode, rel));
    }
    Ok(out)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
