//! One round of local updates, contribution scores and top-k selection.

use fmlsim::metacore::{local_update, MetaHyper, ParamVector};
use fmlsim::rng::RngStream;
use fmlsim::selection::{aggregate, contribution_scores, select_top_k, DEFAULT_SHIFT_MARGIN};
use fmlsim::tasks::{generate_population, PopulationSpec};

pub fn run_example() -> fmlsim::Result<Vec<usize>> {
    let pop = generate_population(&PopulationSpec { n: 20, ..PopulationSpec::default() }, 5)?;
    let hyper = MetaHyper { alpha: 0.05, beta: 0.05, ..MetaHyper::default() };
    let theta = ParamVector::zeros(pop.dim());
    let mut updates = Vec::new();
    for &id in &pop.train {
        let d = &pop.devices[id];
        updates.push(local_update(&d.model, &d.data, &theta, &hyper, d.size(), &RngStream::new(5, 0, id as u64))?);
    }
    let u: Vec<f64> = updates.iter().map(|x| x.u).collect();
    let scores = contribution_scores(&pop.train, &u, DEFAULT_SHIFT_MARGIN)?;
    for s in &scores {
        println!("device {:>2}: u = {:>9.4}, shifted = {:>9.4}", s.device, s.u, s.shifted_u);
    }
    let chosen = select_top_k(&scores, 4)?;
    let models: Vec<ParamVector> = chosen
        .iter()
        .map(|id| updates[pop.train.binary_search(id).unwrap()].theta.clone())
        .collect();
    let next = aggregate(&models)?;
    println!("selected {chosen:?}, |theta| after aggregation = {:.4}", next.norm());
    Ok(chosen)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
