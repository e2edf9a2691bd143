//! Synthetic non-IID population: two classes per device, truncated-Gaussian
//! sample counts, half the devices held out.

use fmlsim::tasks::{generate_population, population_constants, Population, PopulationSpec};

pub fn run_example() -> fmlsim::Result<Population> {
    let spec = PopulationSpec::default();
    let pop = generate_population(&spec, 2024)?;
    let sizes: Vec<usize> = pop.devices.iter().map(|d| d.size()).collect();
    let total: usize = sizes.iter().sum();
    println!(
        "{} devices ({} train, {} held out), {} samples, sizes {}..={}",
        pop.devices.len(),
        pop.train.len(),
        pop.test.len(),
        total,
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );
    for d in pop.devices.iter().take(3) {
        println!("device {}: classes {:?}, {} samples", d.id, d.classes, d.size());
    }
    let c = population_constants(&pop.train_devices(), 0.05)?;
    println!("L = {:.3}, sigma_G = {:.3}, sigma_H = {:.3}, gamma_H = {:.3}, L_F = {:.3}", c.l, c.sigma_g, c.sigma_h, c.gamma_h, c.l_f());
    let back = Population::from_json(&pop.to_json()?)?;
    assert_eq!(back, pop);
    Ok(pop)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
