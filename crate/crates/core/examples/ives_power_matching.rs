//! Resource-block matching and shared-rate power control, iterated on the delay.

use fmlsim::ural::{ives, IvesOptions};
use fmlsim::wireless::{sample_environment, EnvironmentSpec};

pub fn run_example() -> fmlsim::Result<Vec<f64>> {
    let mut rng = fmlsim::rng::keyed_rng(&[3]);
    let env = sample_environment(&mut rng, &EnvironmentSpec { rb_count: 4, ..EnvironmentSpec::default() }, &[1; 8])?;
    let u = vec![3.0, 1.5, 4.0, 2.5, 1.0, 5.0, 2.0, 3.5];
    let sol = ives(&u, &env.radios, &env.net, &IvesOptions::default())?;
    println!("objective by iteration: {:?}", sol.history);
    println!("{} iterations, delay {:.4} s", sol.iterations, sol.delta);
    for (i, z) in sol.assignment.iter().enumerate() {
        match z {
            Some(m) => println!("device {i} (u = {}): RB {m}, power {:.4} of {:.4}", u[i], sol.power[i], env.radios[i].p_max),
            None => println!("device {i} (u = {}): not selected", u[i]),
        }
    }
    Ok(sol.history)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
