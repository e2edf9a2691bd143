//! Closed-form CPU frequencies: every device finishes with the straggler.

use fmlsim::oracles::grid_sp1;
use fmlsim::ural::{g1_objective, solve_sp1};
use fmlsim::wireless::ComputeProfile;

pub fn run_example() -> fmlsim::Result<(f64, f64)> {
    let compute = vec![
        ComputeProfile { c: 1.0, iota: 2.0, d: 4, nu_max: 2.0 },
        ComputeProfile { c: 1.5, iota: 2.0, d: 6, nu_max: 1.2 },
        ComputeProfile { c: 0.8, iota: 2.0, d: 3, nu_max: 0.4 },
    ];
    let sol = solve_sp1(&compute, 1.0, 1.0)?;
    for (i, (cp, nu)) in compute.iter().zip(&sol.nu).enumerate() {
        println!("device {i}: nu = {nu:.5} (max {}), time {:.5}", cp.nu_max, cp.cycles() / nu);
    }
    let (grid, _) = grid_sp1(&compute, 1.0, 1.0, 60, 20);
    println!(
        "straggler {}, objective {:.8}, recomputed {:.8}, grid search {:.8}",
        sol.straggler,
        sol.objective,
        g1_objective(&compute, 1.0, 1.0, &sol.nu),
        grid
    );
    Ok((sol.objective, grid))
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
