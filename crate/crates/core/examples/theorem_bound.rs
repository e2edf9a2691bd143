//! Monte-Carlo one-round loss decrease against its lower bound, with the
//! λ floors and the first-order variance terms.

use fmlsim::harness::{run_nufm, BatchSpec, BoundForm, BoundOptions, ExperimentConfig};

pub fn run_example() -> fmlsim::Result<usize> {
    let mut cfg = ExperimentConfig {
        rounds: 10,
        participants: 5,
        batch: BatchSpec::Capped(3),
        bound: Some(BoundOptions { resamples: 64, form: BoundForm::Theorem }),
        ..ExperimentConfig::default()
    };
    cfg.population.n = 20;
    let out = run_nufm(&cfg, 2)?;
    let mut held = 0;
    for r in &out.rows {
        let b = r.bound.as_ref().unwrap();
        held += b.holds as usize;
        println!(
            "round {:>2}: decrease {:>8.4} ± {:.4}, bound {:>9.4}, lambda1 >= {:.3}, lambda2 >= {:.3}",
            r.round, b.lhs, b.lhs_se, b.rhs, b.lambda1_floor, b.lambda2_floor
        );
    }
    let b = out.rows[0].bound.as_ref().unwrap();
    println!(
        "L_F {:.3}, gamma_F {:.3}, sigma_F {:.3}, first-order {:.3}, hessian-free {:.3}",
        b.l_f, b.gamma_f, b.sigma_f_max, b.sigma_tilde_first_order, b.sigma_tilde_hessian_free
    );
    println!("bound held in {held}/{} rounds", out.rows.len());
    Ok(held)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
