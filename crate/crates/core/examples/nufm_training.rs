//! Federated meta-training with contribution-score selection against uniform selection.

use fmlsim::harness::{run_nufm, ExperimentConfig, SelectionMode};

pub fn run_example() -> fmlsim::Result<(f64, f64)> {
    let nufm = ExperimentConfig { rounds: 20, ..ExperimentConfig::default() };
    let uniform = ExperimentConfig { selection: SelectionMode::Uniform, ..nufm.clone() };
    let a = run_nufm(&nufm, 1)?;
    let b = run_nufm(&uniform, 1)?;
    println!("round  nufm-test  uniform-test");
    for (x, y) in a.rows.iter().zip(&b.rows).step_by(4) {
        println!("{:>5}  {:>9.4}  {:>12.4}", x.round, x.test_loss, y.test_loss);
    }
    let last = (a.rows.last().unwrap().test_loss, b.rows.last().unwrap().test_loss);
    println!("final held-out loss: nufm {:.4}, uniform {:.4}", last.0, last.1);
    Ok(last)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
