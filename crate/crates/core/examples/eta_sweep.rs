//! Energy and wall-clock time of URAL as the energy weight grows.

use fmlsim::harness::{sweep, AllocationMode, ExperimentConfig};

pub fn run_example() -> fmlsim::Result<Vec<(f64, f64)>> {
    let cfg = ExperimentConfig {
        rounds: 5,
        repeats: 3,
        allocation: Some(AllocationMode::Ural),
        ..ExperimentConfig::default()
    };
    let values: Vec<serde_json::Value> = [0.5, 1.0, 1.5, 2.0, 2.5].iter().map(|v| serde_json::json!(v)).collect();
    let cells = sweep(&cfg, "eta1", &values)?;
    let mut out = Vec::new();
    for c in &cells {
        let e = c.aggregate.mean_energy.unwrap();
        let t = c.aggregate.mean_time.unwrap();
        println!("eta1 = {}: energy {:.3} ± {:.3} J, time {:.3} ± {:.3} s", c.value, e.mean, e.sd, t.mean, t.sd);
        out.push((e.mean, t.mean));
    }
    Ok(out)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
