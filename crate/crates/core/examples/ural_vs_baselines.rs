//! One wireless round under URAL and the four baselines, same scores and environment.

use fmlsim::harness::{run_wireless, AllocationMode, ExperimentConfig};

pub fn run_example() -> fmlsim::Result<Vec<(AllocationMode, f64)>> {
    let mut out = Vec::new();
    for mode in [
        AllocationMode::Ural,
        AllocationMode::NufmGreedy,
        AllocationMode::NufmRandom,
        AllocationMode::Greedy,
        AllocationMode::Random,
    ] {
        let cfg = ExperimentConfig { rounds: 5, allocation: Some(mode), ..ExperimentConfig::default() };
        let run = run_wireless(&cfg, 7)?;
        let n = run.rows.len() as f64;
        let mean = |f: fn(&fmlsim::harness::RoundMetrics) -> Option<f64>| run.rows.iter().filter_map(f).sum::<f64>() / n;
        let obj = mean(|r| r.objective);
        println!(
            "{:<12} objective {:>9.3}  energy {:>8.3} J  time {:>9.3} s  devices {:.1}",
            mode.label(),
            obj,
            mean(|r| r.energy),
            mean(|r| r.time),
            run.rows.iter().map(|r| r.selected.len() as f64).sum::<f64>() / n
        );
        out.push((mode, obj));
    }
    Ok(out)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
