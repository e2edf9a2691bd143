//! Regression against checked-in files under `tests/golden/`.
//! Set `FMLSIM_BLESS=1` to rewrite them after an intended change.

use std::path::PathBuf;

use fmlsim::harness::{run_nufm, run_wireless, write_metrics_csv, AllocationMode, ExperimentConfig};
use fmlsim::oracles::random_ives_instance;
use fmlsim::rng::keyed_rng;
use fmlsim::tasks::{generate_population, Population, PopulationSpec};
use fmlsim::ural::{IvesOptions, UralInstance, UralSolution};
use fmlsim::wireless::sample_environment;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("FMLSIM_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(expected, actual, "{name} differs from its golden file");
}

fn small_instance() -> UralInstance {
    let mut rng = keyed_rng(&[42]);
    let (u, radios, net) = random_ives_instance(&mut rng).unwrap();
    let env = sample_environment(&mut rng, &Default::default(), &vec![3; u.len()]).unwrap();
    UralInstance { compute: env.compute, radios, net, u }
}

#[test]
fn ural_instance_round_trip_and_solution() {
    let inst = small_instance();
    check("ural_instance.json", &serde_json::to_string_pretty(&inst).unwrap());
    let loaded: UralInstance =
        serde_json::from_str(&std::fs::read_to_string(golden("ural_instance.json")).unwrap()).unwrap();
    assert_eq!(loaded, inst);
    let sol = loaded.solve(&IvesOptions::default()).unwrap();
    check("ural_solution.json", &serde_json::to_string_pretty(&sol).unwrap());
    let stored: UralSolution =
        serde_json::from_str(&std::fs::read_to_string(golden("ural_solution.json")).unwrap()).unwrap();
    assert_eq!(stored, sol);
}

#[test]
fn population_round_trip() {
    let spec = PopulationSpec { n: 4, dim: 2, size_mean: 3.0, size_sd: 1.0, ..PopulationSpec::default() };
    let pop = generate_population(&spec, 7).unwrap();
    let text = pop.to_json().unwrap();
    check("population.json", &text);
    assert_eq!(Population::from_json(&text).unwrap(), pop);
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.population.n = 12;
    cfg.population.dim = 3;
    cfg.participants = 3;
    cfg.rounds = 4;
    cfg
}

#[test]
fn nufm_metrics() {
    let out = run_nufm(&small_config(), 3).unwrap();
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &[out]).unwrap();
    check("nufm_metrics.csv", std::str::from_utf8(&csv).unwrap());
}

#[test]
fn wireless_metrics() {
    let cfg = ExperimentConfig { allocation: Some(AllocationMode::Ural), ..small_config() };
    let out = run_wireless(&cfg, 3).unwrap();
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &[out]).unwrap();
    check("wireless_metrics.csv", std::str::from_utf8(&csv).unwrap());
}
