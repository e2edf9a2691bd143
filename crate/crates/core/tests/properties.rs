use fmlsim::harness::{run_nufm, run_nufm_with, BatchSpec, BoundForm, BoundOptions, ExperimentConfig};
use fmlsim::metacore::{central_difference_hvp, sample_batch, ParamVector};
use fmlsim::oracles::brute_force_assignment;
use fmlsim::rng::keyed_rng;
use fmlsim::selection::{aggregate, contribution_scores, select_top_k, DEFAULT_SHIFT_MARGIN};
use fmlsim::tasks::{generate_population, population_constants, PopulationSpec};
use fmlsim::ural::{self, f4, f4_bracket, min_cost_assignment, solve_sp1, IvesOptions};
use fmlsim::wireless::{round_totals, sample_environment, ComputeProfile, EnvironmentSpec};
use proptest::prelude::*;

/// Gradient of `½θᵀAθ + ¼Σθ⁴` with fixed symmetric `A`.
fn quartic_grad(a: &[[f64; 3]; 3], t: &ParamVector) -> ParamVector {
    let x = t.as_slice();
    ParamVector::from_vec(
        (0..3)
            .map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + x[i].powi(3))
            .collect(),
    )
}

fn quartic_hvp(a: &[[f64; 3]; 3], t: &ParamVector, v: &ParamVector) -> ParamVector {
    let (x, v) = (t.as_slice(), v.as_slice());
    ParamVector::from_vec(
        (0..3)
            .map(|i| (0..3).map(|j| a[i][j] * v[j]).sum::<f64>() + 3.0 * x[i] * x[i] * v[i])
            .collect(),
    )
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.3f64..1.5, 3).prop_flat_map(|mags| {
        prop::collection::vec(prop::bool::ANY, 3).prop_map(move |signs| {
            mags.iter().zip(&signs).map(|(m, s)| if *s { *m } else { -m }).collect()
        })
    })
}

fn compute_profiles() -> impl Strategy<Value = Vec<ComputeProfile>> {
    prop::collection::vec((0.5f64..2.0, 1.0f64..3.0, 1usize..20, 0.05f64..2.0), 1..8).prop_map(|v| {
        v.into_iter()
            .map(|(c, iota, d, nu_max)| ComputeProfile { c, iota, d, nu_max })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hessian_free_error_is_second_order(theta in vec3(), v in vec3()) {
        let a = [[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 1.5]];
        let t = ParamVector::from_vec(theta);
        let v = ParamVector::from_vec(v);
        let exact = quartic_hvp(&a, &t, &v);
        let err = |eps: f64| {
            let approx = central_difference_hvp(|p| Ok(quartic_grad(&a, p)), &t, &v, eps).unwrap();
            (&approx - &exact).norm()
        };
        let ratio = err(0.02) / err(0.01);
        prop_assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn top_k_maximizes_total_score(u in prop::collection::vec(-5.0f64..5.0, 1..10), k_seed in 0usize..100) {
        let n = u.len();
        let k = 1 + k_seed % n;
        let ids: Vec<usize> = (0..n).collect();
        let scores = contribution_scores(&ids, &u, DEFAULT_SHIFT_MARGIN).unwrap();
        let chosen = select_top_k(&scores, k).unwrap();
        prop_assert_eq!(chosen.len(), k);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let total: f64 = chosen.iter().map(|&i| u[i]).sum();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                best = best.max((0..n).filter(|i| mask >> i & 1 == 1).map(|i| u[i]).sum());
            }
        }
        prop_assert!((total - best).abs() <= 1e-12 * best.abs().max(1.0));
    }

    #[test]
    fn shifted_scores_positive_and_ordered(u in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let ids: Vec<usize> = (0..u.len()).collect();
        let s = contribution_scores(&ids, &u, DEFAULT_SHIFT_MARGIN).unwrap();
        for a in &s {
            prop_assert!(a.shifted_u > 0.0);
            for b in &s {
                prop_assert_eq!(a.u < b.u, a.shifted_u < b.shifted_u);
            }
        }
    }

    #[test]
    fn aggregate_is_order_free(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..8)) {
        let models: Vec<ParamVector> = rows.iter().cloned().map(ParamVector::from_vec).collect();
        let mut rev = models.clone();
        rev.reverse();
        let a = aggregate(&models).unwrap();
        let b = aggregate(&rev).unwrap();
        prop_assert!((&a - &b).norm() <= 1e-12);
    }

    #[test]
    fn sp1_equalizes_times_within_caps(compute in compute_profiles(), eta1 in 0.2f64..3.0, eta2 in 0.2f64..3.0) {
        let sol = solve_sp1(&compute, eta1, eta2).unwrap();
        let t0 = compute[sol.straggler].cycles() / sol.nu[sol.straggler];
        for (cp, &nu) in compute.iter().zip(&sol.nu) {
            prop_assert!(nu > 0.0 && nu <= cp.nu_max * (1.0 + 1e-12));
            let t = cp.cycles() / nu;
            prop_assert!((t - t0).abs() <= 1e-9 * t0);
        }
    }

    #[test]
    fn f4_is_increasing_and_bracketed(b1 in 0.01f64..100.0, eta2 in 0.1f64..10.0) {
        prop_assert_eq!(f4(0.0, b1, eta2), -eta2);
        let b2 = f4_bracket(b1, eta2);
        prop_assert!(f4(b2, b1, eta2) >= 0.0);
        let mut prev = f4(0.0, b1, eta2);
        for k in 1..=200 {
            let val = f4(b2 * k as f64 / 200.0, b1, eta2);
            prop_assert!(val >= prev);
            prev = val;
        }
    }

    #[test]
    fn assignment_matches_enumeration(
        rows in 1usize..6,
        cols in 1usize..6,
        cells in prop::collection::vec((-3.0f64..2.0, 0u8..5), 36),
    ) {
        let w: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..cols).map(|c| {
                let (v, f) = cells[r * 6 + c];
                if f == 0 { f64::INFINITY } else { v }
            }).collect())
            .collect();
        let m = min_cost_assignment(&w).unwrap();
        let expected = brute_force_assignment(&w).min(0.0);
        prop_assert!((m.total - expected).abs() <= 1e-9);
        let used: Vec<usize> = m.rows.iter().flatten().cloned().collect();
        let mut dedup = used.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), used.len());
    }

    #[test]
    fn ural_allocations_are_feasible(seed in 0u64..10_000, n in 1usize..25, m in 1usize..12) {
        let mut rng = keyed_rng(&[seed, 77]);
        let spec = EnvironmentSpec { rb_count: m, ..EnvironmentSpec::default() };
        let sizes: Vec<usize> = (0..n).map(|i| 1 + (i * 7 + seed as usize) % 15).collect();
        let env = sample_environment(&mut rng, &spec, &sizes).unwrap();
        let u: Vec<f64> = (0..n).map(|i| 1.0 + ((i as u64 * 31 + seed) % 50) as f64 / 10.0).collect();
        let sol = ural::ural(&env.compute, &env.radios, &env.net, &u, &IvesOptions::default()).unwrap();
        sol.allocation.validate(&env.compute, &env.radios, &env.net).unwrap();
        let totals = round_totals(&env.compute, &env.radios, &env.net, &sol.allocation, &u, 1).unwrap();
        let recomposed = totals.objective(&env.net);
        prop_assert!((recomposed - sol.objective()).abs() <= 1e-8 * recomposed.abs().max(1.0));
    }

    #[test]
    fn batches_are_drawn_without_replacement(seed in 0u64..1000, size_seed in 0usize..100) {
        let pop = generate_population(&PopulationSpec { n: 4, ..PopulationSpec::default() }, seed).unwrap();
        let data = &pop.devices[0].data;
        let size = 1 + size_seed % data.size();
        let batch = sample_batch(data, size, &mut keyed_rng(&[seed])).unwrap();
        prop_assert_eq!(batch.size(), size);
        for (i, a) in batch.samples.iter().enumerate() {
            prop_assert!(data.samples.contains(a));
            prop_assert!(batch.samples[i + 1..].iter().all(|b| b != a) || data.samples.iter().filter(|s| *s == a).count() > 1);
        }
    }
}

#[test]
fn nufm_loss_decreases_below_inverse_smoothness() {
    let (mut pairs, mut down) = (0, 0);
    for seed in 0..20 {
        let mut cfg = ExperimentConfig { rounds: 30, ..ExperimentConfig::default() };
        let pop = generate_population(
            &cfg.population,
            fmlsim::rng::derive_seed(&[seed, fmlsim::rng::Role::Population as u64]),
        )
        .unwrap();
        let l_f = population_constants(&pop.train_devices(), cfg.hyper.alpha).unwrap().l_f();
        cfg.hyper.beta = 0.9 / l_f;
        let out = run_nufm(&cfg, seed).unwrap();
        for w in out.rows.windows(2) {
            pairs += 1;
            down += (w[1].train_loss <= w[0].train_loss) as usize;
        }
    }
    assert!(down * 100 >= pairs * 95, "{down}/{pairs}");
}

#[test]
fn identical_devices_bound_is_exact_descent() {
    let cfg = ExperimentConfig {
        population: PopulationSpec { n: 10, dim: 3, test_fraction: 0.0, ..PopulationSpec::default() },
        rounds: 5,
        participants: 4,
        batch: BatchSpec::Full,
        bound: Some(BoundOptions { resamples: 2, form: BoundForm::Theorem }),
        ..ExperimentConfig::default()
    };
    let mut pop = generate_population(&cfg.population, 9).unwrap();
    // repeated samples make the per-sample spreads vanish along with the dissimilarities
    let mut template = pop.devices[0].clone();
    let first = template.data.samples[0].clone();
    template.data = fmlsim::Batch::new(vec![first; 6]);
    for (i, d) in pop.devices.iter_mut().enumerate() {
        *d = fmlsim::tasks::Device { id: i, ..template.clone() };
    }
    let out = run_nufm_with(&cfg, pop, 9).unwrap();
    for row in &out.rows {
        let b = row.bound.as_ref().unwrap();
        assert!(b.gamma_f.abs() < 1e-12 && b.sigma_f_max.abs() < 1e-12, "{b:?}");
        assert!(b.rhs >= 0.0, "{b:?}");
        assert!(b.lhs >= b.rhs, "{b:?}");
    }
}
