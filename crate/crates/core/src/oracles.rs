//! Independent reference computations and the comparison suites built on them.
//!
//! Nothing here calls the closed-form solvers it checks: SP1 is compared
//! with a refined grid search, assignments with exhaustive enumeration,
//! power control with a dense sweep over the shared normalized power, and
//! meta-gradients with a dense-matrix evaluation of the population formula.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::metacore::{
    device_smoothness, grad_estimate, gradient_spread, hessian_spread, meta_gradient, sample_batch, Batch, LossModel,
    MetaHyper, ParamVector, Sample, SmoothnessConstants,
};
use crate::rng::{keyed_rng, Role};
use crate::ural::{self, IvesOptions};
use crate::wireless::{
    comm_cost, comp_cost, sample_environment, ComputeProfile, EnvironmentSpec, NetworkConfig,
    RadioProfile,
};

/// Names accepted by [`run_suite`].
pub const SUITES: &[&str] = &[
    "meta-gradient",
    "estimator-moments",
    "sp1",
    "assignment",
    "bisection",
    "rb-matching",
    "sp2-power",
    "ives-monotone",
];

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub violations: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub seconds: f64,
    /// Suite-specific extra figures, such as iteration histograms.
    pub notes: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} violations, max deviation {:.3e} (tolerance {:.1e}), {:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.cases,
            self.violations,
            self.max_deviation,
            self.tolerance,
            self.seconds
        )?;
        for n in &self.notes {
            write!(f, "; {n}")?;
        }
        Ok(())
    }
}

/// Runs a named suite with its default number of cases.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    match name {
        "meta-gradient" => meta_gradient_suite(seed, 100),
        "estimator-moments" => estimator_moments_suite(seed, 5, 10_000),
        "sp1" => sp1_suite(seed, 50),
        "assignment" => assignment_suite(seed, 500),
        "bisection" => bisection_suite(seed, 1000),
        "rb-matching" => rb_matching_suite(seed, 100),
        "sp2-power" => sp2_power_suite(seed, 50),
        "ives-monotone" => ives_suite(seed, 100),
        other => Err(invalid(format!(
            "unknown oracle suite '{other}' (known: {})",
            SUITES.join(", ")
        ))),
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    violations: usize,
    max_dev: f64,
    tol: f64,
    start: Instant,
    notes: Vec<String>,
}

impl Tally {
    fn new(name: &'static str, tol: f64) -> Self {
        Self {
            name,
            cases: 0,
            violations: 0,
            max_dev: 0.0,
            tol,
            start: Instant::now(),
            notes: Vec::new(),
        }
    }

    fn record(&mut self, deviation: f64) {
        self.cases += 1;
        if !(deviation <= self.tol) {
            self.violations += 1;
        }
        if deviation.is_nan() {
            self.max_dev = f64::NAN;
        } else if !self.max_dev.is_nan() {
            self.max_dev = self.max_dev.max(deviation);
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.name.into(),
            cases: self.cases,
            violations: self.violations,
            max_deviation: self.max_dev,
            tolerance: self.tol,
            seconds: self.start.elapsed().as_secs_f64(),
            notes: self.notes,
        }
    }
}

// ---------------------------------------------------------------------------
// Meta-gradient

/// `(I − αA)(A(θ − α(Aθ − b)) − b)` with dense matrices.
pub fn quadratic_meta_gradient(a: &DMatrix<f64>, b: &DVector<f64>, theta: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let inner = theta - (a * theta - b) * alpha;
    (&eye - a * alpha) * (a * inner - b)
}

/// Random quadratic dataset with its dense moment matrices.
pub fn random_quadratic(rng: &mut ChaCha8Rng, samples: usize, dim: usize) -> (Batch, DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut rows = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: f64 = rng.random_range(-3.0..3.0);
        for r in 0..dim {
            b[r] += x[r] * y;
            for c in 0..dim {
                a[(r, c)] += x[r] * x[c];
            }
        }
        rows.push(Sample::new(x, y));
    }
    let n = samples as f64;
    (Batch::new(rows), a / n, b / n)
}

/// Relative error of the full-batch estimator against the dense formula.
pub fn meta_gradient_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("meta-gradient", 1e-10);
    let mut rng = keyed_rng(&[seed, 0x6d67]);
    let model = LossModel::quadratic();
    for _ in 0..cases {
        let dim = rng.random_range(1..=6);
        let samples = rng.random_range(dim..=3 * dim + 5);
        let (data, a, b) = random_quadratic(&mut rng, samples, dim);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let alpha = rng.random_range(0.0..0.3);
        let expected = quadratic_meta_gradient(&a, &b, &DVector::from_vec(theta.clone()), alpha);
        let hyper = MetaHyper { alpha, ..MetaHyper::default() };
        let got = meta_gradient(&model, &ParamVector::from_vec(theta), &data, &data, &data, &hyper)?;
        let err = (got.as_dvector() - &expected).norm() / expected.norm().max(1e-300);
        tally.record(if expected.norm() < 1e-12 { got.norm() } else { err });
    }
    Ok(tally.finish())
}

/// Monte-Carlo bias and mean squared error of the mini-batch estimator
/// against their bounds, with constants measured on each instance's data
/// (the sampling distribution) over every point the estimator touches.
/// Deviation is empirical value over bound plus three standard errors.
pub fn estimator_moments_suite(seed: u64, cases: usize, resamples: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("estimator-moments", 1.0);
    let mut rng = keyed_rng(&[seed, 0x6d6f]);
    let model = LossModel::quadratic();
    let mut worst = (0.0_f64, 0.0_f64);
    for case in 0..cases {
        let dim = rng.random_range(2..=4);
        let samples = rng.random_range(20..=40);
        let (data, a, b) = random_quadratic(&mut rng, samples, dim);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta_v = DVector::from_vec(theta.clone());
        let theta = ParamVector::from_vec(theta);
        let alpha = rng.random_range(0.02..0.1);
        let (d, dp, dpp) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(2..=6));
        let hyper = MetaHyper { alpha, ..MetaHyper::default() };
        let exact = ParamVector::from_vec(quadratic_meta_gradient(&a, &b, &theta_v, alpha).as_slice().to_vec());

        let mut sum = DVector::<f64>::zeros(dim);
        let mut sum_sq = DVector::<f64>::zeros(dim);
        let mut errs = Vec::with_capacity(resamples);
        let mut sigma_g = gradient_spread(&model, &data, &theta)?;
        let mut zeta = 0.0_f64;
        for r in 0..resamples {
            let draw = |role: Role| -> Result<Batch> {
                let mut g = keyed_rng(&[seed, case as u64, r as u64, role as u64]);
                let size = match role {
                    Role::Inner => d,
                    Role::Outer => dp,
                    _ => dpp,
                };
                sample_batch(&data, size, &mut g)
            };
            let inner = draw(Role::Inner)?;
            let g = meta_gradient(&model, &theta, &inner, &draw(Role::Outer)?, &draw(Role::Curvature)?, &hyper)?;
            let adapted = theta.add_scaled(-alpha, &grad_estimate(&model, &theta, &inner)?);
            sigma_g = sigma_g.max(gradient_spread(&model, &data, &adapted)?);
            zeta = zeta.max(grad_estimate(&model, &adapted, &data)?.norm());
            let e = (&g - &exact).as_dvector().clone();
            sum += &e;
            sum_sq += e.component_mul(&e);
            errs.push(e.norm_squared());
        }
        let rr = resamples as f64;
        let mean = &sum / rr;
        // standard error of the norm of the mean vector
        let var_sum: f64 = (0..dim).map(|k| (sum_sq[k] / rr - mean[k] * mean[k]).max(0.0)).sum::<f64>() * rr / (rr - 1.0);
        let bias_se = (var_sum / rr).sqrt();
        let mse = errs.iter().sum::<f64>() / rr;
        let mse_se = (errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (rr - 1.0) / rr).sqrt();

        let consts = SmoothnessConstants {
            alpha,
            l: device_smoothness(&model, &data, dim)?,
            rho: 0.0,
            zeta: Some(zeta),
            sigma_g,
            sigma_h: hessian_spread(&model, &data, &theta)?,
            gamma_g: None,
            gamma_h: 0.0,
        };
        let bias_ratio = mean.norm() / (consts.bias_bound(d) + 3.0 * bias_se);
        let mse_ratio = mse / (consts.variance_bound(d, dp, dpp) + 3.0 * mse_se);
        worst = (worst.0.max(bias_ratio), worst.1.max(mse_ratio));
        tally.record(bias_ratio);
        tally.record(mse_ratio);
    }
    tally.notes.push(format!(
        "{resamples} resamples per instance; worst bias ratio {:.3}, worst second-moment ratio {:.3}",
        worst.0, worst.1
    ));
    Ok(tally.finish())
}

// ---------------------------------------------------------------------------
// SP1

/// Minimum of the computation objective by a uniform grid on `(0, ν_max]`
/// per device followed by repeated zooming around the incumbent.
pub fn grid_sp1(compute: &[ComputeProfile], eta1: f64, eta2: f64, points: usize, zoom_rounds: usize) -> (f64, Vec<f64>) {
    let n = compute.len();
    let eval = |nu: &[f64]| -> f64 {
        let mut e = 0.0;
        let mut t = 0.0_f64;
        for (cp, &v) in compute.iter().zip(nu) {
            let (ti, ei) = comp_cost(cp, 1, v).unwrap_or((f64::INFINITY, 0.0));
            e += ei;
            t = t.max(ti);
        }
        eta1 * e + eta2 * t
    };
    let mut lo: Vec<f64> = vec![0.0; n];
    let mut hi: Vec<f64> = compute.iter().map(|c| c.nu_max).collect();
    let mut best = (f64::INFINITY, hi.clone());
    let mut k = points;
    for _ in 0..=zoom_rounds {
        let steps: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / k as f64).collect();
        let mut idx = vec![1usize; n];
        let mut nu = vec![0.0; n];
        loop {
            for i in 0..n {
                nu[i] = (lo[i] + steps[i] * idx[i] as f64).min(compute[i].nu_max);
            }
            let v = eval(&nu);
            if v < best.0 {
                best = (v, nu.clone());
            }
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] <= k {
                    break;
                }
                idx[d] = 1;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        for i in 0..n {
            let c = best.1[i];
            lo[i] = (c - 2.0 * steps[i]).max(0.0);
            hi[i] = (c + 2.0 * steps[i]).min(compute[i].nu_max);
        }
        k = 20;
    }
    best
}

pub fn random_compute(rng: &mut ChaCha8Rng, n: usize) -> Vec<ComputeProfile> {
    (0..n)
        .map(|_| ComputeProfile {
            c: rng.random_range(0.5..2.0),
            iota: rng.random_range(0.5..3.0),
            d: rng.random_range(1..=10),
            nu_max: rng.random_range(0.05..2.0),
        })
        .collect()
}

/// Closed form minus refined grid minimum; negative values mean the closed
/// form is better than every grid point.
pub fn sp1_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("sp1", 1e-6);
    let mut rng = keyed_rng(&[seed, 0x5031]);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..cases {
        let n = rng.random_range(1..=3);
        let compute = random_compute(&mut rng, n);
        let eta1 = rng.random_range(0.5..2.5);
        let eta2 = rng.random_range(0.5..2.5);
        let closed = ural::solve_sp1(&compute, eta1, eta2)?;
        let (grid, _) = grid_sp1(&compute, eta1, eta2, 100, 30);
        let gap = closed.objective - grid;
        worst_gap = worst_gap.max(gap);
        tally.record(gap.max(0.0) / grid.abs().max(1.0));
    }
    tally.notes.push(format!("largest closed-minus-grid gap {worst_gap:.3e}"));
    Ok(tally.finish())
}

// ---------------------------------------------------------------------------
// Assignment

/// Minimum total over every partial matching that avoids forbidden edges.
pub fn brute_force_assignment(weights: &[Vec<f64>]) -> f64 {
    fn go(weights: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == weights.len() {
            return 0.0;
        }
        let mut best = go(weights, row + 1, used);
        for c in 0..used.len() {
            let w = weights[row][c];
            if used[c] || !w.is_finite() {
                continue;
            }
            used[c] = true;
            best = best.min(w + go(weights, row + 1, used));
            used[c] = false;
        }
        best
    }
    let m = weights.first().map(|r| r.len()).unwrap_or(0);
    go(weights, 0, &mut vec![false; m])
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    let forbid = rng.random_range(0.0..0.6);
    (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    if rng.random::<f64>() < forbid {
                        f64::INFINITY
                    } else {
                        rng.random_range(-10.0..4.0)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn assignment_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("assignment", 1e-9);
    let mut rng = keyed_rng(&[seed, 0x4153]);
    for _ in 0..cases {
        let n = rng.random_range(1..=7);
        let m = rng.random_range(1..=7);
        let w = random_weights(&mut rng, n, m);
        let got = ural::min_cost_assignment(&w)?;
        let mut structural = false;
        let mut seen = vec![false; m];
        let mut total = 0.0;
        for (i, c) in got.rows.iter().enumerate() {
            if let Some(c) = *c {
                structural |= seen[c] || !(w[i][c] < 0.0);
                seen[c] = true;
                total += w[i][c];
            }
        }
        let best = brute_force_assignment(&w);
        let dev = if structural { f64::INFINITY } else { (total - best).abs().max((got.total - total).abs()) };
        tally.record(dev);
    }
    Ok(tally.finish())
}

// ---------------------------------------------------------------------------
// Bisection

pub fn bisection_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("bisection", 1e-8);
    let mut rng = keyed_rng(&[seed, 0x4234]);
    let check = |b1: f64, eta2: f64| -> Result<f64> {
        let r = ural::f4_zero(b1, eta2, 1e-10)?;
        let b2 = (1.0 + ((eta2 / b1).max(1.0) - 1.0).sqrt()).exp();
        if !(r.root > 0.0 && r.root <= b2) {
            return Ok(f64::INFINITY);
        }
        let p = r.root;
        Ok((b1 * ((1.0 + p) * (1.0 + p).ln() - p) - eta2).abs())
    };
    for _ in 0..cases {
        let b1 = 10f64.powf(rng.random_range(-2.0..2.0));
        let eta2 = 10f64.powf(rng.random_range(-1.0..1.0));
        tally.record(check(b1, eta2)?);
    }
    let mut e_dev = 0.0_f64;
    for v in [0.5, 1.0, 2.0] {
        let r = ural::f4_zero(v, v, 1e-10)?;
        e_dev = e_dev.max((r.root - (std::f64::consts::E - 1.0)).abs());
    }
    tally.record(e_dev);
    tally.notes.push(format!("|root - (e-1)| for b1 = eta2: {e_dev:.3e}"));
    Ok(tally.finish())
}

// ---------------------------------------------------------------------------
// SP2 pieces

pub fn random_radios(rng: &mut ChaCha8Rng, n: usize) -> Vec<RadioProfile> {
    (0..n)
        .map(|_| RadioProfile {
            h: rng.random_range(0.1..1.0),
            p_max: rng.random_range(0.05..1.0),
        })
        .collect()
}

pub fn random_network(rng: &mut ChaCha8Rng, m: usize) -> NetworkConfig {
    NetworkConfig {
        bandwidth: 1.0,
        noise_psd: 0.1,
        interference: (0..m).map(|_| rng.random_range(0.0..0.8)).collect(),
        payload: 1.0,
        eta1: rng.random_range(0.5..2.0),
        eta2: rng.random_range(0.5..2.0),
    }
}

/// Best objective `Σ z(u − η1·δ·μ)` over every partial assignment at delay `delta`.
pub fn brute_force_rb(u: &[f64], delta: f64, radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    let m = net.rb_count();
    let profit = |i: usize, k: usize| -> Option<f64> {
        let floor = net.interference[k] + net.bandwidth * net.noise_psd;
        let mu = floor * (2f64.powf(net.payload / (net.bandwidth * delta)) - 1.0) / radios[i].h;
        (mu <= radios[i].p_max).then(|| u[i] - net.eta1 * delta * mu)
    };
    fn go(row: usize, n: usize, used: &mut Vec<bool>, profit: &dyn Fn(usize, usize) -> Option<f64>) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = go(row + 1, n, used, profit);
        for k in 0..used.len() {
            if used[k] {
                continue;
            }
            if let Some(p) = profit(row, k) {
                used[k] = true;
                best = best.max(p + go(row + 1, n, used, profit));
                used[k] = false;
            }
        }
        best
    }
    go(0, radios.len(), &mut vec![false; m], &profit)
}

pub fn rb_matching_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("rb-matching", 1e-9);
    let mut rng = keyed_rng(&[seed, 0x5242]);
    for _ in 0..cases {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=4);
        let radios = random_radios(&mut rng, n);
        let net = random_network(&mut rng, m);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let delta = rng.random_range(0.5..6.0);
        let z = ural::rb_matching(&u, delta, &radios, &net)?;
        let mut value = 0.0;
        for (i, k) in z.iter().enumerate() {
            if let Some(k) = *k {
                let floor = net.interference[k] + net.bandwidth * net.noise_psd;
                let mu = floor * (2f64.powf(net.payload / (net.bandwidth * delta)) - 1.0) / radios[i].h;
                value += u[i] - net.eta1 * delta * mu.min(radios[i].p_max);
            }
        }
        tally.record((brute_force_rb(&u, delta, &radios, &net) - value).abs());
    }
    Ok(tally.finish())
}

/// Upload objective recomputed from the cost model for a common normalized power.
fn g2_at_shared_power(z: &[Option<usize>], p_tilde: f64, u: &[f64], radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    let mut value = 0.0;
    let mut worst = 0.0_f64;
    for (i, k) in z.iter().enumerate() {
        if let Some(k) = *k {
            let floor = net.interference[k] + net.bandwidth * net.noise_psd;
            let p = (floor * p_tilde / radios[i].h).min(radios[i].p_max);
            match comm_cost(&radios[i], net, k, p) {
                Ok((t, e)) => {
                    value += u[i] - net.eta1 * e;
                    worst = worst.max(t);
                }
                Err(_) => return f64::NEG_INFINITY,
            }
        }
    }
    value - net.eta2 * worst
}

/// Best objective over a dense sweep of the shared normalized power.
pub fn sweep_sp2_power(z: &[Option<usize>], u: &[f64], radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    let cap = z
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.map(|k| radios[i].h * radios[i].p_max / (net.interference[k] + net.bandwidth * net.noise_psd)))
        .fold(f64::INFINITY, f64::min);
    if !cap.is_finite() {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, cap);
    let mut best = (f64::NEG_INFINITY, cap);
    for _ in 0..8 {
        let k = 2000;
        let step = (hi - lo) / k as f64;
        for s in 1..=k {
            let p = lo + step * s as f64;
            let v = g2_at_shared_power(z, p, u, radios, net);
            if v > best.0 {
                best = (v, p);
            }
        }
        lo = (best.1 - 2.0 * step).max(0.0);
        hi = (best.1 + 2.0 * step).min(cap);
    }
    best.0
}

pub fn sp2_power_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("sp2-power", 1e-6);
    let mut rng = keyed_rng(&[seed, 0x5032]);
    for _ in 0..cases {
        let n = rng.random_range(1..=4);
        let m = n + rng.random_range(0..=2);
        let radios = random_radios(&mut rng, n);
        let net = random_network(&mut rng, m);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let mut cols: Vec<usize> = (0..m).collect();
        for i in (1..cols.len()).rev() {
            cols.swap(i, rng.random_range(0..=i));
        }
        let z: Vec<Option<usize>> = (0..n).map(|i| (rng.random::<f64>() < 0.8).then_some(cols[i])).collect();
        let p = ural::solve_sp2_power(&z, &u, &radios, &net, 1e-12)?;
        let got = ural::g2_objective(&z, &p, &u, &radios, &net);
        let sweep = sweep_sp2_power(&z, &u, &radios, &net);
        tally.record((sweep - got).max(0.0));
    }
    Ok(tally.finish())
}

// ---------------------------------------------------------------------------
// IVES

/// Random environment and positive scores for IVES checks.
pub fn random_ives_instance(rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<RadioProfile>, NetworkConfig)> {
    let n = rng.random_range(2..=30);
    let spec = EnvironmentSpec::default();
    let env = sample_environment(rng, &spec, &vec![1; n])?;
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..6.0)).collect();
    Ok((u, env.radios, env.net))
}

/// Largest relative decrease between successive IVES objectives.
pub fn ives_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut tally = Tally::new("ives-monotone", 1e-12);
    let mut rng = keyed_rng(&[seed, 0x4956]);
    let opts = IvesOptions::default();
    let mut within3 = 0;
    let mut max_iters = 0;
    let mut unconverged = 0;
    for _ in 0..cases {
        let (u, radios, net) = random_ives_instance(&mut rng)?;
        let sol = ural::ives(&u, &radios, &net, &opts)?;
        let drop = sol
            .history
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max);
        tally.record(drop);
        if sol.iterations <= 3 {
            within3 += 1;
        }
        if sol.iterations >= opts.max_iters {
            unconverged += 1;
        }
        max_iters = max_iters.max(sol.iterations);
    }
    // every instance must converge, and at least 80% within three iterations
    tally.violations += unconverged;
    if 5 * within3 < 4 * cases {
        tally.violations += 1;
    }
    tally.notes.push(format!("{within3}/{cases} within 3 iterations"));
    tally.notes.push(format!("max iterations {max_iters}, hit cap {unconverged}"));
    Ok(tally.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_assignment_small() {
        assert_eq!(brute_force_assignment(&[vec![-2.0]]), -2.0);
        assert_eq!(brute_force_assignment(&[vec![f64::INFINITY]]), 0.0);
        assert_eq!(brute_force_assignment(&[vec![-1.0, -3.0], vec![-2.0, -5.0]]), -6.0);
    }

    #[test]
    fn grid_finds_scalar_optimum() {
        let cp = [ComputeProfile { c: 1.0, iota: 2.0, d: 1, nu_max: 2.0 }];
        let (v, nu) = grid_sp1(&cp, 1.0, 1.0, 100, 20);
        let star = 0.5f64.cbrt();
        assert!((nu[0] - star).abs() < 1e-6);
        assert!((v - (star * star + 1.0 / star)).abs() < 1e-9);
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", 0).is_err());
    }
}
