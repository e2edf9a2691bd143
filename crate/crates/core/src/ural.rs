//! Joint CPU-frequency, resource-block and power optimization.
//!
//! The round objective `U − η1·E − η2·T` splits into a computation part over
//! frequencies (solved in closed form per candidate straggler) and an upload
//! part over RB assignment and power (solved by alternating a min-cost
//! matching at a fixed delay with straggler-equalized power control).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::wireless::{Allocation, ComputeProfile, NetworkConfig, RadioProfile};

/// `η1·Σ(ι_i/2)c_iD_iν_i² + η2·max c_iD_i/ν_i`; infinite if any device with
/// work has zero frequency.
pub fn g1_objective(compute: &[ComputeProfile], eta1: f64, eta2: f64, nu: &[f64]) -> f64 {
    let mut energy = 0.0;
    let mut time = 0.0_f64;
    for (cp, &v) in compute.iter().zip(nu) {
        let k = cp.cycles();
        if k == 0.0 {
            continue;
        }
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        energy += 0.5 * cp.iota * k * v * v;
        time = time.max(k / v);
    }
    eta1 * energy + eta2 * time
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sp1Solution {
    pub nu: Vec<f64>,
    /// Device whose computation time is the largest.
    pub straggler: usize,
    pub objective: f64,
}

/// Optimal frequencies when device `j` is the straggler: every device
/// finishes together with `j`, at the stationary frequency of the reduced
/// one-variable objective or the tightest frequency cap.
pub fn sp1_fixed_straggler(j: usize, compute: &[ComputeProfile], eta1: f64, eta2: f64) -> Result<Sp1Solution> {
    let cj = compute
        .get(j)
        .ok_or_else(|| invalid(format!("straggler {j} out of range")))?
        .cycles();
    if !(cj > 0.0) {
        return Err(invalid(format!("straggler {j} has no work")));
    }
    let a1 = eta1 * compute.iter().map(|cp| cp.iota * cp.cycles().powi(3)).sum::<f64>() / (2.0 * cj * cj);
    let a2 = eta2 * cj;
    let stationary = (a2 / (2.0 * a1)).cbrt();
    let cap = compute
        .iter()
        .filter(|cp| cp.cycles() > 0.0)
        .map(|cp| cj * cp.nu_max / cp.cycles())
        .fold(f64::INFINITY, f64::min);
    let nu_j = stationary.min(cap);
    let nu: Vec<f64> = compute
        .iter()
        .enumerate()
        .map(|(i, cp)| {
            if i == j {
                nu_j.min(cp.nu_max)
            } else {
                (cp.cycles() * nu_j / cj).min(cp.nu_max)
            }
        })
        .collect();
    let objective = g1_objective(compute, eta1, eta2, &nu);
    Ok(Sp1Solution {
        nu,
        straggler: j,
        objective,
    })
}

/// Best fixed-straggler solution over all candidates, ties to the lower id.
pub fn solve_sp1(compute: &[ComputeProfile], eta1: f64, eta2: f64) -> Result<Sp1Solution> {
    let mut best: Option<Sp1Solution> = None;
    for j in 0..compute.len() {
        if compute[j].cycles() == 0.0 {
            continue;
        }
        let s = sp1_fixed_straggler(j, compute, eta1, eta2)?;
        if best.as_ref().is_none_or(|b| s.objective < b.objective) {
            best = Some(s);
        }
    }
    match best {
        Some(b) => Ok(b),
        None if !compute.is_empty() => Ok(Sp1Solution {
            nu: compute.iter().map(|c| c.nu_max).collect(),
            straggler: 0,
            objective: 0.0,
        }),
        None => Err(invalid("no devices")),
    }
}

/// Partial matching of rows to columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Column of each row, if matched.
    pub rows: Vec<Option<usize>>,
    pub total: f64,
}

/// Minimum-weight partial matching of an `n×M` matrix.
///
/// Only negative finite edges can be useful; forbidden (`+∞`, NaN) and
/// nonnegative edges are never matched. Each row is padded with a zero-cost
/// "unmatched" column so the problem becomes a full assignment of rows,
/// solved by the shortest-augmenting-path Hungarian method in `O(n²(M+n))`.
pub fn min_cost_assignment(weights: &[Vec<f64>]) -> Result<Matching> {
    let n = weights.len();
    if n == 0 {
        return Ok(Matching { rows: Vec::new(), total: 0.0 });
    }
    let m = weights[0].len();
    if weights.iter().any(|r| r.len() != m) {
        return Err(invalid("ragged weight matrix"));
    }
    let cols = m + n;
    let cost = |i: usize, c: usize| -> f64 {
        if c < m {
            let w = weights[i][c];
            if w < 0.0 {
                w
            } else {
                0.0
            }
        } else {
            0.0
        }
    };

    // 1-based potentials; column 0 is the virtual start.
    let mut pu = vec![0.0; n + 1];
    let mut pv = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - pu[i0] - pv[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    pu[owner[j]] += delta;
                    pv[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut rows = vec![None; n];
    let mut total = 0.0;
    for j in 1..=m {
        let i = owner[j];
        if i != 0 && weights[i - 1][j - 1] < 0.0 {
            rows[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    Ok(Matching { rows, total })
}

/// Power that makes device `i` upload in exactly `delta` on RB `m`,
/// `(I_m + B·N0)(2^{S/(Bδ)} − 1)/h_i`.
pub fn power_for_delay(radio: &RadioProfile, net: &NetworkConfig, m: usize, delta: f64) -> f64 {
    let bits = net.payload / (net.bandwidth * delta);
    net.noise_floor(m) * (bits * std::f64::consts::LN_2).exp_m1() / radio.h
}

/// Relative slack on the power cap when screening pairs, so a delay computed
/// from a capped power does not screen out the pair that produced it.
const CAP_SLACK: f64 = 1e-9;

/// Profit `u_i − e_{i,m}` of each device/RB pair at delay `delta`, `None`
/// where the required power exceeds the device's cap.
pub fn matching_profits(u: &[f64], delta: f64, radios: &[RadioProfile], net: &NetworkConfig) -> Vec<Vec<Option<f64>>> {
    radios
        .iter()
        .zip(u)
        .map(|(r, &ui)| {
            (0..net.rb_count())
                .map(|m| {
                    let mu = power_for_delay(r, net, m, delta);
                    if mu <= r.p_max * (1.0 + CAP_SLACK) {
                        Some(ui - net.eta1 * delta * mu.min(r.p_max))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

/// RB assignment maximizing `Σ z_{i,m}(u_i − e_{i,m})` at delay `delta`.
pub fn rb_matching(u: &[f64], delta: f64, radios: &[RadioProfile], net: &NetworkConfig) -> Result<Vec<Option<usize>>> {
    if u.len() != radios.len() {
        return Err(Error::DimensionMismatch {
            expected: radios.len(),
            found: u.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(invalid(format!("delay must be positive, got {delta}")));
    }
    let weights: Vec<Vec<f64>> = matching_profits(u, delta, radios, net)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|p| match p {
                    Some(v) if v > 0.0 => -v,
                    _ => f64::INFINITY,
                })
                .collect()
        })
        .collect();
    Ok(min_cost_assignment(&weights)?.rows)
}

/// `b1·((1+p)·ln(1+p) − p) − η2`
pub fn f4(p: f64, b1: f64, eta2: f64) -> f64 {
    b1 * ((1.0 + p) * p.ln_1p() - p) - eta2
}

/// Upper end of the bracket containing the zero of [`f4`].
pub fn f4_bracket(b1: f64, eta2: f64) -> f64 {
    (1.0 + ((eta2 / b1).max(1.0) - 1.0).sqrt()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F4Root {
    pub root: f64,
    pub iterations: usize,
    pub bracket: f64,
}

/// Zero of [`f4`] on `(0, b2]` by bisection to interval width `tol`.
pub fn f4_zero(b1: f64, eta2: f64, tol: f64) -> Result<F4Root> {
    if !(b1 > 0.0 && eta2 > 0.0 && tol > 0.0) || !(b1.is_finite() && eta2.is_finite()) {
        return Err(invalid(format!(
            "f4 needs b1 > 0, eta2 > 0, tol > 0 (got {b1}, {eta2}, {tol})"
        )));
    }
    let b2 = f4_bracket(b1, eta2);
    let (mut lo, mut hi) = (0.0, b2);
    let mut iterations = 0;
    while hi - lo > tol && iterations < 2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let v = f4(mid, b1, eta2);
        if v == 0.0 {
            return Ok(F4Root { root: mid, iterations, bracket: b2 });
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(F4Root {
        root: 0.5 * (lo + hi),
        iterations,
        bracket: b2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvesOptions {
    /// Stop when successive objectives differ by at most `rel_tol·max(1, |g2|)`.
    pub rel_tol: f64,
    pub max_iters: usize,
    pub bisection_tol: f64,
}

impl Default for IvesOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_iters: 50,
            bisection_tol: 1e-10,
        }
    }
}

fn selected(z: &[Option<usize>]) -> impl Iterator<Item = (usize, usize)> + '_ {
    z.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i, m)))
}

/// Powers when `j` is the upload straggler under assignment `z`.
///
/// Every assigned device gets the same normalized power
/// `p̃ = h·p/(I_m + B·N0)`, hence the same rate: the zero of [`f4`] with
/// `b1 = η1·Σ(I_m + B·N0)/h_i`, capped by the smallest normalized `p_max`.
pub fn sp2_power_fixed_straggler(
    j: usize,
    z: &[Option<usize>],
    radios: &[RadioProfile],
    net: &NetworkConfig,
    bisection_tol: f64,
) -> Result<Vec<f64>> {
    if z.len() != radios.len() {
        return Err(Error::DimensionMismatch {
            expected: radios.len(),
            found: z.len(),
        });
    }
    if z.get(j).copied().flatten().is_none() {
        return Err(invalid(format!("straggler {j} holds no resource block")));
    }
    let snr = |i: usize, m: usize| net.noise_floor(m) / radios[i].h;
    let b1 = net.eta1 * selected(z).map(|(i, m)| snr(i, m)).sum::<f64>();
    let cap = selected(z)
        .map(|(i, m)| radios[i].p_max / snr(i, m))
        .fold(f64::INFINITY, f64::min);
    let p_tilde = if b1 > 0.0 {
        if !(net.eta2 > 0.0) {
            return Err(invalid("power control needs eta2 > 0"));
        }
        f4_zero(b1, net.eta2, bisection_tol)?.root.min(cap)
    } else {
        cap
    };
    let mut p = vec![0.0; radios.len()];
    for (i, m) in selected(z) {
        p[i] = (snr(i, m) * p_tilde).min(radios[i].p_max);
    }
    Ok(p)
}

/// Upload objective `Σ z·u − η1·Σ z·S·p/r − η2·max z·S/r`: `−∞` if an
/// assigned device has zero rate.
pub fn g2_objective(z: &[Option<usize>], p: &[f64], u: &[f64], radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    let mut utility = 0.0;
    let mut energy = 0.0;
    let mut delay = 0.0_f64;
    for (i, m) in selected(z) {
        let rate = net.bandwidth * (radios[i].h * p[i] / net.noise_floor(m)).ln_1p() / std::f64::consts::LN_2;
        if !(rate > 0.0) {
            return f64::NEG_INFINITY;
        }
        let t = net.payload / rate;
        utility += u[i];
        energy += t * p[i];
        delay = delay.max(t);
    }
    utility - net.eta1 * energy - net.eta2 * delay
}

fn upload_delay(z: &[Option<usize>], p: &[f64], radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    selected(z)
        .map(|(i, m)| {
            let rate = net.bandwidth * (radios[i].h * p[i] / net.noise_floor(m)).ln_1p() / std::f64::consts::LN_2;
            net.payload / rate
        })
        .fold(0.0, f64::max)
}

/// Best fixed-straggler power vector for assignment `z`; zeros if nothing is assigned.
pub fn solve_sp2_power(
    z: &[Option<usize>],
    u: &[f64],
    radios: &[RadioProfile],
    net: &NetworkConfig,
    bisection_tol: f64,
) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (j, _) in selected(z) {
        let p = sp2_power_fixed_straggler(j, z, radios, net, bisection_tol)?;
        let g = g2_objective(z, &p, u, radios, net);
        if best.as_ref().is_none_or(|(bg, _)| g > *bg) {
            best = Some((g, p));
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_else(|| vec![0.0; radios.len()]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sp2Solution {
    pub assignment: Vec<Option<usize>>,
    pub power: Vec<f64>,
    /// Realized upload delay of the returned allocation.
    pub delta: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each iteration.
    pub history: Vec<f64>,
}

/// Most conservative starting delay: the slowest full-power upload over all
/// device/RB pairs, so every pair can meet it.
pub fn initial_delay(radios: &[RadioProfile], net: &NetworkConfig) -> f64 {
    let mut worst = 0.0_f64;
    for r in radios {
        for m in 0..net.rb_count() {
            let rate = net.bandwidth * (r.h * r.p_max / net.noise_floor(m)).ln_1p() / std::f64::consts::LN_2;
            worst = worst.max(net.payload / rate);
        }
    }
    worst
}

/// Alternates matching at the current delay, power control for that
/// matching, and delay update until the objective settles.
pub fn ives(u: &[f64], radios: &[RadioProfile], net: &NetworkConfig, opts: &IvesOptions) -> Result<Sp2Solution> {
    net.validate()?;
    if u.len() != radios.len() {
        return Err(Error::DimensionMismatch {
            expected: radios.len(),
            found: u.len(),
        });
    }
    let n = radios.len();
    let empty = Sp2Solution {
        assignment: vec![None; n],
        power: vec![0.0; n],
        delta: 0.0,
        objective: 0.0,
        iterations: 0,
        history: Vec::new(),
    };
    if n == 0 {
        return Ok(empty);
    }
    let mut delta = initial_delay(radios, net);
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InfeasibleTransmission(
            "some device cannot upload at full power".into(),
        ));
    }
    let mut best: Option<Sp2Solution> = None;
    let mut history = Vec::new();
    let mut prev = f64::NAN;
    for _ in 0..opts.max_iters.max(1) {
        let z = rb_matching(u, delta, radios, net)?;
        let (p, g, realized) = if z.iter().all(Option::is_none) {
            (vec![0.0; n], 0.0, 0.0)
        } else {
            let p = solve_sp2_power(&z, u, radios, net, opts.bisection_tol)?;
            let g = g2_objective(&z, &p, u, radios, net);
            (p.clone(), g, upload_delay(&z, &p, radios, net))
        };
        history.push(g);
        let improved = best.as_ref().is_none_or(|b| g > b.objective);
        if improved {
            best = Some(Sp2Solution {
                assignment: z.clone(),
                power: p,
                delta: realized,
                objective: g,
                iterations: 0,
                history: Vec::new(),
            });
        }
        if realized == 0.0 {
            break;
        }
        if (g - prev).abs() <= opts.rel_tol * g.abs().max(1.0) {
            break;
        }
        prev = g;
        delta = realized;
    }
    let mut out = best.unwrap_or(empty);
    out.iterations = history.len();
    out.history = history;
    Ok(out)
}

/// Solved round allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UralSolution {
    pub sp1: Sp1Solution,
    pub sp2: Sp2Solution,
    pub allocation: Allocation,
}

impl UralSolution {
    /// `g2 − g1`, which equals `U − η1·E − η2·T` of the allocation.
    pub fn objective(&self) -> f64 {
        self.sp2.objective - self.sp1.objective
    }
}

/// Frequencies from the computation sub-problem, then assignment and power
/// from the upload sub-problem. `u` must be the shifted (positive) scores.
pub fn ural(
    compute: &[ComputeProfile],
    radios: &[RadioProfile],
    net: &NetworkConfig,
    u: &[f64],
    opts: &IvesOptions,
) -> Result<UralSolution> {
    if compute.len() != radios.len() {
        return Err(Error::DimensionMismatch {
            expected: radios.len(),
            found: compute.len(),
        });
    }
    let sp1 = solve_sp1(compute, net.eta1, net.eta2)?;
    let sp2 = ives(u, radios, net, opts)?;
    let allocation = Allocation {
        assignment: sp2.assignment.clone(),
        power: sp2.power.clone(),
        nu: sp1.nu.clone(),
        delta: sp2.delta,
    };
    Ok(UralSolution { sp1, sp2, allocation })
}

/// Self-contained solver input, used for golden regression files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UralInstance {
    pub compute: Vec<ComputeProfile>,
    pub radios: Vec<RadioProfile>,
    pub net: NetworkConfig,
    pub u: Vec<f64>,
}

impl UralInstance {
    pub fn solve(&self, opts: &IvesOptions) -> Result<UralSolution> {
        ural(&self.compute, &self.radios, &self.net, &self.u, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wireless::{comm_cost, round_totals};

    fn unit_cp(nu_max: f64) -> ComputeProfile {
        ComputeProfile { c: 1.0, iota: 2.0, d: 1, nu_max }
    }

    fn net(interference: Vec<f64>) -> NetworkConfig {
        NetworkConfig {
            bandwidth: 1.0,
            noise_psd: 0.1,
            interference,
            payload: 1.0,
            eta1: 1.0,
            eta2: 1.0,
        }
    }

    #[test]
    fn g1_examples() {
        assert_eq!(g1_objective(&[unit_cp(2.0)], 1.0, 1.0, &[1.0]), 2.0);
        assert_eq!(g1_objective(&[unit_cp(2.0)], 1.0, 1.0, &[0.0]), f64::INFINITY);
        let cps = [unit_cp(2.0), ComputeProfile { c: 2.0, iota: 1.0, d: 3, nu_max: 2.0 }];
        let base = g1_objective(&cps, 1.0, 0.0, &[0.5, 0.7]);
        let scaled = g1_objective(&cps, 1.0, 0.0, &[1.5, 2.1]);
        assert!((scaled - 9.0 * base).abs() < 1e-12);
        let base = g1_objective(&cps, 0.0, 1.0, &[0.5, 0.7]);
        let scaled = g1_objective(&cps, 0.0, 1.0, &[1.5, 2.1]);
        assert!((scaled - base / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sp1_single_device() {
        let s = sp1_fixed_straggler(0, &[unit_cp(2.0)], 1.0, 1.0).unwrap();
        assert!((s.nu[0] - 0.5f64.cbrt()).abs() < 1e-15);
        assert_eq!(solve_sp1(&[unit_cp(2.0)], 1.0, 1.0).unwrap(), s);
    }

    #[test]
    fn sp1_homogeneous_and_capped() {
        let s = solve_sp1(&[unit_cp(2.0); 4], 1.0, 1.0).unwrap();
        assert!(s.nu.iter().all(|&v| v == s.nu[0]));
        assert_eq!(s.straggler, 0);
        let capped = [unit_cp(2.0), unit_cp(0.05)];
        let s = solve_sp1(&capped, 1.0, 1.0).unwrap();
        assert!((s.nu[1] - 0.05).abs() < 1e-15);
        assert!((s.nu[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sp1_equalizes_times() {
        let cps = [
            ComputeProfile { c: 1.0, iota: 2.0, d: 3, nu_max: 2.0 },
            ComputeProfile { c: 2.0, iota: 1.0, d: 1, nu_max: 1.5 },
            ComputeProfile { c: 0.5, iota: 3.0, d: 4, nu_max: 1.0 },
        ];
        let s = solve_sp1(&cps, 1.0, 2.0).unwrap();
        let t: Vec<f64> = cps.iter().zip(&s.nu).map(|(c, v)| c.cycles() / v).collect();
        for ti in &t {
            assert!((ti - t[0]).abs() < 1e-12);
        }
        for (c, v) in cps.iter().zip(&s.nu) {
            assert!(*v > 0.0 && *v <= c.nu_max);
        }
    }

    #[test]
    fn assignment_small_cases() {
        let m = min_cost_assignment(&[vec![-2.0]]).unwrap();
        assert_eq!(m.rows, vec![Some(0)]);
        assert_eq!(m.total, -2.0);
        let m = min_cost_assignment(&vec![vec![f64::INFINITY; 3]; 2]).unwrap();
        assert_eq!(m.rows, vec![None, None]);
        assert_eq!(m.total, 0.0);
        let m = min_cost_assignment(&[vec![-1.0, -3.0], vec![-2.0, -5.0], vec![-4.0, 1.0]]).unwrap();
        assert_eq!(m.total, -9.0);
        assert_eq!(m.rows, vec![None, Some(1), Some(0)]);
    }

    #[test]
    fn delay_power_identity() {
        let r = RadioProfile { h: 0.4, p_max: 1.0 };
        let nw = net(vec![0.3]);
        // S/(Bδ) = 1 gives μ = (I + BN0)/h
        assert!((power_for_delay(&r, &nw, 0, 1.0) - 0.4 / 0.4).abs() < 1e-15);
        let p = power_for_delay(&r, &nw, 0, 2.5);
        let (t, _) = comm_cost(&r, &nw, 0, p).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matching_rejects_unreachable_delay() {
        let radios = [RadioProfile { h: 0.1, p_max: 0.01 }; 3];
        let z = rb_matching(&[5.0; 3], 0.5, &radios, &net(vec![0.5, 0.5])).unwrap();
        assert!(z.iter().all(Option::is_none));
    }

    #[test]
    fn f4_examples() {
        let r = f4_zero(1.0, 1.0, 1e-10).unwrap();
        assert!((r.root - (std::f64::consts::E - 1.0)).abs() < 1e-9);
        let small = f4_zero(100.0, 1.0, 1e-10).unwrap();
        assert!(small.root < 0.2);
        assert!(f4(small.root - 1e-10, 100.0, 1.0) < 0.0 && f4(small.root + 1e-10, 100.0, 1.0) > 0.0);
        assert!(f4_zero(0.0, 1.0, 1e-10).is_err());
        let bound = (r.bracket / 1e-10).log2().ceil() as usize + 2;
        assert!(r.iterations <= bound);
    }

    #[test]
    fn single_device_power() {
        let radios = [RadioProfile { h: 0.5, p_max: 10.0 }];
        // floor 0.5 ⇒ SNR ratio 1 ⇒ b1 = η1 = η2
        let nw = net(vec![0.4]);
        let p = sp2_power_fixed_straggler(0, &[Some(0)], &radios, &nw, 1e-12).unwrap();
        assert!((p[0] - (std::f64::consts::E - 1.0)).abs() < 1e-9);
        let tight = [RadioProfile { h: 0.5, p_max: 0.3 }];
        let p = sp2_power_fixed_straggler(0, &[Some(0)], &tight, &nw, 1e-12).unwrap();
        assert_eq!(p[0], 0.3);
        assert!(sp2_power_fixed_straggler(0, &[None], &radios, &nw, 1e-12).is_err());
    }

    #[test]
    fn equal_rates_across_selected() {
        let radios = [
            RadioProfile { h: 0.9, p_max: 1.0 },
            RadioProfile { h: 0.3, p_max: 1.0 },
            RadioProfile { h: 0.6, p_max: 1.0 },
        ];
        let nw = net(vec![0.2, 0.7, 0.1]);
        let z = [Some(1), Some(0), Some(2)];
        let p = solve_sp2_power(&z, &[3.0; 3], &radios, &nw, 1e-12).unwrap();
        let t: Vec<f64> = (0..3).map(|i| comm_cost(&radios[i], &nw, z[i].unwrap(), p[i]).unwrap().0).collect();
        for ti in &t {
            assert!((ti - t[0]).abs() < 1e-9 * t[0]);
        }
    }

    #[test]
    fn g2_examples() {
        let radios = [RadioProfile { h: 0.5, p_max: 1.0 }];
        let nw = net(vec![0.2]);
        assert_eq!(g2_objective(&[None], &[0.0], &[4.0], &radios, &nw), 0.0);
        let (t, e) = comm_cost(&radios[0], &nw, 0, 0.7).unwrap();
        let g = g2_objective(&[Some(0)], &[0.7], &[4.0], &radios, &nw);
        assert!((g - (4.0 - e - t)).abs() < 1e-12);
        assert_eq!(g2_objective(&[Some(0)], &[0.0], &[4.0], &radios, &nw), f64::NEG_INFINITY);
    }

    #[test]
    fn ives_empty_when_nothing_profitable() {
        let radios = [RadioProfile { h: 0.1, p_max: 1.0 }; 2];
        let sol = ives(&[1e-6; 2], &radios, &net(vec![0.5]), &IvesOptions::default()).unwrap();
        assert!(sol.assignment.iter().all(Option::is_none));
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn ural_objective_recomposes() {
        let compute = vec![unit_cp(2.0), ComputeProfile { c: 1.0, iota: 2.0, d: 3, nu_max: 1.2 }, unit_cp(0.7)];
        let radios = vec![
            RadioProfile { h: 0.9, p_max: 0.8 },
            RadioProfile { h: 0.3, p_max: 0.5 },
            RadioProfile { h: 0.6, p_max: 0.9 },
        ];
        let nw = net(vec![0.2, 0.7]);
        let u = [3.0, 1.5, 2.0];
        let sol = ural(&compute, &radios, &nw, &u, &IvesOptions::default()).unwrap();
        let tot = round_totals(&compute, &radios, &nw, &sol.allocation, &u, 1).unwrap();
        assert!((tot.objective(&nw) - sol.objective()).abs() < 1e-9);
        assert!(sol.sp2.history.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0)));
    }
}
