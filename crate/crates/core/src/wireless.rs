//! Per-round computation and uplink cost model, and environment sampling.

use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Computation attributes of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// CPU cycles per sample.
    pub c: f64,
    /// Effective capacitance coefficient; energy is `(ι/2)·cycles·ν²`.
    pub iota: f64,
    /// Samples processed per local step.
    pub d: usize,
    /// Maximum CPU frequency, cycles per second.
    pub nu_max: f64,
}

impl ComputeProfile {
    /// Cycles for one local step, `c·D`.
    pub fn cycles(&self) -> f64 {
        self.c * self.d as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioProfile {
    /// Channel gain.
    pub h: f64,
    /// Maximum transmission power, watts.
    pub p_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Bandwidth of one resource block, Hz.
    pub bandwidth: f64,
    /// Noise power spectral density.
    pub noise_psd: f64,
    /// Interference on each resource block; its length is the RB count.
    pub interference: Vec<f64>,
    /// Model payload size, bits.
    pub payload: f64,
    /// Energy weight.
    pub eta1: f64,
    /// Time weight.
    pub eta2: f64,
}

impl NetworkConfig {
    pub fn rb_count(&self) -> usize {
        self.interference.len()
    }

    /// Interference-plus-noise on `m`, `I_m + B·N0`.
    pub fn noise_floor(&self, m: usize) -> f64 {
        self.interference[m] + self.bandwidth * self.noise_psd
    }

    pub fn validate(&self) -> Result<()> {
        if self.interference.is_empty() {
            return Err(Error::Config("network needs at least one resource block".into()));
        }
        if !(self.bandwidth > 0.0 && self.noise_psd > 0.0 && self.payload > 0.0) {
            return Err(Error::Config(
                "bandwidth, noise_psd and payload must be positive".into(),
            ));
        }
        if self.interference.iter().any(|&i| !(i >= 0.0 && i.is_finite())) {
            return Err(Error::Config("interference must be finite and >= 0".into()));
        }
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return Err(Error::Config("eta1 and eta2 must be >= 0".into()));
        }
        Ok(())
    }

    fn check_rb(&self, m: usize) -> Result<()> {
        if m >= self.rb_count() {
            return Err(invalid(format!(
                "resource block {m} out of range 0..{}",
                self.rb_count()
            )));
        }
        Ok(())
    }
}

/// One round's resource decision.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Resource block of each device, `None` if it does not upload.
    pub assignment: Vec<Option<usize>>,
    /// Transmission power per device; zero for devices without an RB.
    pub power: Vec<f64>,
    /// CPU frequency per device.
    pub nu: Vec<f64>,
    /// Realized transmission delay, the largest upload time.
    pub delta: f64,
}

impl Allocation {
    /// Ids of devices holding an RB, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, z)| z.map(|_| i))
            .collect()
    }

    /// Checks every box and matching constraint exactly.
    pub fn validate(&self, compute: &[ComputeProfile], radios: &[RadioProfile], net: &NetworkConfig) -> Result<()> {
        let n = radios.len();
        if self.assignment.len() != n || self.power.len() != n || self.nu.len() != n || compute.len() != n {
            return Err(Error::InvalidAllocation(format!(
                "expected vectors of length {n}"
            )));
        }
        let mut used = vec![false; net.rb_count()];
        for i in 0..n {
            let p = self.power[i];
            match self.assignment[i] {
                Some(m) => {
                    if m >= used.len() {
                        return Err(Error::InvalidAllocation(format!("device {i} uses unknown RB {m}")));
                    }
                    if used[m] {
                        return Err(Error::InvalidAllocation(format!("RB {m} assigned twice")));
                    }
                    used[m] = true;
                    if !(p >= 0.0 && p <= radios[i].p_max) {
                        return Err(Error::InvalidAllocation(format!(
                            "device {i} power {p} outside [0, {}]",
                            radios[i].p_max
                        )));
                    }
                }
                None => {
                    if p != 0.0 {
                        return Err(Error::InvalidAllocation(format!(
                            "device {i} has no RB but power {p}"
                        )));
                    }
                }
            }
            let nu = self.nu[i];
            if !(nu >= 0.0 && nu <= compute[i].nu_max) {
                return Err(Error::InvalidAllocation(format!(
                    "device {i} frequency {nu} outside [0, {}]",
                    compute[i].nu_max
                )));
            }
        }
        Ok(())
    }
}

/// `B·log2(1 + h·p/(I_m + B·N0))`
pub fn transmission_rate(radio: &RadioProfile, net: &NetworkConfig, m: usize, p: f64) -> Result<f64> {
    net.check_rb(m)?;
    if p < 0.0 {
        return Err(invalid(format!("negative power {p}")));
    }
    Ok(net.bandwidth * (radio.h * p / net.noise_floor(m)).ln_1p() / std::f64::consts::LN_2)
}

/// `(τ·c·D/ν, (ι/2)·τ·c·D·ν²)`
pub fn comp_cost(cp: &ComputeProfile, tau: usize, nu: f64) -> Result<(f64, f64)> {
    let cycles = tau as f64 * cp.cycles();
    if cycles == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(nu > 0.0) {
        return Err(Error::ZeroFrequency(format!("frequency {nu}")));
    }
    Ok((cycles / nu, 0.5 * cp.iota * cycles * nu * nu))
}

/// `(S/r, S·p/r)` for the uplink on RB `m` at power `p`.
pub fn comm_cost(radio: &RadioProfile, net: &NetworkConfig, m: usize, p: f64) -> Result<(f64, f64)> {
    let r = transmission_rate(radio, net, m, p)?;
    if !(r > 0.0) {
        return Err(Error::InfeasibleTransmission(format!(
            "zero rate on RB {m} at power {p}"
        )));
    }
    let t = net.payload / r;
    Ok((t, t * p))
}

/// Round aggregates of an allocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTotals {
    /// Sum of shifted contribution scores of uploading devices.
    pub utility: f64,
    /// Total energy, joules.
    pub energy: f64,
    /// Wall-clock time, seconds.
    pub time: f64,
    pub comp_time: f64,
    pub comm_time: f64,
}

impl RoundTotals {
    /// `U − η1·E − η2·T`
    pub fn objective(&self, net: &NetworkConfig) -> f64 {
        self.utility - net.eta1 * self.energy - net.eta2 * self.time
    }
}

/// Energy over all devices (every device computes), time as slowest
/// computation plus slowest upload, utility over uploading devices.
pub fn round_totals(
    compute: &[ComputeProfile],
    radios: &[RadioProfile],
    net: &NetworkConfig,
    alloc: &Allocation,
    shifted_u: &[f64],
    tau: usize,
) -> Result<RoundTotals> {
    alloc.validate(compute, radios, net)?;
    if shifted_u.len() != radios.len() {
        return Err(Error::DimensionMismatch {
            expected: radios.len(),
            found: shifted_u.len(),
        });
    }
    let mut out = RoundTotals::default();
    for (i, cp) in compute.iter().enumerate() {
        let (t, e) = comp_cost(cp, tau, alloc.nu[i]).map_err(|_| {
            Error::ZeroFrequency(format!("device {i} has frequency {}", alloc.nu[i]))
        })?;
        out.energy += e;
        out.comp_time = out.comp_time.max(t);
        if let Some(m) = alloc.assignment[i] {
            let (t, e) = comm_cost(&radios[i], net, m, alloc.power[i])?;
            out.energy += e;
            out.comm_time = out.comm_time.max(t);
            out.utility += shifted_u[i];
        }
    }
    out.time = out.comp_time + out.comm_time;
    Ok(out)
}

/// Sampling ranges for a random environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub rb_count: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub interference_max: f64,
    pub p_max_max: f64,
    pub nu_max_max: f64,
    /// Cycles per sample drawn from `U(c_min, c_max)`.
    pub c_min: f64,
    pub c_max: f64,
    pub iota: f64,
    pub bandwidth: f64,
    pub noise_psd: f64,
    pub payload: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Draws of `p_max` and `ν_max` below this are redrawn.
    pub min_draw: f64,
    /// Defaults to a value derived from the experiment seed.
    pub seed: Option<u64>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            rb_count: 20,
            h_min: 0.1,
            h_max: 1.0,
            interference_max: 0.8,
            p_max_max: 1.0,
            nu_max_max: 2.0,
            c_min: 1.0,
            c_max: 1.0,
            iota: 2.0,
            bandwidth: 1.0,
            noise_psd: 0.1,
            payload: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            min_draw: 1e-6,
            seed: None,
        }
    }
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.rb_count == 0 {
            return bad("environment.rb_count must be at least 1");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return bad("environment needs 0 < h_min <= h_max");
        }
        if !(self.interference_max >= 0.0) {
            return bad("environment.interference_max must be >= 0");
        }
        if !(self.p_max_max > self.min_draw && self.nu_max_max > self.min_draw) {
            return bad("environment p_max_max and nu_max_max must exceed min_draw");
        }
        if !(self.c_min > 0.0 && self.c_min <= self.c_max) {
            return bad("environment needs 0 < c_min <= c_max");
        }
        if !(self.iota > 0.0) {
            return bad("environment.iota must be positive");
        }
        if !(self.min_draw > 0.0) {
            return bad("environment.min_draw must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub compute: Vec<ComputeProfile>,
    pub radios: Vec<RadioProfile>,
    pub net: NetworkConfig,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn positive_draw<R: Rng + ?Sized>(rng: &mut R, hi: f64, floor: f64, what: &str) -> f64 {
    loop {
        let v = uniform(rng, 0.0, hi);
        if v >= floor {
            return v;
        }
        warn!("redrawing {what} = {v:e} below {floor:e}");
    }
}

/// Samples devices with batch sizes `batch_sizes` and a network.
pub fn sample_environment<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &EnvironmentSpec,
    batch_sizes: &[usize],
) -> Result<Environment> {
    spec.validate()?;
    let interference = (0..spec.rb_count)
        .map(|_| uniform(rng, 0.0, spec.interference_max))
        .collect();
    let mut compute = Vec::with_capacity(batch_sizes.len());
    let mut radios = Vec::with_capacity(batch_sizes.len());
    for &d in batch_sizes {
        let h = uniform(rng, spec.h_min, spec.h_max);
        let p_max = positive_draw(rng, spec.p_max_max, spec.min_draw, "p_max");
        let nu_max = positive_draw(rng, spec.nu_max_max, spec.min_draw, "nu_max");
        let c = uniform(rng, spec.c_min, spec.c_max);
        compute.push(ComputeProfile {
            c,
            iota: spec.iota,
            d,
            nu_max,
        });
        radios.push(RadioProfile { h, p_max });
    }
    Ok(Environment {
        compute,
        radios,
        net: NetworkConfig {
            bandwidth: spec.bandwidth,
            noise_psd: spec.noise_psd,
            interference,
            payload: spec.payload,
            eta1: spec.eta1,
            eta2: spec.eta2,
        },
    })
}

impl Environment {
    pub fn n(&self) -> usize {
        self.radios.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Environment = serde_json::from_str(text)?;
        env.net.validate()?;
        if env.compute.len() != env.radios.len() {
            return Err(invalid("compute and radio profiles differ in length"));
        }
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
