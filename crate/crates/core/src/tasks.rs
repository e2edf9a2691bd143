//! Synthetic non-IID device populations and their assumption constants.
//!
//! A population draws a pool of ground-truth weight vectors ("classes").
//! Each device owns a few classes, a per-class sample count from a
//! truncated Gaussian, and its own feature scales, so devices differ both in
//! their optimum and in their curvature.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metacore::{
    device_smoothness, gradient_spread, grad_estimate, hessian_spread, spectral_norm, Batch,
    LossFamily, LossModel, ParamVector, QuadraticStats, Sample, SmoothnessConstants,
};
use crate::rng::{keyed_rng, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    /// Number of devices.
    pub n: usize,
    /// Model dimension.
    pub dim: usize,
    pub family: LossFamily,
    /// Size of the shared pool of ground-truth weight vectors.
    pub classes: usize,
    pub classes_per_device: usize,
    /// Per-class sample count law: Gaussian truncated below at `size_min`.
    pub size_mean: f64,
    pub size_sd: f64,
    pub size_min: usize,
    /// Scale of the common component of every ground truth.
    pub base_scale: f64,
    /// Spread of class ground truths around the common component; 0 gives IID devices.
    pub spread: f64,
    /// Base feature standard deviation.
    pub feature_scale: f64,
    /// Log-normal spread of per-device, per-coordinate feature scales.
    pub cov_spread: f64,
    /// Label noise (quadratic family only).
    pub noise_sd: f64,
    /// Fraction of devices held out for evaluation.
    pub test_fraction: f64,
    /// Defaults to a value derived from the experiment seed.
    pub seed: Option<u64>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n: 100,
            dim: 5,
            family: LossFamily::QuadraticRegression,
            classes: 10,
            classes_per_device: 2,
            size_mean: 5.0,
            size_sd: 5.0,
            size_min: 1,
            base_scale: 1.0,
            spread: 1.0,
            feature_scale: 1.0,
            cov_spread: 0.3,
            noise_sd: 0.1,
            test_fraction: 0.5,
            seed: None,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("population.n must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("population.dim must be at least 1".into());
        }
        if self.classes == 0 || self.classes_per_device == 0 {
            return bad("population.classes and classes_per_device must be at least 1".into());
        }
        if self.classes_per_device > self.classes {
            return bad(format!(
                "classes_per_device {} exceeds classes {}",
                self.classes_per_device, self.classes
            ));
        }
        if self.size_min == 0 {
            return bad("population.size_min must be at least 1".into());
        }
        if !(self.size_sd >= 0.0) || !self.size_mean.is_finite() {
            return bad("population size law must have finite mean and sd >= 0".into());
        }
        for (name, v) in [
            ("base_scale", self.base_scale),
            ("spread", self.spread),
            ("feature_scale", self.feature_scale),
            ("cov_spread", self.cov_spread),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("population.{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "population.test_fraction must be in [0, 1), got {}",
                self.test_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    /// Indices into the class pool.
    pub classes: Vec<usize>,
    pub model: LossModel,
    pub data: Batch,
}

impl Device {
    pub fn size(&self) -> usize {
        self.data.size()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub spec: PopulationSpec,
    pub seed: u64,
    pub devices: Vec<Device>,
    /// Device ids used for training, ascending.
    pub train: Vec<usize>,
    /// Held-out device ids, ascending.
    pub test: Vec<usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws from `N(mean, sd²)` rounded, redrawing until the value is at least `min`.
fn truncated_count(rng: &mut ChaCha8Rng, mean: f64, sd: f64, min: usize) -> usize {
    if sd == 0.0 || mean - min as f64 > -6.0 * sd {
        for _ in 0..10_000 {
            let v = (mean + sd * normal(rng)).round();
            if v >= min as f64 {
                return v as usize;
            }
        }
    }
    min
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Generates a population; identical specs and seeds give identical output.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Population> {
    spec.validate()?;
    let mut rng = keyed_rng(&[seed, Role::Population as u64]);
    let d = spec.dim;
    let base: Vec<f64> = (0..d).map(|_| spec.base_scale * normal(&mut rng)).collect();
    let pool: Vec<ParamVector> = (0..spec.classes)
        .map(|_| {
            ParamVector::from_vec(
                base.iter()
                    .map(|b| b + spec.spread * normal(&mut rng))
                    .collect(),
            )
        })
        .collect();

    let mut devices = Vec::with_capacity(spec.n);
    for id in 0..spec.n {
        let classes: Vec<usize> =
            rand::seq::index::sample(&mut rng, spec.classes, spec.classes_per_device).into_vec();
        let scale: Vec<f64> = (0..d)
            .map(|_| spec.feature_scale * (spec.cov_spread * normal(&mut rng)).exp())
            .collect();
        let mut samples = Vec::new();
        for &c in &classes {
            let count = truncated_count(&mut rng, spec.size_mean, spec.size_sd, spec.size_min);
            let w = &pool[c];
            for _ in 0..count {
                let x: Vec<f64> = scale.iter().map(|s| s * normal(&mut rng)).collect();
                let z: f64 = x.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
                let y = match spec.family {
                    LossFamily::QuadraticRegression => z + spec.noise_sd * normal(&mut rng),
                    LossFamily::LogisticRegression => {
                        if rng.random::<f64>() < sigmoid(z) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                };
                samples.push(Sample::new(x, y));
            }
        }
        samples.shuffle(&mut rng);
        let model = LossModel {
            family: spec.family,
            centers: classes.iter().map(|&c| pool[c].clone()).collect(),
            feature_scale: scale,
        };
        devices.push(Device {
            id,
            classes,
            model,
            data: Batch::new(samples),
        });
    }

    let mut ids: Vec<usize> = (0..spec.n).collect();
    ids.shuffle(&mut rng);
    let n_test = ((spec.n as f64 * spec.test_fraction).round() as usize).min(spec.n - 1);
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    Ok(Population {
        spec: spec.clone(),
        seed,
        devices,
        train,
        test,
    })
}

impl Population {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn train_devices(&self) -> Vec<&Device> {
        self.train.iter().map(|&i| &self.devices[i]).collect()
    }

    /// Held-out devices, or the training devices when nothing is held out.
    pub fn eval_devices(&self) -> Vec<&Device> {
        let ids = if self.test.is_empty() { &self.train } else { &self.test };
        ids.iter().map(|&i| &self.devices[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pop: Population = serde_json::from_str(text)?;
        pop.check()?;
        Ok(pop)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        for (i, dev) in self.devices.iter().enumerate() {
            if dev.id != i {
                return Err(invalid(format!("device at index {i} has id {}", dev.id)));
            }
            if dev.data.is_empty() {
                return Err(invalid(format!("device {i} has no samples")));
            }
            if dev.data.samples.iter().any(|s| s.x.len() != self.spec.dim) {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.dim,
                    found: dev.data.samples.iter().map(|s| s.x.len()).find(|&l| l != self.spec.dim).unwrap_or(0),
                });
            }
        }
        if self.train.is_empty() || self.train.iter().chain(&self.test).any(|&i| i >= self.devices.len()) {
            return Err(invalid("train/test split references unknown devices"));
        }
        Ok(())
    }
}

fn mean_norm_power(data: &Batch, p: i32) -> f64 {
    data.samples
        .iter()
        .map(|s| s.x.iter().map(|v| v * v).sum::<f64>().sqrt().powi(p))
        .sum::<f64>()
        / data.size() as f64
}

/// Assumption constants of a set of devices at inner stepsize `alpha`.
///
/// Quadratic losses have constant per-sample Hessians, so `L`, `ρ = 0`,
/// `σ_H` and `γ_H` are exact; their gradient spread depends on θ and is
/// evaluated at the origin (see [`trajectory_constants`] to refresh it).
/// Logistic losses get uniform bounds from the per-sample feature norms.
pub fn population_constants(devices: &[&Device], alpha: f64) -> Result<SmoothnessConstants> {
    if devices.is_empty() {
        return Err(invalid("no devices"));
    }
    let dim = devices[0].data.samples[0].x.len();
    let family = devices[0].model.family;
    let mut ls = Vec::with_capacity(devices.len());
    for dev in devices {
        ls.push(device_smoothness(&dev.model, &dev.data, dim)?);
    }
    let l = ls.iter().cloned().fold(0.0, f64::max);
    match family {
        LossFamily::QuadraticRegression => {
            let origin = ParamVector::zeros(dim);
            let mut stats = Vec::with_capacity(devices.len());
            let mut sigma_g = 0.0_f64;
            let mut sigma_h = 0.0_f64;
            for dev in devices {
                stats.push(QuadraticStats::from_dataset(&dev.data, dim)?);
                sigma_g = sigma_g.max(gradient_spread(&dev.model, &dev.data, &origin)?);
                sigma_h = sigma_h.max(hessian_spread(&dev.model, &dev.data, &origin)?);
            }
            let mut gamma_h = 0.0_f64;
            for i in 0..stats.len() {
                for j in i + 1..stats.len() {
                    gamma_h = gamma_h.max(spectral_norm(&(&stats[i].a - &stats[j].a)));
                }
            }
            Ok(SmoothnessConstants {
                alpha,
                l,
                rho: 0.0,
                zeta: None,
                sigma_g,
                sigma_h,
                gamma_g: None,
                gamma_h,
            })
        }
        LossFamily::LogisticRegression => {
            let zetas: Vec<f64> = devices.iter().map(|d| mean_norm_power(&d.data, 1)).collect();
            let zeta = zetas.iter().cloned().fold(0.0, f64::max);
            let rho = devices
                .iter()
                .map(|d| mean_norm_power(&d.data, 3))
                .fold(0.0, f64::max)
                / (6.0 * 3f64.sqrt());
            let sigma_g = devices
                .iter()
                .map(|d| mean_norm_power(&d.data, 2).sqrt())
                .fold(0.0, f64::max);
            let sigma_h = devices
                .iter()
                .map(|d| mean_norm_power(&d.data, 4).sqrt() / 4.0)
                .fold(0.0, f64::max);
            let mut gamma_g = 0.0_f64;
            let mut gamma_h = 0.0_f64;
            for i in 0..devices.len() {
                for j in i + 1..devices.len() {
                    gamma_g = gamma_g.max(zetas[i] + zetas[j]);
                    gamma_h = gamma_h.max(ls[i].max(ls[j]));
                }
            }
            Ok(SmoothnessConstants {
                alpha,
                l,
                rho,
                zeta: Some(zeta),
                sigma_g,
                sigma_h,
                gamma_g: Some(gamma_g),
                gamma_h,
            })
        }
    }
}

/// Tightens the θ-dependent constants to suprema over the visited points.
///
/// Sets `ζ = max ‖∇f_i(θ)‖`, `γ_G = max ‖∇f_i(θ) − ∇f_j(θ)‖` and, for the
/// quadratic family, `σ_G = max` gradient spread, all over `thetas`.
pub fn trajectory_constants(
    constants: &mut SmoothnessConstants,
    devices: &[&Device],
    thetas: &[ParamVector],
) -> Result<()> {
    let quadratic = devices
        .first()
        .map(|d| d.model.family == LossFamily::QuadraticRegression)
        .unwrap_or(false);
    let mut zeta = 0.0_f64;
    let mut gamma_g = 0.0_f64;
    let mut sigma_g = if quadratic { 0.0_f64 } else { constants.sigma_g };
    for theta in thetas {
        let grads = devices
            .iter()
            .map(|d| grad_estimate(&d.model, theta, &d.data))
            .collect::<Result<Vec<_>>>()?;
        for (i, g) in grads.iter().enumerate() {
            zeta = zeta.max(g.norm());
            for h in &grads[i + 1..] {
                gamma_g = gamma_g.max((g - h).norm());
            }
        }
        if quadratic {
            for d in devices {
                sigma_g = sigma_g.max(gradient_spread(&d.model, &d.data, theta)?);
            }
        }
    }
    if quadratic {
        constants.zeta = Some(zeta);
        constants.gamma_g = Some(gamma_g);
        constants.sigma_g = sigma_g;
    } else {
        constants.zeta = Some(constants.zeta.unwrap_or(0.0).max(zeta));
        constants.gamma_g = Some(constants.gamma_g.unwrap_or(0.0).max(gamma_g));
    }
    Ok(())
}
