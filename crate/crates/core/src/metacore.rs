//! Loss families, meta-gradient estimators and the per-device local update.
//!
//! A device's expected loss `f_i` is the mean loss over its own dataset, so a
//! full-dataset batch evaluates `f_i` and its derivatives exactly and a
//! without-replacement batch gives unbiased estimates of them.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{Role, RngStream};

/// Model (or meta-model) parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, scale: f64, other: &ParamVector) -> ParamVector {
        ParamVector(&self.0 + &other.0 * scale)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self::from_vec(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0.as_slice().to_vec()
    }
}

impl From<DVector<f64>> for ParamVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl Add for &ParamVector {
    type Output = ParamVector;
    fn add(self, rhs: &ParamVector) -> ParamVector {
        ParamVector(&self.0 + &rhs.0)
    }
}

impl Sub for &ParamVector {
    type Output = ParamVector;
    fn sub(self, rhs: &ParamVector) -> ParamVector {
        ParamVector(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &ParamVector {
    type Output = ParamVector;
    fn mul(self, rhs: f64) -> ParamVector {
        ParamVector(&self.0 * rhs)
    }
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    fn dot(&self, theta: &ParamVector) -> f64 {
        self.x.iter().zip(theta.as_slice()).map(|(a, b)| a * b).sum()
    }
}

/// A set of samples drawn from one device. A device's full dataset is also a `Batch`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if self.samples.is_empty() {
            return Err(invalid("empty batch"));
        }
        for s in &self.samples {
            if s.x.len() != theta.dim() {
                return Err(Error::DimensionMismatch {
                    expected: theta.dim(),
                    found: s.x.len(),
                });
            }
        }
        Ok(())
    }
}

/// Draws `size` distinct samples from `dataset`. A full-size draw returns the
/// dataset in its stored order.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &Batch, size: usize, rng: &mut R) -> Result<Batch> {
    if size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if size > dataset.size() {
        return Err(Error::Config(format!(
            "batch size {size} exceeds dataset size {}",
            dataset.size()
        )));
    }
    if size == dataset.size() {
        return Ok(dataset.clone());
    }
    let idx = rand::seq::index::sample(rng, dataset.size(), size);
    Ok(Batch::new(
        idx.iter().map(|i| dataset.samples[i].clone()).collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    /// `½(xᵀθ − y)²`
    QuadraticRegression,
    /// `ln(1 + exp(−y xᵀθ))` with labels in {−1, +1}
    LogisticRegression,
}

/// Loss family of a device plus the parameters its data was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub family: LossFamily,
    /// Ground-truth weight vectors of the device's data clusters.
    #[serde(default)]
    pub centers: Vec<ParamVector>,
    /// Per-coordinate standard deviation of the features.
    #[serde(default)]
    pub feature_scale: Vec<f64>,
}

impl LossModel {
    pub fn new(family: LossFamily) -> Self {
        Self {
            family,
            centers: Vec::new(),
            feature_scale: Vec::new(),
        }
    }

    pub fn quadratic() -> Self {
        Self::new(LossFamily::QuadraticRegression)
    }

    pub fn logistic() -> Self {
        Self::new(LossFamily::LogisticRegression)
    }

    fn sample_loss(&self, theta: &ParamVector, s: &Sample) -> f64 {
        let z = s.dot(theta);
        match self.family {
            LossFamily::QuadraticRegression => 0.5 * (z - s.y).powi(2),
            LossFamily::LogisticRegression => softplus(-s.y * z),
        }
    }

    /// Per-sample gradient is `coef · x`.
    fn grad_coef(&self, theta: &ParamVector, s: &Sample) -> f64 {
        let z = s.dot(theta);
        match self.family {
            LossFamily::QuadraticRegression => z - s.y,
            LossFamily::LogisticRegression => -s.y * sigmoid(-s.y * z),
        }
    }

    /// Per-sample Hessian is `weight · x xᵀ`.
    fn hessian_weight(&self, theta: &ParamVector, s: &Sample) -> f64 {
        match self.family {
            LossFamily::QuadraticRegression => 1.0,
            LossFamily::LogisticRegression => {
                let z = s.dot(theta);
                sigmoid(z) * sigmoid(-z)
            }
        }
    }

    /// Gradient of a single sample's loss.
    pub fn sample_gradient(&self, theta: &ParamVector, s: &Sample) -> ParamVector {
        let c = self.grad_coef(theta, s);
        ParamVector::from_vec(s.x.iter().map(|x| c * x).collect())
    }

    /// Hessian of a single sample's loss.
    pub fn sample_hessian(&self, theta: &ParamVector, s: &Sample) -> DMatrix<f64> {
        let x = DVector::from_column_slice(&s.x);
        &x * x.transpose() * self.hessian_weight(theta, s)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean per-sample loss over `batch`.
pub fn loss_value(model: &LossModel, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    batch.check(theta)?;
    let total: f64 = batch.samples.iter().map(|s| model.sample_loss(theta, s)).sum();
    Ok(total / batch.size() as f64)
}

/// Batch-mean per-sample gradient.
pub fn grad_estimate(model: &LossModel, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    batch.check(theta)?;
    let mut g = DVector::zeros(theta.dim());
    for s in &batch.samples {
        let c = model.grad_coef(theta, s);
        for (gi, xi) in g.iter_mut().zip(&s.x) {
            *gi += c * xi;
        }
    }
    Ok(ParamVector(g / batch.size() as f64))
}

/// Batch-mean per-sample Hessian.
pub fn hessian_estimate(model: &LossModel, theta: &ParamVector, batch: &Batch) -> Result<DMatrix<f64>> {
    batch.check(theta)?;
    let d = theta.dim();
    let mut h = DMatrix::zeros(d, d);
    for s in &batch.samples {
        let w = model.hessian_weight(theta, s);
        for r in 0..d {
            for c in 0..d {
                h[(r, c)] += w * s.x[r] * s.x[c];
            }
        }
    }
    Ok(h / batch.size() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// `(I − α∇²f(θ, D''))∇f(θ − α∇f(θ, D), D')`
    #[default]
    Hessian,
    /// Drops the curvature factor.
    FirstOrder,
    /// Replaces the Hessian-vector product with a central difference of gradients.
    HessianFree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaHyper {
    /// Inner (adaptation) stepsize.
    pub alpha: f64,
    /// Meta stepsize.
    pub beta: f64,
    /// Local steps per round.
    pub tau: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Perturbation for the Hessian-free estimator.
    pub hv_epsilon: f64,
    pub mode: EstimatorMode,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta: 0.001,
            tau: 1,
            lambda1: 1.0,
            lambda2: 1.0,
            hv_epsilon: 1e-4,
            mode: EstimatorMode::Hessian,
        }
    }
}

impl MetaHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !(self.hv_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "hv_epsilon must be > 0, got {}",
                self.hv_epsilon
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        Ok(())
    }
}

fn finite(v: ParamVector, what: &str) -> Result<ParamVector> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Stochastic meta-gradient from three independent batches.
pub fn meta_gradient(
    model: &LossModel,
    theta: &ParamVector,
    inner: &Batch,
    outer: &Batch,
    curvature: &Batch,
    hyper: &MetaHyper,
) -> Result<ParamVector> {
    let alpha = hyper.alpha;
    let g_inner = finite(grad_estimate(model, theta, inner)?, "inner gradient")?;
    let adapted = theta.add_scaled(-alpha, &g_inner);
    let g_outer = finite(grad_estimate(model, &adapted, outer)?, "outer gradient")?;
    let out = match hyper.mode {
        EstimatorMode::FirstOrder => g_outer,
        EstimatorMode::Hessian => {
            let h = hessian_estimate(model, theta, curvature)?;
            let hv = ParamVector(&h * g_outer.as_dvector());
            g_outer.add_scaled(-alpha, &hv)
        }
        EstimatorMode::HessianFree => {
            if !(hyper.hv_epsilon > 0.0) {
                return Err(invalid("hessian-free mode requires hv_epsilon > 0"));
            }
            let hv = central_difference_hvp(
                |t| grad_estimate(model, t, curvature),
                theta,
                &g_outer,
                hyper.hv_epsilon,
            )?;
            g_outer.add_scaled(-alpha, &hv)
        }
    };
    finite(out, "meta-gradient")
}

/// Symmetric-difference approximation of `∇²f(θ)·v` from a gradient oracle:
/// `(∇f(θ + εv) − ∇f(θ − εv)) / (2ε)`.
pub fn central_difference_hvp<G>(grad: G, theta: &ParamVector, v: &ParamVector, eps: f64) -> Result<ParamVector>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    if !(eps > 0.0) {
        return Err(invalid("finite-difference step must be > 0"));
    }
    let plus = grad(&theta.add_scaled(eps, v))?;
    let minus = grad(&theta.add_scaled(-eps, v))?;
    Ok(&(&plus - &minus) * (0.5 / eps))
}

/// Sufficient statistics of a quadratic-regression dataset:
/// `f(θ) = ½θᵀAθ − bᵀθ + ½c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticStats {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticStats {
    pub fn from_dataset(dataset: &Batch, dim: usize) -> Result<Self> {
        if dataset.is_empty() {
            return Err(invalid("empty dataset"));
        }
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        let mut c = 0.0;
        for s in &dataset.samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.x.len(),
                });
            }
            let x = DVector::from_column_slice(&s.x);
            a += &x * x.transpose();
            b += &x * s.y;
            c += s.y * s.y;
        }
        let n = dataset.size() as f64;
        Ok(Self {
            a: a / n,
            b: b / n,
            c: c / n,
        })
    }

    pub fn gradient(&self, theta: &ParamVector) -> ParamVector {
        ParamVector(&self.a * theta.as_dvector() - &self.b)
    }

    pub fn value(&self, theta: &ParamVector) -> f64 {
        let t = theta.as_dvector();
        0.5 * t.dot(&(&self.a * t)) - self.b.dot(t) + 0.5 * self.c
    }
}

/// Population meta-gradient `(I − α∇²f(θ))∇f(θ − α∇f(θ))` with no sampling noise.
///
/// Quadratic datasets go through their sufficient statistics; logistic ones
/// through full-dataset derivatives.
pub fn exact_meta_gradient(
    model: &LossModel,
    dataset: &Batch,
    theta: &ParamVector,
    alpha: f64,
) -> Result<ParamVector> {
    let out = match model.family {
        LossFamily::QuadraticRegression => {
            let st = QuadraticStats::from_dataset(dataset, theta.dim())?;
            let adapted = theta.add_scaled(-alpha, &st.gradient(theta));
            let g = st.gradient(&adapted);
            ParamVector(g.as_dvector() - (&st.a * g.as_dvector()) * alpha)
        }
        LossFamily::LogisticRegression => {
            let g0 = grad_estimate(model, theta, dataset)?;
            let adapted = theta.add_scaled(-alpha, &g0);
            let g = grad_estimate(model, &adapted, dataset)?;
            let h = hessian_estimate(model, theta, dataset)?;
            ParamVector(g.as_dvector() - (&h * g.as_dvector()) * alpha)
        }
    };
    finite(out, "meta-gradient")
}

/// Meta-objective `F_i(θ) = f_i(θ − α∇f_i(θ))` on the full dataset.
pub fn meta_loss(model: &LossModel, dataset: &Batch, theta: &ParamVector, alpha: f64) -> Result<f64> {
    let g = grad_estimate(model, theta, dataset)?;
    loss_value(model, &theta.add_scaled(-alpha, &g), dataset)
}

/// Output of one device's local update.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub theta: ParamVector,
    /// Contribution score accumulated over the local steps.
    pub u: f64,
    /// `‖∇̃F_i(θ^t)‖` for each local step.
    pub grad_norms: Vec<f64>,
}

/// Per-step contribution `‖g‖² − 2(λ1 + λ2/√D)‖g‖`.
pub fn contribution_term(grad_norm: f64, hyper: &MetaHyper, batch_size: usize) -> f64 {
    let c = hyper.lambda1 + hyper.lambda2 / (batch_size as f64).sqrt();
    grad_norm * grad_norm - 2.0 * c * grad_norm
}

/// Runs `τ` local meta-gradient steps and accumulates the contribution score.
///
/// Each step draws three independent batches of `batch_size` samples from the
/// generators `stream.rng(step, role)`.
pub fn local_update(
    model: &LossModel,
    dataset: &Batch,
    theta0: &ParamVector,
    hyper: &MetaHyper,
    batch_size: usize,
    stream: &RngStream,
) -> Result<LocalUpdate> {
    if hyper.tau == 0 {
        return Err(Error::Config("tau must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("device has no samples".into()));
    }
    let mut theta = theta0.clone();
    let mut u = 0.0;
    let mut grad_norms = Vec::with_capacity(hyper.tau);
    for step in 0..hyper.tau as u64 {
        let inner = sample_batch(dataset, batch_size, &mut stream.rng(step, Role::Inner))?;
        let outer = sample_batch(dataset, batch_size, &mut stream.rng(step, Role::Outer))?;
        let curv = sample_batch(dataset, batch_size, &mut stream.rng(step, Role::Curvature))?;
        let g = meta_gradient(model, &theta, &inner, &outer, &curv, hyper)?;
        let norm = g.norm();
        u += contribution_term(norm, hyper, batch_size);
        grad_norms.push(norm);
        theta = theta.add_scaled(-hyper.beta, &g);
    }
    Ok(LocalUpdate {
        theta,
        u,
        grad_norms,
    })
}

/// Constants of the smoothness, variance and similarity assumptions.
///
/// `zeta` and `gamma_g` are unbounded for quadratic losses and stay `None`
/// until filled with suprema along a realized trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub alpha: f64,
    pub l: f64,
    pub rho: f64,
    pub zeta: Option<f64>,
    pub sigma_g: f64,
    pub sigma_h: f64,
    pub gamma_g: Option<f64>,
    pub gamma_h: f64,
}

impl SmoothnessConstants {
    /// Smoothness of the meta-objective, `(1 + αL)²L + αρζ`.
    pub fn l_f(&self) -> f64 {
        let a = self.alpha;
        (1.0 + a * self.l).powi(2) * self.l + a * self.rho * self.zeta.unwrap_or(0.0)
    }

    /// Bound on `‖∇F_i − ∇F_j‖`, `(1 + αL)²γ_G + αζγ_H`.
    pub fn meta_dissimilarity(&self) -> f64 {
        let a = self.alpha;
        (1.0 + a * self.l).powi(2) * self.gamma_g.unwrap_or(0.0)
            + a * self.zeta.unwrap_or(0.0) * self.gamma_h
    }

    /// Bound on the bias of the meta-gradient estimator for inner batch size `inner`.
    pub fn bias_bound(&self, inner: usize) -> f64 {
        let a = self.alpha;
        a * self.sigma_g * self.l * (1.0 + a * self.l) / (inner as f64).sqrt()
    }

    /// `σ²_{F_i}`: bound on the estimator's mean squared error.
    pub fn variance_bound(&self, inner: usize, outer: usize, curvature: usize) -> f64 {
        let a = self.alpha;
        let (d, dp, dpp) = (inner as f64, outer as f64, curvature as f64);
        let z = self.zeta.unwrap_or(0.0);
        let mix = 1.0 / dp + (a * self.l).powi(2) / d;
        6.0 * self.sigma_g.powi(2) * (1.0 + a * self.l).powi(2) * mix
            + 3.0 * (a * z * self.sigma_h).powi(2) / dpp
            + 6.0 * (a * self.sigma_g * self.sigma_h).powi(2) / dpp * mix
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Gradient-Lipschitz constant of one device's expected loss.
pub fn device_smoothness(model: &LossModel, dataset: &Batch, dim: usize) -> Result<f64> {
    let st = QuadraticStats::from_dataset(dataset, dim)?;
    let top = lambda_max(&st.a);
    Ok(match model.family {
        LossFamily::QuadraticRegression => top,
        LossFamily::LogisticRegression => 0.25 * top,
    })
}

/// Root-mean-square deviation of per-sample gradients from the mean gradient at `theta`.
pub fn gradient_spread(model: &LossModel, dataset: &Batch, theta: &ParamVector) -> Result<f64> {
    let mean = grad_estimate(model, theta, dataset)?;
    let ss: f64 = dataset
        .samples
        .iter()
        .map(|s| (&model.sample_gradient(theta, s) - &mean).norm_squared())
        .sum();
    Ok((ss / dataset.size() as f64).sqrt())
}

/// Root-mean-square Frobenius deviation of per-sample Hessians at `theta`.
pub fn hessian_spread(model: &LossModel, dataset: &Batch, theta: &ParamVector) -> Result<f64> {
    let mean = hessian_estimate(model, theta, dataset)?;
    let ss: f64 = dataset
        .samples
        .iter()
        .map(|s| (model.sample_hessian(theta, s) - &mean).norm_squared())
        .sum();
    Ok((ss / dataset.size() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    fn one(x: f64, y: f64) -> Batch {
        Batch::new(vec![Sample::new(vec![x], y)])
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, logistic: bool) -> Batch {
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y = if logistic {
                    if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                } else {
                    rng.random_range(-2.0..2.0)
                };
                Sample::new(x, y)
            })
            .collect();
        Batch::new(samples)
    }

    #[test]
    fn loss_value_examples() {
        let q = LossModel::quadratic();
        assert_eq!(loss_value(&q, &pv(&[0.0]), &one(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(loss_value(&q, &pv(&[0.0]), &one(1.0, 1.0)).unwrap(), 0.5);
        let l = LossModel::logistic();
        let b = Batch::new(vec![
            Sample::new(vec![1.0, 2.0], 1.0),
            Sample::new(vec![-0.5, 3.0], -1.0),
        ]);
        let v = loss_value(&l, &pv(&[0.0, 0.0]), &b).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_and_empty_batch() {
        let q = LossModel::quadratic();
        let err = loss_value(&q, &pv(&[0.0, 0.0]), &one(1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, found: 1 }));
        assert!(grad_estimate(&q, &pv(&[0.0]), &Batch::default()).is_err());
    }

    #[test]
    fn grad_estimate_examples() {
        let q = LossModel::quadratic();
        let g = grad_estimate(&q, &pv(&[0.0]), &one(1.0, 1.0)).unwrap();
        assert_eq!(g.as_slice(), &[-1.0]);

        // symmetric features with balanced labels cancel at θ = 0
        let l = LossModel::logistic();
        let b = Batch::new(vec![
            Sample::new(vec![1.0, -2.0], 1.0),
            Sample::new(vec![-1.0, 2.0], -1.0),
            Sample::new(vec![1.0, -2.0], -1.0),
            Sample::new(vec![-1.0, 2.0], 1.0),
        ]);
        let g = grad_estimate(&l, &pv(&[0.0, 0.0]), &b).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn full_dataset_gradient_matches_sufficient_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = LossModel::quadratic();
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 12, 1, false);
            let theta = pv(&[rng.random_range(-3.0..3.0)]);
            let st = QuadraticStats::from_dataset(&data, 1).unwrap();
            let g = grad_estimate(&q, &theta, &data).unwrap();
            assert!((g.as_slice()[0] - st.gradient(&theta).as_slice()[0]).abs() < 1e-12);
            let f = loss_value(&q, &theta, &data).unwrap();
            assert!((f - st.value(&theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_examples() {
        let q = LossModel::quadratic();
        let h = hessian_estimate(&q, &pv(&[0.3]), &one(2.0, 7.0)).unwrap();
        assert_eq!(h[(0, 0)], 4.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_dataset(&mut rng, 8, 3, false);
        let h1 = hessian_estimate(&q, &pv(&[1.0, -2.0, 0.5]), &data).unwrap();
        let h2 = hessian_estimate(&q, &pv(&[-4.0, 0.0, 9.0]), &data).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn logistic_hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = LossModel::logistic();
        let data = random_dataset(&mut rng, 15, 3, true);
        let theta = pv(&[0.4, -0.2, 0.9]);
        let h = hessian_estimate(&l, &theta, &data).unwrap();
        let step = 1e-5;
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = step;
            let e = pv(&e);
            let gp = grad_estimate(&l, &(&theta + &e), &data).unwrap();
            let gm = grad_estimate(&l, &(&theta - &e), &data).unwrap();
            let col = &(&gp - &gm) * (0.5 / step);
            for r in 0..3 {
                assert!((col.as_slice()[r] - h[(r, k)]).abs() < 1e-6);
            }
        }
        assert!((&h - h.transpose()).norm() < 1e-15);
    }

    #[test]
    fn alpha_zero_reduces_to_outer_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in [LossModel::quadratic(), LossModel::logistic()] {
            let d1 = random_dataset(&mut rng, 4, 2, family.family == LossFamily::LogisticRegression);
            let d2 = random_dataset(&mut rng, 4, 2, family.family == LossFamily::LogisticRegression);
            let d3 = random_dataset(&mut rng, 4, 2, family.family == LossFamily::LogisticRegression);
            let theta = pv(&[0.3, -0.7]);
            let expected = grad_estimate(&family, &theta, &d2).unwrap();
            for mode in [EstimatorMode::Hessian, EstimatorMode::FirstOrder, EstimatorMode::HessianFree] {
                let hyper = MetaHyper { alpha: 0.0, mode, ..MetaHyper::default() };
                let g = meta_gradient(&family, &theta, &d1, &d2, &d3, &hyper).unwrap();
                assert_eq!(g, expected, "{mode:?}");
            }
        }
    }

    #[test]
    fn meta_gradient_scalar_quadratic() {
        // f(θ) = θ² from the single sample x = √2, y = 0.
        let data = one(2f64.sqrt(), 0.0);
        let q = LossModel::quadratic();
        let hyper = MetaHyper { alpha: 0.25, ..MetaHyper::default() };
        let g = meta_gradient(&q, &pv(&[1.0]), &data, &data, &data, &hyper).unwrap();
        assert!((g.as_slice()[0] - 0.5).abs() < 1e-12);
        let e = exact_meta_gradient(&q, &data, &pv(&[1.0]), 0.25).unwrap();
        assert!((e.as_slice()[0] - 0.5).abs() < 1e-12);
        let e0 = exact_meta_gradient(&q, &data, &pv(&[1.0]), 0.0).unwrap();
        assert!((e0.as_slice()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_exact_meta_gradient_matches_full_batch_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l = LossModel::logistic();
        let data = random_dataset(&mut rng, 10, 2, true);
        let theta = pv(&[0.2, 0.1]);
        let hyper = MetaHyper { alpha: 0.3, ..MetaHyper::default() };
        let a = meta_gradient(&l, &theta, &data, &data, &data, &hyper).unwrap();
        let b = exact_meta_gradient(&l, &data, &theta, 0.3).unwrap();
        assert!((&a - &b).norm() < 1e-12);
    }

    #[test]
    fn hessian_free_is_exact_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = LossModel::quadratic();
        let data = random_dataset(&mut rng, 9, 3, false);
        let theta = pv(&[0.5, 1.0, -1.0]);
        let base = MetaHyper { alpha: 0.2, ..MetaHyper::default() };
        let h = meta_gradient(&q, &theta, &data, &data, &data, &base).unwrap();
        for eps in [1e-2, 5e-3] {
            let hf = MetaHyper { mode: EstimatorMode::HessianFree, hv_epsilon: eps, ..base.clone() };
            let g = meta_gradient(&q, &theta, &data, &data, &data, &hf).unwrap();
            assert!((&g - &h).norm() < 1e-9 * (1.0 + h.norm()));
        }
    }

    #[test]
    fn sample_batch_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = random_dataset(&mut rng, 5, 1, false);
        assert!(matches!(sample_batch(&data, 6, &mut rng), Err(Error::Config(_))));
        assert_eq!(sample_batch(&data, 5, &mut rng).unwrap(), data);
        let b = sample_batch(&data, 3, &mut rng).unwrap();
        assert_eq!(b.size(), 3);
        for s in &b.samples {
            assert!(data.samples.contains(s));
        }
    }

    #[test]
    fn local_update_zero_step_and_stationary_point() {
        let data = Batch::new(vec![Sample::new(vec![1.0], 2.0), Sample::new(vec![2.0], 1.0)]);
        let q = LossModel::quadratic();
        let stream = RngStream::new(1, 0, 0);
        let hyper = MetaHyper { alpha: 0.1, beta: 0.0, ..MetaHyper::default() };
        let theta0 = pv(&[0.3]);
        let out = local_update(&q, &data, &theta0, &hyper, 2, &stream).unwrap();
        assert_eq!(out.theta, theta0);
        let g = exact_meta_gradient(&q, &data, &theta0, 0.1).unwrap();
        let expected = contribution_term(g.norm(), &hyper, 2);
        assert!((out.u - expected).abs() < 1e-12);

        // For a quadratic the meta-optimum is the least-squares solution b/A.
        let st = QuadraticStats::from_dataset(&data, 1).unwrap();
        let star = pv(&[st.b[0] / st.a[(0, 0)]]);
        let hyper = MetaHyper { alpha: 0.1, beta: 0.5, ..MetaHyper::default() };
        let out = local_update(&q, &data, &star, &hyper, 2, &stream).unwrap();
        assert!(out.u.abs() < 1e-12);
        assert!((&out.theta - &star).norm() < 1e-12);
    }

    #[test]
    fn local_update_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let data = random_dataset(&mut rng, 10, 2, false);
        let q = LossModel::quadratic();
        let stream = RngStream::new(5, 2, 7);
        let two = MetaHyper { alpha: 0.05, beta: 0.1, tau: 2, ..MetaHyper::default() };
        let single = MetaHyper { tau: 1, ..two.clone() };
        let theta0 = pv(&[0.0, 0.0]);
        let full = local_update(&q, &data, &theta0, &two, 3, &stream).unwrap();
        let a = local_update(&q, &data, &theta0, &single, 3, &stream).unwrap();
        let b = local_update(&q, &data, &a.theta, &single, 3, &stream.starting_at(1)).unwrap();
        assert_eq!(full.theta, b.theta);
        assert!((full.u - (a.u + b.u)).abs() < 1e-12);
    }

    #[test]
    fn local_update_rejects_oversized_batch() {
        let q = LossModel::quadratic();
        let err = local_update(&q, &one(1.0, 1.0), &pv(&[0.0]), &MetaHyper::default(), 2, &RngStream::new(0, 0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn l_f_formula() {
        let c = SmoothnessConstants {
            alpha: 0.1,
            l: 2.0,
            rho: 3.0,
            zeta: Some(4.0),
            sigma_g: 0.0,
            sigma_h: 0.0,
            gamma_g: None,
            gamma_h: 0.0,
        };
        assert!((c.l_f() - ((1.2f64).powi(2) * 2.0 + 0.1 * 3.0 * 4.0)).abs() < 1e-15);
        let quad = SmoothnessConstants { rho: 0.0, ..c };
        assert!((quad.l_f() - 1.2f64.powi(2) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn variance_bound_formula() {
        let c = SmoothnessConstants {
            alpha: 0.5,
            l: 2.0,
            rho: 0.0,
            zeta: Some(3.0),
            sigma_g: 1.5,
            sigma_h: 0.5,
            gamma_g: None,
            gamma_h: 0.0,
        };
        // expanded by hand: mix = 1/4 + 1/2 = 0.75
        let expected = 6.0 * 2.25 * 4.0 * 0.75 + 3.0 * (0.5 * 3.0 * 0.5f64).powi(2) / 8.0
            + 6.0 * (0.5 * 1.5 * 0.5f64).powi(2) / 8.0 * 0.75;
        assert!((c.variance_bound(2, 4, 8) - expected).abs() < 1e-12);
    }
}
