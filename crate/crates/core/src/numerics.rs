//! Deterministic numerical primitives shared by every other module.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floor below which a vector is treated as having no direction.
pub const NORM_EPS: f64 = 1e-12;

/// ChaCha8 generator keyed by `(seed, stream)`.
///
/// ChaCha is specified bit-for-bit, so a given pair yields the same draws on
/// every platform. Workers that run concurrently each take their own stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// A fresh generator on the same seed and a different stream.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.inner.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(Error::NearZeroNorm(n));
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// `log Σ exp(v_i)` evaluated with the maximum factored out.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn softmax(values: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

/// Normalized isotropic Gaussian draw.
pub fn sample_uniform_sphere(p: usize, rng: &mut SeededRng) -> Result<UnitVector> {
    if p < 2 {
        return Err(Error::BadDimension(format!("sphere dimension {p} < 2")));
    }
    loop {
        let g: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        if let Ok(u) = l2_normalize(&g) {
            return Ok(u);
        }
    }
}

/// Draws from vMF(`mu`, `kappa`) with Wood's rejection sampler for the
/// cosine `w = mu·z` and a uniform tangent direction for the remainder.
/// The normalizing constant is never evaluated.
pub fn sample_vmf(mu: &UnitVector, kappa: f64, rng: &mut SeededRng) -> Result<UnitVector> {
    let p = mu.dim();
    if p < 2 {
        return Err(Error::BadDimension(format!("sphere dimension {p} < 2")));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::BadDimension(format!("concentration {kappa} must be finite and >= 0")));
    }
    let w = sample_vmf_cosine(p, kappa, rng);
    let tangent = sample_tangent(mu.as_slice(), rng);
    let r = (1.0 - w * w).max(0.0).sqrt();
    let z: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(&tangent)
        .map(|(m, t)| w * m + r * t)
        .collect();
    l2_normalize(&z)
}

fn sample_vmf_cosine(p: usize, kappa: f64, rng: &mut SeededRng) -> f64 {
    let dm1 = (p - 1) as f64;
    // Rationalized form of (-2κ + sqrt(4κ² + (p-1)²)) / (p-1); no cancellation at large κ.
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("shape parameters are positive");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u = rng.uniform();
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// Uniform unit vector orthogonal to `mu`.
fn sample_tangent(mu: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..mu.len()).map(|_| rng.normal()).collect();
        let proj = dot(&v, mu);
        v.iter_mut().zip(mu).for_each(|(x, m)| *x -= proj * m);
        if let Ok(u) = l2_normalize(&v) {
            return u.into_inner();
        }
    }
}

/// Central-difference gradient estimate.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidStep(h));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation(i));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}
