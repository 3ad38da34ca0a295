//! vMF alignment losses, their gradients and the orthogonality regularizer.
//!
//! Everything here works on already-normalized projections `z` and unit-row
//! label embeddings `M` (shape `(C, p)`). The chain rule through the
//! normalization lives in [`crate::model`].

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

/// Counts evaluated sample/label-embedding similarities `z·μ_k`.
#[derive(Debug, Default)]
pub struct SimilarityCounter(AtomicU64);

impl SimilarityCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed)
    }

    fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }
}

/// Row-normalized label matrix `S_ik = y_ik / Σ_j y_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSimilarity(Array2<f64>);

impl LabelSimilarity {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    /// One-hot rows for hard targets.
    pub fn one_hot(targets: &[usize], n_classes: usize) -> Result<Self> {
        let mut s = Array2::zeros((targets.len(), n_classes));
        for (i, &t) in targets.iter().enumerate() {
            if t >= n_classes {
                return Err(Error::BadIndex {
                    index: t,
                    len: n_classes,
                });
            }
            s[[i, t]] = 1.0;
        }
        Ok(Self(s))
    }
}

pub fn label_similarity(soft_labels: ArrayView2<f64>) -> Result<LabelSimilarity> {
    let mut s = soft_labels.to_owned();
    for (i, mut row) in s.rows_mut().into_iter().enumerate() {
        if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("label row {i} has a negative entry")));
        }
        let sum = row.sum();
        if !(sum > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        if sum != 1.0 {
            row.mapv_inplace(|v| v / sum);
        }
    }
    Ok(LabelSimilarity(s))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

fn check_dims(z_cols: usize, m: &Array2<f64>) -> Result<()> {
    if z_cols != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "projection dim {z_cols} vs label embedding dim {}",
            m.ncols()
        )));
    }
    Ok(())
}

/// `Z Mᵀ`, counting one evaluation per entry.
fn similarity_matrix(z: ArrayView2<f64>, m: &Array2<f64>, counter: &SimilarityCounter) -> Array2<f64> {
    let sims = z.dot(&m.t());
    counter.add(sims.len());
    sims
}

/// `log P_ik` per row from the similarity matrix.
fn log_posterior_rows(sims: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = sims / tau;
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.as_slice().expect("standard layout")).expect("nonempty row");
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Class posterior under equal-concentration vMF components.
pub fn posterior(z: &[f64], m: &Array2<f64>, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    check_dims(z.len(), m)?;
    let sims = m.dot(&ArrayView1::from(z));
    crate::numerics::softmax(sims.as_slice().unwrap(), tau)
}

pub fn posterior_matrix(z: ArrayView2<f64>, m: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    check_tau(tau)?;
    check_dims(z.ncols(), m)?;
    let sims = similarity_matrix(z, m, &SimilarityCounter::new());
    Ok(log_posterior_rows(&sims, tau).mapv(f64::exp))
}

/// Mean negative log posterior of the target classes.
pub fn vmfal_hard(z: ArrayView2<f64>, targets: &[usize], m: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_dims(z.ncols(), m)?;
    if z.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if targets.len() != z.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} projections vs {} targets",
            z.nrows(),
            targets.len()
        )));
    }
    let c = m.nrows();
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::BadIndex { index: bad, len: c });
    }
    let logp = log_posterior_rows(&similarity_matrix(z, m, &SimilarityCounter::new()), tau);
    let total: f64 = targets.iter().enumerate().map(|(i, &t)| -logp[[i, t]]).sum();
    Ok(total / z.nrows() as f64)
}

fn check_soft(z: ArrayView2<f64>, s: &LabelSimilarity, m: &Array2<f64>) -> Result<()> {
    check_dims(z.ncols(), m)?;
    if s.nrows() != z.nrows() || s.ncols() != m.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "S is {}x{}, expected {}x{}",
            s.nrows(),
            s.ncols(),
            z.nrows(),
            m.nrows()
        )));
    }
    if z.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// `-(1/N) Σ_i Σ_k S_ik log P_ik`.
pub fn vmfal_soft(
    z: ArrayView2<f64>,
    s: &LabelSimilarity,
    m: &Array2<f64>,
    tau: f64,
) -> Result<f64> {
    vmfal_soft_counted(z, s, m, tau, &SimilarityCounter::new())
}

pub fn vmfal_soft_counted(
    z: ArrayView2<f64>,
    s: &LabelSimilarity,
    m: &Array2<f64>,
    tau: f64,
    counter: &SimilarityCounter,
) -> Result<f64> {
    check_tau(tau)?;
    check_soft(z, s, m)?;
    let logp = log_posterior_rows(&similarity_matrix(z, m, counter), tau);
    Ok(-(&s.0 * &logp).sum() / z.nrows() as f64)
}

/// Loss value plus gradients with respect to `Z` and `M`.
#[derive(Debug, Clone)]
pub struct SoftLossGrad {
    pub loss: f64,
    pub grad_z: Array2<f64>,
    pub grad_m: Array2<f64>,
}

pub fn vmfal_soft_with_grad(
    z: ArrayView2<f64>,
    s: &LabelSimilarity,
    m: &Array2<f64>,
    tau: f64,
    counter: &SimilarityCounter,
) -> Result<SoftLossGrad> {
    check_tau(tau)?;
    check_soft(z, s, m)?;
    let n = z.nrows() as f64;
    let logp = log_posterior_rows(&similarity_matrix(z, m, counter), tau);
    let loss = -(&s.0 * &logp).sum() / n;
    // per row: dL_i/dz_i = Σ_k (P_ik - S_ik) μ_k / τ
    let residual = (logp.mapv(f64::exp) - &s.0) / (tau * n);
    Ok(SoftLossGrad {
        loss,
        grad_z: residual.dot(m),
        grad_m: residual.t().dot(&z),
    })
}

/// Per-sample loss `-Σ_k S_ik log P_ik`.
pub fn vmfal_sample(z: &[f64], s: &[f64], m: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_dims(z.len(), m)?;
    if s.len() != m.nrows() {
        return Err(Error::ShapeMismatch("label row length".into()));
    }
    let scaled: Vec<f64> = m.dot(&ArrayView1::from(z)).iter().map(|v| v / tau).collect();
    let lse = log_sum_exp(&scaled)?;
    Ok(-s.iter().zip(&scaled).map(|(sk, v)| sk * (v - lse)).sum::<f64>())
}

/// `-Σ_k (S_ik - P_ik) μ_k / τ`.
pub fn vmfal_grad_z(z: &[f64], s: &[f64], m: &Array2<f64>, tau: f64) -> Result<Vec<f64>> {
    let p = posterior(z, m, tau)?;
    if s.len() != p.len() {
        return Err(Error::ShapeMismatch("label row length".into()));
    }
    let coeff = Array1::from_iter(s.iter().zip(&p).map(|(sk, pk)| -(sk - pk) / tau));
    Ok(coeff.dot(m).to_vec())
}

/// `(alignment, uniformity)` with
/// alignment `= -(1/τ) Σ_k S_ik z·μ_k` and uniformity `= log Σ_k exp(z·μ_k / τ)`.
/// Their sum is the per-sample loss when `S_i` sums to one.
pub fn decompose_alignment_uniformity(
    z: &[f64],
    s: &[f64],
    m: &Array2<f64>,
    tau: f64,
) -> Result<(f64, f64)> {
    check_tau(tau)?;
    check_dims(z.len(), m)?;
    if s.len() != m.nrows() {
        return Err(Error::ShapeMismatch("label row length".into()));
    }
    let sims = m.dot(&ArrayView1::from(z));
    let alignment = -s.iter().zip(sims.iter()).map(|(a, b)| a * b).sum::<f64>() / tau;
    let scaled: Vec<f64> = sims.iter().map(|v| v / tau).collect();
    Ok((alignment, log_sum_exp(&scaled)?))
}

/// Gradients of the two decomposition terms with respect to `z`.
pub fn alignment_uniformity_grads(
    z: &[f64],
    s: &[f64],
    m: &Array2<f64>,
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = posterior(z, m, tau)?;
    let align = Array1::from_iter(s.iter().map(|sk| -sk / tau)).dot(m).to_vec();
    let unif = Array1::from_iter(p.iter().map(|pk| pk / tau)).dot(m).to_vec();
    Ok((align, unif))
}

/// `log( 1/(C²-C) Σ_{i≠j} exp((μ_i·μ_j)² / τ) )`.
pub fn r_ortho(m: &Array2<f64>, tau: f64) -> Result<f64> {
    Ok(r_ortho_with_grad(m, tau)?.0)
}

/// Regularizer value and its gradient with respect to `M`.
pub fn r_ortho_with_grad(m: &Array2<f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    check_tau(tau)?;
    let c = m.nrows();
    if c < 2 {
        return Err(Error::SingleClass);
    }
    let gram = m.dot(&m.t());
    let mut max = f64::NEG_INFINITY;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                max = max.max(gram[[i, j]] * gram[[i, j]] / tau);
            }
        }
    }
    let mut shifted = Array2::zeros((c, c));
    let mut sum = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                let e = (gram[[i, j]] * gram[[i, j]] / tau - max).exp();
                shifted[[i, j]] = e;
                sum += e;
            }
        }
    }
    if !sum.is_finite() {
        return Err(Error::NonFiniteEvaluation(0));
    }
    // max + log(mean exp(x - max)): exact at the all-equal boundary.
    let value = max + (sum / (c * c - c) as f64).ln();
    // dR/dG_ij = w_ij 2 G_ij / τ, w = softmax over pairs; G symmetric.
    let mut coeff = Array2::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            if i != j {
                let w = shifted[[i, j]] / sum;
                coeff[[i, j]] = 2.0 * w * 2.0 * gram[[i, j]] / tau;
            }
        }
    }
    Ok((value, coeff.dot(m)))
}

/// Loss terms for one stage-one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub vmfal: f64,
    pub r_ortho: f64,
    pub total: f64,
}

pub fn total_loss(
    z: ArrayView2<f64>,
    s: &LabelSimilarity,
    m: &Array2<f64>,
    tau: f64,
    r_ortho_enabled: bool,
) -> Result<TotalLoss> {
    let vmfal = vmfal_soft(z, s, m, tau)?;
    let r = if r_ortho_enabled { r_ortho(m, tau)? } else { 0.0 };
    Ok(TotalLoss {
        vmfal,
        r_ortho: r,
        total: vmfal + r,
    })
}

/// Total loss with gradients for `Z` and `M`.
pub fn total_loss_with_grad(
    z: ArrayView2<f64>,
    s: &LabelSimilarity,
    m: &Array2<f64>,
    tau: f64,
    r_ortho_enabled: bool,
    counter: &SimilarityCounter,
) -> Result<(TotalLoss, Array2<f64>, Array2<f64>)> {
    let soft = vmfal_soft_with_grad(z, s, m, tau, counter)?;
    let mut grad_m = soft.grad_m;
    let mut r = 0.0;
    if r_ortho_enabled {
        let (value, g) = r_ortho_with_grad(m, tau)?;
        r = value;
        grad_m += &g;
    }
    Ok((
        TotalLoss {
            vmfal: soft.loss,
            r_ortho: r,
            total: soft.loss + r,
        },
        soft.grad_z,
        grad_m,
    ))
}
