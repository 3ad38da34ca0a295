//! Closed-set and open-set evaluation metrics plus the feature-geometry
//! diagnostics (angular separability, norm separability, dispersion).

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::l2_normalize;
use crate::scoring::ScoredSample;

pub fn accuracy(predictions: &[usize], true_classes: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != true_classes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            true_classes.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(true_classes)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

fn sorted_ascending(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Twice the Mann-Whitney U of `known` over `unknown`: every (known, unknown)
/// pair contributes 2 if the known score is larger and 1 on a tie.
fn doubled_u(known: &[f64], unknown: &[f64]) -> u128 {
    let u = sorted_ascending(unknown);
    known
        .iter()
        .map(|&s| {
            let below = u.partition_point(|&x| x < s);
            let not_above = u.partition_point(|&x| x <= s);
            (2 * below + (not_above - below)) as u128
        })
        .sum()
}

/// Probability that a known sample outscores an unknown one, ties counted
/// one half.
pub fn auroc(known_scores: &[f64], unknown_scores: &[f64]) -> Result<f64> {
    if known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total = 2 * known_scores.len() as u128 * unknown_scores.len() as u128;
    let u2 = doubled_u(known_scores, unknown_scores);
    // Always divide the smaller share, so that auroc(a, b) + auroc(b, a) == 1.
    Ok(if 2 * u2 <= total {
        u2 as f64 / total as f64
    } else {
        1.0 - (total - u2) as f64 / total as f64
    })
}

/// ROC points `(fpr, tpr)` from the strictest threshold to the loosest,
/// starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(known_scores: &[f64], unknown_scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    if known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (nk, nu) = (known_scores.len() as f64, unknown_scores.len() as f64);
    let mut all: Vec<(f64, bool)> = known_scores
        .iter()
        .map(|&s| (s, true))
        .chain(unknown_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / nu, tp as f64 / nk));
    }
    Ok(pts)
}

/// Integer OSCR curve `(false positives, correct accepts)`, strictest
/// threshold first, plus the known and unknown counts.
fn oscr_counts(known: &[ScoredSample], unknown_scores: &[f64]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if known.is_empty() || unknown_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    // (score, is_known, correct)
    let mut all: Vec<(f64, bool, bool)> = known
        .iter()
        .map(|s| (s.score, true, s.correct()))
        .chain(unknown_scores.iter().map(|&s| (s, false, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![(0, 0)];
    let (mut cc, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                cc += u64::from(all[i].2);
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp, cc));
    }
    Ok((pts, known.len() as u64, unknown_scores.len() as u64))
}

/// Points `(fpr, ccr)` of the open-set classification curve, from the
/// strictest threshold to the loosest. At threshold θ, CCR is the fraction
/// of known samples that are correctly classified and score at least θ, and
/// FPR the fraction of unknown samples scoring at least θ.
pub fn oscr_curve(known: &[ScoredSample], unknown_scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    let (pts, nk, nu) = oscr_counts(known, unknown_scores)?;
    Ok(pts
        .into_iter()
        .map(|(fp, cc)| (fp as f64 / nu as f64, cc as f64 / nk as f64))
        .collect())
}

/// Trapezoidal area under a curve given in non-decreasing x order.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// Area under the CCR-versus-FPR curve. The trapezoid sum is accumulated
/// on integer counts and divided once, so it is exact up to that division.
pub fn oscr(known: &[ScoredSample], unknown_scores: &[f64]) -> Result<f64> {
    let (pts, nk, nu) = oscr_counts(known, unknown_scores)?;
    let twice_area: u128 = pts
        .windows(2)
        .map(|w| u128::from(w[1].0 - w[0].0) * u128::from(w[1].1 + w[0].1))
        .sum();
    Ok(twice_area as f64 / (2 * u128::from(nk) * u128::from(nu)) as f64)
}

/// Best balanced detection accuracy
/// `½·P(known ≥ θ) + ½·P(unknown < θ)` over all thresholds.
pub fn dtacc(known_scores: &[f64], unknown_scores: &[f64]) -> Result<f64> {
    if known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = sorted_ascending(known_scores);
    let u = sorted_ascending(unknown_scores);
    let (nk, nu) = (k.len() as f64, u.len() as f64);
    let eval = |theta: f64| {
        let known_ge = k.len() - k.partition_point(|&x| x < theta);
        let unknown_lt = u.partition_point(|&x| x < theta);
        0.5 * known_ge as f64 / nk + 0.5 * unknown_lt as f64 / nu
    };
    // θ = +∞ admits nothing; θ = -∞ admits everything; both give ½.
    let mut best = eval(f64::INFINITY).max(eval(f64::NEG_INFINITY));
    for &t in k.iter().chain(u.iter()) {
        best = best.max(eval(t));
    }
    Ok(best)
}

fn normalized_rows(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = a.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let v = row.to_vec();
        let u = l2_normalize(&v).map_err(|_| Error::ZeroVector(i))?;
        row.assign(&Array1::from(u.into_inner()));
    }
    Ok(out)
}

/// Mean over unknown rows of the largest cosine to any known row.
/// Lower values mean unknowns sit further from the known samples.
pub fn angular_separability(
    known: ArrayView2<f64>,
    unknown: ArrayView2<f64>,
    exec: Exec,
) -> Result<f64> {
    if known.nrows() == 0 || unknown.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let kn = normalized_rows(known)?;
    let un = normalized_rows(unknown)?;
    let per_unknown = exec.map_range(un.nrows(), |i| {
        let u = un.row(i);
        kn.rows()
            .into_iter()
            .map(|v| u.dot(&v))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(per_unknown.iter().sum::<f64>() / per_unknown.len() as f64)
}

pub fn row_norms(a: ArrayView2<f64>) -> Vec<f64> {
    a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

/// AUROC of known feature norms against unknown feature norms.
pub fn norm_separability(known: ArrayView2<f64>, unknown: ArrayView2<f64>) -> Result<f64> {
    auroc(&row_norms(known), &row_norms(unknown))
}

/// Mean pairwise angle, in degrees, between the normalized per-class mean
/// features of classes `0..n_classes`.
pub fn dispersion(features: ArrayView2<f64>, labels: &[usize], n_classes: usize) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::BadDimension("dispersion needs at least two classes".into()));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, features.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in features.rows().into_iter().zip(labels) {
        if c >= n_classes {
            return Err(Error::BadIndex {
                index: c,
                len: n_classes,
            });
        }
        let mut s = sums.row_mut(c);
        s += &row;
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ClassWithNoSamples(c));
    }
    for (mut s, &n) in sums.rows_mut().into_iter().zip(&counts) {
        s /= n as f64;
    }
    let means = normalized_rows(sums.view())?;
    let mut total = 0.0;
    for i in 0..n_classes {
        for j in 0..n_classes {
            if i != j {
                total += means.row(i).dot(&means.row(j)).clamp(-1.0, 1.0).acos();
            }
        }
    }
    Ok((total / (n_classes * (n_classes - 1)) as f64).to_degrees())
}

/// Open-set metrics for one scoring rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    pub rule: String,
    pub auroc: f64,
    pub oscr: f64,
    pub dtacc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub accuracy: f64,
    pub rules: Vec<RuleMetrics>,
    pub angular_separability: f64,
    pub norm_separability: f64,
    pub dispersion_degrees: f64,
    pub openness: f64,
    pub config_hash: String,
    pub tags: Vec<String>,
}
