//! Stage-one augmentation: input jitter, label smoothing, Mixup and the
//! unified 2N-row batch.

use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabeledBatch {
    pub inputs: Array2<f64>,
    pub soft_labels: Array2<f64>,
}

impl SoftLabeledBatch {
    /// Checks that row counts agree and every label row is a probability vector.
    pub fn new(inputs: Array2<f64>, soft_labels: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != soft_labels.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows vs {} label rows",
                inputs.nrows(),
                soft_labels.nrows()
            )));
        }
        for (i, row) in soft_labels.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|v| *v < 0.0) {
                return Err(Error::ShapeMismatch(format!(
                    "label row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self {
            inputs,
            soft_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.soft_labels.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub sigma: f64,
    pub jitter_std: f64,
    pub mixup_enabled: bool,
    pub ls_enabled: bool,
    pub beta_params: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            jitter_std: 0.05,
            mixup_enabled: true,
            ls_enabled: true,
            beta_params: (1.0, 1.0),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::InvalidSigma(self.sigma));
        }
        if !(self.jitter_std >= 0.0) {
            return Err(Error::Config(format!("jitter_std {} < 0", self.jitter_std)));
        }
        let (a, b) = self.beta_params;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!("beta parameters ({a}, {b}) must be positive")));
        }
        Ok(())
    }
}

/// Smoothed one-hot: `1 - sigma` on the target, `sigma / (C - 1)` elsewhere.
pub fn label_smooth(class_index: usize, n_classes: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::InvalidSigma(sigma));
    }
    if n_classes < 2 || class_index >= n_classes {
        return Err(Error::BadIndex {
            index: class_index,
            len: n_classes,
        });
    }
    let off = sigma / (n_classes - 1) as f64;
    let mut y = vec![off; n_classes];
    y[class_index] = 1.0 - sigma;
    Ok(y)
}

pub fn mixup_pair(
    x_i: &[f64],
    y_i: &[f64],
    x_j: &[f64],
    y_j: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_i.len() != x_j.len() || y_i.len() != y_j.len() {
        return Err(Error::ShapeMismatch(format!(
            "mixup of ({}, {}) with ({}, {})",
            x_i.len(),
            y_i.len(),
            x_j.len(),
            y_j.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(u, v)| lambda * u + (1.0 - lambda) * v)
            .collect()
    };
    Ok((mix(x_i, x_j), mix(y_i, y_j)))
}

/// Adds isotropic Gaussian noise with standard deviation `std` in place.
pub fn jitter(inputs: &mut Array2<f64>, std: f64, rng: &mut SeededRng) {
    if std == 0.0 {
        return;
    }
    inputs.iter_mut().for_each(|v| *v += std * rng.normal());
}

/// Jitters the inputs and turns class targets into (optionally smoothed)
/// label vectors. This is the `{x', y'}` half of the unified batch.
pub fn prepare_batch(
    inputs: ArrayView2<f64>,
    targets: &[usize],
    n_classes: usize,
    config: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<SoftLabeledBatch> {
    if inputs.nrows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs vs {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    let sigma = if config.ls_enabled { config.sigma } else { 0.0 };
    let mut labels = Array2::zeros((targets.len(), n_classes));
    for (i, &t) in targets.iter().enumerate() {
        let y = label_smooth(t, n_classes, sigma)?;
        labels.row_mut(i).assign(&ndarray::Array1::from(y));
    }
    let mut x = inputs.to_owned();
    jitter(&mut x, config.jitter_std, rng);
    SoftLabeledBatch::new(x, labels)
}

fn draw_lambda(config: &AugmentConfig, rng: &mut SeededRng) -> f64 {
    match config.beta_params {
        (a, b) if a == 1.0 && b == 1.0 => rng.uniform(),
        (a, b) => Beta::new(a, b)
            .expect("validated beta parameters")
            .sample(rng),
    }
}

/// Appends one Mixup row per original row: row `N + k` mixes row `k` with
/// row `perm[k]` of a uniform random permutation, with its own λ.
pub fn build_unified_batch(
    batch: &SoftLabeledBatch,
    config: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<SoftLabeledBatch> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !config.mixup_enabled {
        return Ok(batch.clone());
    }
    let (dx, dy) = (batch.inputs.ncols(), batch.soft_labels.ncols());
    let mut inputs = Array2::zeros((2 * n, dx));
    let mut labels = Array2::zeros((2 * n, dy));
    inputs.slice_mut(s![..n, ..]).assign(&batch.inputs);
    labels.slice_mut(s![..n, ..]).assign(&batch.soft_labels);
    let perm = rng.permutation(n);
    for (k, &j) in perm.iter().enumerate() {
        let lambda = draw_lambda(config, rng);
        let xi = batch.inputs.row(k);
        let xj = batch.inputs.row(j);
        let yi = batch.soft_labels.row(k);
        let yj = batch.soft_labels.row(j);
        let (x, y) = mixup_pair(
            xi.as_slice().expect("standard layout"),
            yi.as_slice().expect("standard layout"),
            xj.as_slice().expect("standard layout"),
            yj.as_slice().expect("standard layout"),
            lambda,
        )?;
        inputs.row_mut(n + k).assign(&ndarray::Array1::from(x));
        labels.row_mut(n + k).assign(&ndarray::Array1::from(y));
    }
    SoftLabeledBatch::new(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothing_examples() {
        assert_eq!(
            label_smooth(0, 5, 0.1).unwrap(),
            vec![0.9, 0.025, 0.025, 0.025, 0.025]
        );
        assert_eq!(label_smooth(2, 4, 0.0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        let y = label_smooth(1, 2, 0.2).unwrap();
        assert!((y[0] - 0.2).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert!(matches!(label_smooth(0, 3, 1.0), Err(Error::InvalidSigma(_))));
        assert!(matches!(label_smooth(0, 3, -0.1), Err(Error::InvalidSigma(_))));
        assert!(matches!(label_smooth(3, 3, 0.1), Err(Error::BadIndex { .. })));
    }

    #[test]
    fn mixup_examples() {
        let (x, y) = mixup_pair(&[1.0, 2.0], &[0.3, 0.7], &[5.0, -1.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(y, vec![0.3, 0.7]);
        let (x, y) = mixup_pair(&[1.0, 2.0], &[0.3, 0.7], &[5.0, -1.0], &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(x, vec![5.0, -1.0]);
        assert_eq!(y, vec![1.0, 0.0]);
        let (_, y) = mixup_pair(&[0.0], &[1.0, 0.0], &[0.0], &[0.0, 1.0], 0.5).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
        assert!(matches!(
            mixup_pair(&[0.0], &[1.0], &[0.0, 1.0], &[1.0], 0.5),
            Err(Error::ShapeMismatch(_))
        ));
        let mut rng = SeededRng::new(2, 0);
        let a: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let (x, _) = mixup_pair(&a, &[1.0], &b, &[1.0], 0.3).unwrap();
        for k in 0..9 {
            assert!((x[k] - (0.3 * a[k] + 0.7 * b[k])).abs() <= 1e-12);
        }
    }

    fn random_batch(n: usize, c: usize, rng: &mut SeededRng) -> SoftLabeledBatch {
        let inputs = Array2::from_shape_fn((n, 3), |_| rng.normal());
        let targets: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let cfg = AugmentConfig {
            jitter_std: 0.0,
            ..Default::default()
        };
        prepare_batch(inputs.view(), &targets, c, &cfg, rng).unwrap()
    }

    #[test]
    fn unified_batch_layout() {
        let mut rng = SeededRng::new(0, 0);
        let batch = random_batch(4, 3, &mut rng);
        let out = build_unified_batch(&batch, &AugmentConfig::default(), &mut rng).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out.inputs.slice(s![..4, ..]), batch.inputs);
        assert_eq!(out.soft_labels.slice(s![..4, ..]), batch.soft_labels);
        let off = AugmentConfig {
            mixup_enabled: false,
            ..Default::default()
        };
        assert_eq!(build_unified_batch(&batch, &off, &mut rng).unwrap(), batch);
        let empty = SoftLabeledBatch::new(Array2::zeros((0, 3)), Array2::zeros((0, 3))).unwrap();
        assert!(matches!(
            build_unified_batch(&empty, &off, &mut rng),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn unified_rows_stay_on_simplex() {
        let mut rng = SeededRng::new(11, 0);
        for _ in 0..100 {
            let n = 1 + rng.below(16);
            let batch = random_batch(n, 2 + rng.below(8), &mut rng);
            let out = build_unified_batch(&batch, &AugmentConfig::default(), &mut rng).unwrap();
            for row in out.soft_labels.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn prepare_without_smoothing_is_one_hot() {
        let mut rng = SeededRng::new(0, 0);
        let cfg = AugmentConfig {
            ls_enabled: false,
            jitter_std: 0.0,
            ..Default::default()
        };
        let x = Array2::from_elem((2, 2), 1.5);
        let b = prepare_batch(x.view(), &[1, 0], 3, &cfg, &mut rng).unwrap();
        assert_eq!(b.inputs, x);
        assert_eq!(b.soft_labels.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn mixup_preserves_simplex(lambda in 0.0f64..=1.0, t1 in 0usize..6, t2 in 0usize..6, sigma in 0.0f64..0.99) {
            let a = label_smooth(t1, 6, sigma).unwrap();
            let b = label_smooth(t2, 6, sigma).unwrap();
            let (_, y) = mixup_pair(&[0.0], &a, &[1.0], &b, lambda).unwrap();
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(y.iter().all(|v| *v >= 0.0));
            if sigma > 0.0 {
                prop_assert!(y.iter().all(|v| *v > 0.0));
            }
        }
    }
}
