//! Two-stage training: spherical representation learning, then a classifier
//! on frozen, unnormalized encoder features.

use ndarray::{Array2, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::augment::{build_unified_batch, jitter, prepare_batch, AugmentConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::losses::{label_similarity, total_loss_with_grad, SimilarityCounter};
use crate::model::{
    max_row_norm_deviation, renormalize_embeddings, DenseGrad, ModelConfig, ModelGrads,
    ModelState,
};
use crate::numerics::{log_sum_exp, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub learning_rate_stage2: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub r_ortho_enabled: bool,
    /// Re-jitter and re-encode the training inputs every stage-two epoch
    /// instead of fitting on the static feature bank.
    pub stage2_reencode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 200,
            epochs_stage2: 100,
            batch_size: 64,
            learning_rate: 0.05,
            learning_rate_stage2: 0.05,
            momentum: 0.9,
            lr_schedule: LrSchedule::Cosine,
            r_ortho_enabled: true,
            stage2_reencode: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_stage1 == 0 || self.epochs_stage2 == 0 || self.batch_size == 0 {
            return Err(Error::Config("epoch counts and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.learning_rate_stage2 >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    fn lr_at(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
            }
        }
    }
}

/// Unnormalized encoder features of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub source: String,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOneEpoch {
    pub loss: f64,
    pub vmfal: f64,
    pub r_ortho: f64,
    pub learning_rate: f64,
    /// Largest `|‖μ_c‖ - 1|` at the end of the epoch.
    pub max_row_norm_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct StageOneOutput {
    pub state: ModelState,
    pub trace: Vec<StageOneEpoch>,
    pub similarity_evaluations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTwoEpoch {
    pub loss: f64,
    pub bank_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct StageTwoOutput {
    pub state: ModelState,
    pub trace: Vec<StageTwoEpoch>,
}

/// Heavy-ball SGD: `v ← μ v + g`, `θ ← θ - lr v`.
#[derive(Debug, Clone)]
struct Sgd {
    momentum: f64,
    velocity: ModelGrads,
}

fn momentum_step<D: Dimension>(
    param: &mut ndarray::Array<f64, D>,
    vel: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    lr: f64,
    momentum: f64,
) {
    Zip::from(param).and(vel).and(grad).for_each(|p, v, &g| {
        *v = momentum * *v + g;
        *p -= lr * *v;
    });
}

fn dense_step(
    layer: &mut crate::model::Dense,
    vel: &mut DenseGrad,
    grad: &DenseGrad,
    lr: f64,
    momentum: f64,
) {
    momentum_step(&mut layer.weight, &mut vel.weight, &grad.weight, lr, momentum);
    momentum_step(&mut layer.bias, &mut vel.bias, &grad.bias, lr, momentum);
}

impl Sgd {
    fn new(state: &ModelState, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: state.zero_grads(),
        }
    }

    fn step_representation(
        &mut self,
        state: &mut ModelState,
        enc: &[DenseGrad],
        proj: &DenseGrad,
        grad_m: &Array2<f64>,
        lr: f64,
    ) {
        let mu = self.momentum;
        for ((layer, vel), g) in state
            .encoder
            .iter_mut()
            .zip(self.velocity.encoder.iter_mut())
            .zip(enc)
        {
            dense_step(layer, vel, g, lr, mu);
        }
        dense_step(&mut state.projection, &mut self.velocity.projection, proj, lr, mu);
        momentum_step(
            &mut state.label_embeddings,
            &mut self.velocity.label_embeddings,
            grad_m,
            lr,
            mu,
        );
    }

    fn step_classifier(&mut self, state: &mut ModelState, grads: &[DenseGrad], lr: f64) {
        let mu = self.momentum;
        for ((layer, vel), g) in state
            .classifier
            .iter_mut()
            .zip(self.velocity.classifier.iter_mut())
            .zip(grads)
        {
            dense_step(layer, vel, g, lr, mu);
        }
    }
}

fn gather_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Stage one: per batch, jitter and smooth, build the unified batch with
/// Mixup, encode, project, normalize, then take one projected gradient step
/// on encoder, projection and label embeddings.
pub fn train_stage_one(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<StageOneOutput> {
    data.ensure_training_split()?;
    model_cfg.validate()?;
    train_cfg.validate()?;
    augment_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if data.input_dim() != model_cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset input_dim {} vs model input_dim {}",
            data.input_dim(),
            model_cfg.input_dim
        )));
    }
    let c = model_cfg.n_classes;
    let targets = data.known_class_targets();
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::BadIndex { index: bad, len: c });
    }

    let mut state = ModelState::new(model_cfg.clone(), rng)?;
    let mut opt = Sgd::new(&state, train_cfg.momentum);
    let counter = SimilarityCounter::new();
    let mut trace = Vec::with_capacity(train_cfg.epochs_stage1);
    let n = data.len();

    for epoch in 0..train_cfg.epochs_stage1 {
        let lr = train_cfg.lr_at(train_cfg.learning_rate, epoch, train_cfg.epochs_stage1);
        let order = rng.permutation(n);
        let (mut sum_total, mut sum_vmfal, mut sum_r, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let x = gather_rows(&data.inputs, idx);
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let base = prepare_batch(x.view(), &t, c, augment_cfg, rng)?;
            let unified = build_unified_batch(&base, augment_cfg, rng)?;
            let cache = state.forward_projection(unified.inputs.view())?;
            let s = label_similarity(unified.soft_labels.view())?;
            let (loss, grad_z, grad_m) = total_loss_with_grad(
                cache.z.view(),
                &s,
                &state.label_embeddings,
                model_cfg.tau,
                train_cfg.r_ortho_enabled,
                &counter,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "vmfal={} r_ortho={} rows={:?}",
                        loss.vmfal,
                        loss.r_ortho,
                        &idx[..idx.len().min(8)]
                    ),
                });
            }
            if lr > 0.0 {
                let (enc, proj) = state.backward_projection(&cache, &grad_z);
                opt.step_representation(&mut state, &enc, &proj, &grad_m, lr);
                state.label_embeddings = renormalize_embeddings(std::mem::take(
                    &mut state.label_embeddings,
                ))?;
            }
            sum_total += loss.total;
            sum_vmfal += loss.vmfal;
            sum_r += loss.r_ortho;
            batches += 1;
        }
        let k = batches as f64;
        trace.push(StageOneEpoch {
            loss: sum_total / k,
            vmfal: sum_vmfal / k,
            r_ortho: sum_r / k,
            learning_rate: lr,
            max_row_norm_deviation: max_row_norm_deviation(&state.label_embeddings),
        });
    }
    Ok(StageOneOutput {
        state,
        trace,
        similarity_evaluations: counter.get(),
    })
}

/// Encoder features of the training split, without L2 normalization.
/// Projection head and label embeddings are not used.
pub fn extract_features(model: &ModelState, data: &Dataset) -> Result<FeatureBank> {
    data.ensure_training_split()?;
    Ok(FeatureBank {
        features: model.encode_batch(data.inputs.view())?,
        labels: data.known_class_targets(),
        source: "train".to_string(),
    })
}

/// Encoder features of any split, for evaluation.
pub fn encode_dataset(model: &ModelState, data: &Dataset) -> Result<Array2<f64>> {
    model.encode_batch(data.inputs.view())
}

/// `-Σ_k y_k log softmax(logits)_k`.
pub fn cross_entropy(logits: &[f64], label: &[f64]) -> Result<f64> {
    if logits.len() != label.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} label entries",
            logits.len(),
            label.len()
        )));
    }
    let lse = log_sum_exp(logits)?;
    Ok(-label
        .iter()
        .zip(logits)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, l)| y * (l - lse))
        .sum::<f64>())
}

/// Mean hard-label cross-entropy over rows and its gradient wrt the logits.
pub(crate) fn cross_entropy_batch(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row.as_slice().expect("standard layout"))?;
        loss -= row[targets[i]] - lse;
        let mut g = grad.row_mut(i);
        g.assign(&row.mapv(|v| (v - lse).exp()));
        g[targets[i]] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

pub fn bank_accuracy(model: &ModelState, bank: &FeatureBank) -> Result<f64> {
    let logits = model.classify_batch(bank.features.view())?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&bank.labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    Ok(correct as f64 / bank.len().max(1) as f64)
}

/// Stage two: fits only the classifier with cross-entropy on frozen
/// encoder features. With `stage2_reencode` the training inputs are
/// jittered and encoded afresh every epoch; otherwise the static bank is
/// used. The accuracy trace is always measured on `bank`.
pub fn train_stage_two(
    data: &Dataset,
    bank: &FeatureBank,
    model: ModelState,
    train_cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<StageTwoOutput> {
    data.ensure_training_split()?;
    train_cfg.validate()?;
    if bank.len() != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "bank has {} rows, training split {}",
            bank.len(),
            data.len()
        )));
    }
    let mut state = model;
    let mut opt = Sgd::new(&state, train_cfg.momentum);
    let mut trace = Vec::with_capacity(train_cfg.epochs_stage2);
    let n = bank.len();
    for epoch in 0..train_cfg.epochs_stage2 {
        let lr = train_cfg.lr_at(train_cfg.learning_rate_stage2, epoch, train_cfg.epochs_stage2);
        let features = if train_cfg.stage2_reencode {
            let mut x = data.inputs.clone();
            jitter(&mut x, augment_cfg.jitter_std, rng);
            state.encode_batch(x.view())?
        } else {
            bank.features.clone()
        };
        let order = rng.permutation(n);
        let (mut sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(train_cfg.batch_size) {
            let f = gather_rows(&features, idx);
            let t: Vec<usize> = idx.iter().map(|&i| bank.labels[i]).collect();
            let (logits, cache) = state.forward_classifier(f.view())?;
            let (loss, grad) = cross_entropy_batch(&logits, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batches,
                    detail: "stage-two cross-entropy".into(),
                });
            }
            if lr > 0.0 {
                let grads = state.backward_classifier(&cache, grad);
                opt.step_classifier(&mut state, &grads, lr);
            }
            sum += loss;
            batches += 1;
        }
        trace.push(StageTwoEpoch {
            loss: sum / batches as f64,
            bank_accuracy: bank_accuracy(&state, bank)?,
            learning_rate: lr,
        });
    }
    Ok(StageTwoOutput { state, trace })
}

/// Everything produced by one seed of the two-stage pipeline.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: ModelState,
    pub bank: FeatureBank,
    pub stage_one: Vec<StageOneEpoch>,
    pub stage_two: Vec<StageTwoEpoch>,
}

/// Runs both stages. Stage one and stage two draw from separate streams of
/// the given seed.
pub fn train_two_stage(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let mut rng1 = SeededRng::new(seed, 11);
    let one = train_stage_one(data, model_cfg, train_cfg, augment_cfg, &mut rng1)?;
    let bank = extract_features(&one.state, data)?;
    let mut rng2 = SeededRng::new(seed, 12);
    let two = train_stage_two(data, &bank, one.state, train_cfg, augment_cfg, &mut rng2)?;
    Ok(TrainedModel {
        state: two.state,
        bank,
        stage_one: one.trace,
        stage_two: two.trace,
    })
}

pub(crate) fn row_argmax(logits: &Array2<f64>) -> Vec<usize> {
    logits.rows().into_iter().map(|r| argmax(r.view())).collect()
}
