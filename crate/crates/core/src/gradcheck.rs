//! Finite-difference verification of every analytic gradient in the crate:
//! the per-sample loss gradient, the regularizer, and each model parameter
//! block through the full forward pass.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{label_similarity, r_ortho_with_grad, total_loss_with_grad, vmfal_grad_z, vmfal_sample, SimilarityCounter};
use crate::model::{Activation, ClassifierKind, ModelConfig, ModelState, ParamBlock};
use crate::numerics::{finite_difference_gradient, sample_uniform_sphere, SeededRng};
use crate::training::cross_entropy_batch;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor in [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Deliberate defects for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the analytic per-sample loss gradient.
    FlipLossGradSign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random instances for the per-sample loss and regularizer checks.
    pub instances: usize,
    pub tolerance: f64,
    pub fault: Fault,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 50,
            tolerance: DEFAULT_TOLERANCE,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockResult {
    pub block: String,
    pub checks: usize,
    pub worst_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    /// The failing block with the largest error, as an error value.
    pub fn into_result(self) -> Result<Self> {
        match self
            .blocks
            .iter()
            .filter(|b| !b.passed)
            .max_by(|a, b| a.worst_relative_error.total_cmp(&b.worst_relative_error))
        {
            Some(b) => Err(Error::GradCheckFailure {
                block: b.block.clone(),
                worst: b.worst_relative_error,
            }),
            None => Ok(self),
        }
    }
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`; NaN counts as infinite error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let e = (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.len() != numeric.len() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}

fn random_soft_row(c: usize, rng: &mut SeededRng) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.uniform() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn random_unit_rows(n: usize, p: usize, rng: &mut SeededRng) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((n, p));
    for mut row in m.rows_mut() {
        let u = sample_uniform_sphere(p, rng)?;
        row.iter_mut().zip(u.as_slice()).for_each(|(a, b)| *a = *b);
    }
    Ok(m)
}

/// Worst relative error of the per-sample loss gradient on one instance.
pub fn check_loss_instance(
    p: usize,
    c: usize,
    tau: f64,
    fault: Fault,
    rng: &mut SeededRng,
) -> Result<f64> {
    let z = sample_uniform_sphere(p, rng)?.into_inner();
    let m = random_unit_rows(c, p, rng)?;
    let s = random_soft_row(c, rng);
    let mut analytic = vmfal_grad_z(&z, &s, &m, tau)?;
    if fault == Fault::FlipLossGradSign {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let numeric = finite_difference_gradient(
        |zz| vmfal_sample(zz, &s, &m, tau).unwrap_or(f64::NAN),
        &z,
        FD_STEP,
    )?;
    Ok(worst_relative_error(&analytic, &numeric))
}

fn loss_block(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<BlockResult> {
    let mut worst = 0.0f64;
    let mut checks = 0;
    for i in 0..opts.instances {
        let p = [4, 16][i % 2];
        let c = [3, 10][(i / 2) % 2];
        let tau = [0.1, 1.0][(i / 4) % 2];
        worst = worst.max(check_loss_instance(p, c, tau, opts.fault, rng)?);
        checks += 1;
    }
    Ok(block_result("loss", checks, worst, opts.tolerance))
}

fn regularizer_block(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<BlockResult> {
    let mut worst = 0.0f64;
    let mut checks = 0;
    for i in 0..opts.instances {
        let p = [4, 16][i % 2];
        let c = [3, 10][(i / 2) % 2];
        let tau = [0.1, 1.0][(i / 4) % 2];
        let m = random_unit_rows(c, p, rng)?;
        let (_, g) = r_ortho_with_grad(&m, tau)?;
        let flat: Vec<f64> = m.iter().copied().collect();
        let numeric = finite_difference_gradient(
            |t| {
                let mm = Array2::from_shape_vec((c, p), t.to_vec()).expect("shape");
                r_ortho_with_grad(&mm, tau).map(|r| r.0).unwrap_or(f64::NAN)
            },
            &flat,
            FD_STEP,
        )?;
        let analytic: Vec<f64> = g.iter().copied().collect();
        worst = worst.max(worst_relative_error(&analytic, &numeric));
        checks += 1;
    }
    Ok(block_result("regularizer", checks, worst, opts.tolerance))
}

fn block_result(name: &str, checks: usize, worst: f64, tolerance: f64) -> BlockResult {
    BlockResult {
        block: name.to_string(),
        checks,
        worst_relative_error: worst,
        passed: worst <= tolerance,
    }
}

fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden_layers: vec![5],
        d: 4,
        p: 3,
        n_classes: 3,
        activation: Activation::Tanh,
        tau: 0.5,
        classifier: ClassifierKind::Mlp { hidden: 4 },
    }
}

/// Stage-one objective (soft loss plus regularizer) and stage-two
/// cross-entropy, checked per parameter block.
fn model_blocks(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<Vec<BlockResult>> {
    let cfg = gradcheck_model_config();
    let state = ModelState::new(cfg.clone(), rng)?;
    let n = 5;
    let x = Array2::from_shape_fn((n, cfg.input_dim), |_| rng.normal());
    let soft = Array2::from_shape_vec(
        (n, cfg.n_classes),
        (0..n).flat_map(|_| random_soft_row(cfg.n_classes, rng)).collect(),
    )
    .expect("shape");
    let s = label_similarity(soft.view())?;
    let targets: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    let counter = SimilarityCounter::new();

    let stage_one = |st: &ModelState| -> Result<f64> {
        let cache = st.forward_projection(x.view())?;
        let (loss, _, _) =
            total_loss_with_grad(cache.z.view(), &s, &st.label_embeddings, cfg.tau, true, &counter)?;
        Ok(loss.total)
    };
    let features = state.encode_batch(x.view())?;
    let stage_two = |st: &ModelState| -> Result<f64> {
        let (logits, _) = st.forward_classifier(features.view())?;
        Ok(cross_entropy_batch(&logits, &targets)?.0)
    };

    let mut grads = state.zero_grads();
    let cache = state.forward_projection(x.view())?;
    let (_, grad_z, grad_m) =
        total_loss_with_grad(cache.z.view(), &s, &state.label_embeddings, cfg.tau, true, &counter)?;
    let (enc, proj) = state.backward_projection(&cache, &grad_z);
    grads.encoder = enc;
    grads.projection = proj;
    grads.label_embeddings = grad_m;
    let (logits, ccache) = state.forward_classifier(features.view())?;
    let (_, grad_logits) = cross_entropy_batch(&logits, &targets)?;
    grads.classifier = state.backward_classifier(&ccache, grad_logits);

    ParamBlock::ALL
        .iter()
        .map(|&block| {
            let objective = |t: &[f64]| {
                let mut st = state.clone();
                st.set_flat_params(block, t).expect("block length");
                let v = match block {
                    ParamBlock::Classifier => stage_two(&st),
                    _ => stage_one(&st),
                };
                v.unwrap_or(f64::NAN)
            };
            let numeric = finite_difference_gradient(objective, &state.flat_params(block), FD_STEP)?;
            let worst = worst_relative_error(&grads.flat(block), &numeric);
            Ok(block_result(block.name(), numeric.len(), worst, opts.tolerance))
        })
        .collect()
}

/// Runs every block; inspect [`GradcheckReport::passed`] for the verdict.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = SeededRng::new(opts.seed, 0);
    let mut blocks = vec![loss_block(opts, &mut rng)?, regularizer_block(opts, &mut rng)?];
    blocks.extend(model_blocks(opts, &mut rng)?);
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        blocks,
    })
}
