//! Encoder, projection head, label embeddings and classifier, with explicit
//! reverse-mode gradients over the layer composition.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, NORM_EPS};

pub const CHECKPOINT_SCHEMA: &str = "osrlab.checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassifierKind {
    Linear,
    /// One hidden layer of the given width.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    /// Feature (encoder output) dimension.
    pub d: usize,
    /// Projection dimension.
    pub p: usize,
    /// Number of known classes.
    pub n_classes: usize,
    pub activation: Activation,
    /// Temperature; the vMF concentration is `1 / tau`.
    pub tau: f64,
    pub classifier: ClassifierKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_layers: vec![32],
            d: 32,
            p: 16,
            n_classes: 8,
            activation: Activation::Tanh,
            tau: 0.1,
            classifier: ClassifierKind::Linear,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim >= 1
            && self.d >= 1
            && self.p >= 1
            && self.hidden_layers.iter().all(|w| *w >= 1)
            && !matches!(self.classifier, ClassifierKind::Mlp { hidden: 0 });
        if !dims_ok {
            return Err(Error::BadDimension("all model dimensions must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::BadDimension(format!(
                "need at least two classes, got {}",
                self.n_classes
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveTemperature(self.tau));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        1.0 / self.tau
    }
}

/// Affine layer `y = W x + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// He-normal weights (variance 2 / fan_in), zero bias.
    pub fn kaiming(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.normal() * std),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Row-batched forward: `x` is `(n, in)`, result `(n, out)`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn backward(&self, x: ArrayView2<f64>, grad_out: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let weight = grad_out.t().dot(&x);
        let bias = grad_out.sum_axis(Axis(0));
        let grad_in = grad_out.dot(&self.weight);
        (DenseGrad { weight, bias }, grad_in)
    }

    fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Intermediate values of a stack forward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Affine layers with `activation` between them (not after the last).
fn stack_forward(
    layers: &[Dense],
    activation: Activation,
    x: ArrayView2<f64>,
) -> (Array2<f64>, StackCache) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = x.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let y = layer.forward(h.view());
        inputs.push(h);
        if l + 1 < layers.len() {
            h = y.mapv(|v| activation.apply(v));
            pre.push(y);
        } else {
            h = y.clone();
            pre.push(y);
        }
    }
    (h, StackCache { inputs, pre })
}

fn stack_backward(
    layers: &[Dense],
    activation: Activation,
    cache: &StackCache,
    grad_out: Array2<f64>,
) -> (Vec<DenseGrad>, Array2<f64>) {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out;
    for l in (0..layers.len()).rev() {
        if l + 1 < layers.len() {
            g.zip_mut_with(&cache.pre[l], |gv, &p| *gv *= activation.derivative(p));
        }
        let (dg, gin) = layers[l].backward(cache.inputs[l].view(), &g);
        grads.push(dg);
        g = gin;
    }
    grads.reverse();
    (grads, g)
}

fn stack_forward_only(layers: &[Dense], activation: Activation, x: ArrayView2<f64>) -> Array2<f64> {
    let mut h = x.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        h = layer.forward(h.view());
        if l + 1 < layers.len() {
            h.mapv_inplace(|v| activation.apply(v));
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: Vec<Dense>,
    pub projection: Dense,
    /// `(C, p)` label embeddings with unit rows.
    pub label_embeddings: Array2<f64>,
    pub classifier: Vec<Dense>,
}

/// Gradients for every trainable block of [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<DenseGrad>,
    pub projection: DenseGrad,
    pub label_embeddings: Array2<f64>,
    pub classifier: Vec<DenseGrad>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    Encoder,
    Projection,
    LabelEmbeddings,
    Classifier,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 4] = [
        ParamBlock::Encoder,
        ParamBlock::Projection,
        ParamBlock::LabelEmbeddings,
        ParamBlock::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Encoder => "encoder",
            ParamBlock::Projection => "projection",
            ParamBlock::LabelEmbeddings => "label_embeddings",
            ParamBlock::Classifier => "classifier",
        }
    }
}

/// Kaiming-normal rows (variance 2 / p) projected onto the unit sphere.
pub fn init_label_embeddings(n_classes: usize, p: usize, rng: &mut SeededRng) -> Result<Array2<f64>> {
    if n_classes < 2 || p < 2 {
        return Err(Error::BadDimension(format!(
            "label embeddings need C >= 2 and p >= 2, got C={n_classes}, p={p}"
        )));
    }
    let std = (2.0 / p as f64).sqrt();
    let m = Array2::from_shape_fn((n_classes, p), |_| rng.normal() * std);
    renormalize_embeddings(m)
}

/// Scales every row to unit norm.
pub fn renormalize_embeddings(mut m: Array2<f64>) -> Result<Array2<f64>> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if !(n > NORM_EPS) {
            return Err(Error::NearZeroNorm(n));
        }
        row.mapv_inplace(|v| v / n);
    }
    Ok(m)
}

pub fn max_row_norm_deviation(m: &Array2<f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Forward cache for the stage-one path `x -> f -> z̃ -> z`.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    encoder: StackCache,
    features: Array2<f64>,
    raw_norms: Array1<f64>,
    pub z: Array2<f64>,
}

/// Forward cache for the stage-two path `f -> logits`.
#[derive(Debug, Clone)]
pub struct ClassifierCache {
    stack: StackCache,
}

impl ModelState {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden_layers);
        dims.push(config.d);
        let encoder = dims
            .windows(2)
            .map(|w| Dense::kaiming(w[0], w[1], rng))
            .collect();
        let projection = Dense::kaiming(config.d, config.p, rng);
        let label_embeddings = init_label_embeddings(config.n_classes, config.p, rng)?;
        let classifier = match config.classifier {
            ClassifierKind::Linear => vec![Dense::kaiming(config.d, config.n_classes, rng)],
            ClassifierKind::Mlp { hidden } => vec![
                Dense::kaiming(config.d, hidden, rng),
                Dense::kaiming(hidden, config.n_classes, rng),
            ],
        };
        Ok(Self {
            config,
            encoder,
            projection,
            label_embeddings,
            classifier,
        })
    }

    fn check_cols(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::ShapeMismatch(format!("{what}: expected {want} columns, got {got}")));
        }
        Ok(())
    }

    /// Encoder output for a single input.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView1::from(x).insert_axis(Axis(0));
        Ok(self.encode_batch(view)?.row(0).to_vec())
    }

    /// Encoder outputs, one row per input row. Features are not normalized.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_cols(x.ncols(), self.config.input_dim, "encoder input")?;
        Ok(stack_forward_only(&self.encoder, self.config.activation, x))
    }

    /// `Proj(f) / ‖Proj(f)‖` for a single feature vector.
    pub fn project_normalize(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_cols(f.len(), self.config.d, "projection input")?;
        let raw = self.projection.forward(ArrayView1::from(f).insert_axis(Axis(0)));
        Ok(crate::numerics::l2_normalize(raw.row(0).as_slice().unwrap())?.into_inner())
    }

    pub fn classify(&self, f: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView1::from(f).insert_axis(Axis(0));
        Ok(self.classify_batch(view)?.row(0).to_vec())
    }

    pub fn classify_batch(&self, f: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_cols(f.ncols(), self.config.d, "classifier input")?;
        Ok(stack_forward_only(&self.classifier, self.config.activation, f))
    }

    /// Stage-one forward pass; `cache.z` holds the unit projections.
    pub fn forward_projection(&self, x: ArrayView2<f64>) -> Result<ProjectionCache> {
        self.check_cols(x.ncols(), self.config.input_dim, "encoder input")?;
        let (features, encoder) = stack_forward(&self.encoder, self.config.activation, x);
        let raw = self.projection.forward(features.view());
        let mut raw_norms = Array1::zeros(raw.nrows());
        let mut z = raw;
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > NORM_EPS) {
                return Err(Error::NearZeroNorm(n));
            }
            raw_norms[i] = n;
            row.mapv_inplace(|v| v / n);
        }
        Ok(ProjectionCache {
            encoder,
            features,
            raw_norms,
            z,
        })
    }

    /// Chains `dL/dz` back to the encoder and projection parameters.
    pub fn backward_projection(
        &self,
        cache: &ProjectionCache,
        grad_z: &Array2<f64>,
    ) -> (Vec<DenseGrad>, DenseGrad) {
        // d(z̃/|z̃|) : g -> (g - z (z·g)) / |z̃|
        let mut grad_raw = grad_z.clone();
        for (i, mut row) in grad_raw.rows_mut().into_iter().enumerate() {
            let z = cache.z.row(i);
            let zg = z.dot(&row);
            let n = cache.raw_norms[i];
            row.zip_mut_with(&z, |g, &zv| *g = (*g - zv * zg) / n);
        }
        let (proj_grad, grad_features) = self.projection.backward(cache.features.view(), &grad_raw);
        let (enc_grads, _) = stack_backward(
            &self.encoder,
            self.config.activation,
            &cache.encoder,
            grad_features,
        );
        (enc_grads, proj_grad)
    }

    pub fn forward_classifier(&self, f: ArrayView2<f64>) -> Result<(Array2<f64>, ClassifierCache)> {
        self.check_cols(f.ncols(), self.config.d, "classifier input")?;
        let (logits, stack) = stack_forward(&self.classifier, self.config.activation, f);
        Ok((logits, ClassifierCache { stack }))
    }

    pub fn backward_classifier(
        &self,
        cache: &ClassifierCache,
        grad_logits: Array2<f64>,
    ) -> Vec<DenseGrad> {
        stack_backward(&self.classifier, self.config.activation, &cache.stack, grad_logits).0
    }

    /// Gradient of `Σ_ij w_ij f_j(x_i)` with respect to the inputs, where
    /// `w` weights the encoder outputs.
    pub fn encoder_input_grad(&self, x: ArrayView2<f64>, weights: &Array2<f64>) -> Array2<f64> {
        let (_, cache) = stack_forward(&self.encoder, self.config.activation, x);
        stack_backward(&self.encoder, self.config.activation, &cache, weights.clone()).1
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.iter().map(Dense::zero_grad).collect(),
            projection: self.projection.zero_grad(),
            label_embeddings: Array2::zeros(self.label_embeddings.raw_dim()),
            classifier: self.classifier.iter().map(Dense::zero_grad).collect(),
        }
    }

    pub fn n_params(&self, block: ParamBlock) -> usize {
        match block {
            ParamBlock::Encoder => self.encoder.iter().map(Dense::n_params).sum(),
            ParamBlock::Projection => self.projection.n_params(),
            ParamBlock::LabelEmbeddings => self.label_embeddings.len(),
            ParamBlock::Classifier => self.classifier.iter().map(Dense::n_params).sum(),
        }
    }

    /// Parameters of one block flattened (weights row-major, then bias, per layer).
    pub fn flat_params(&self, block: ParamBlock) -> Vec<f64> {
        let layers = |ls: &[Dense]| -> Vec<f64> {
            ls.iter()
                .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
                .collect()
        };
        match block {
            ParamBlock::Encoder => layers(&self.encoder),
            ParamBlock::Projection => layers(std::slice::from_ref(&self.projection)),
            ParamBlock::LabelEmbeddings => self.label_embeddings.iter().copied().collect(),
            ParamBlock::Classifier => layers(&self.classifier),
        }
    }

    pub fn set_flat_params(&mut self, block: ParamBlock, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params(block) {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} parameters, got {}",
                block.name(),
                self.n_params(block),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let mut fill = |ls: &mut [Dense]| {
            for l in ls {
                l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
                l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
            }
        };
        match block {
            ParamBlock::Encoder => fill(&mut self.encoder),
            ParamBlock::Projection => fill(std::slice::from_mut(&mut self.projection)),
            ParamBlock::LabelEmbeddings => {
                self.label_embeddings
                    .iter_mut()
                    .zip(values)
                    .for_each(|(m, v)| *m = *v);
            }
            ParamBlock::Classifier => fill(&mut self.classifier),
        }
        Ok(())
    }
}

impl ModelGrads {
    /// Flattened in the same order as [`ModelState::flat_params`].
    pub fn flat(&self, block: ParamBlock) -> Vec<f64> {
        let layers = |ls: &[DenseGrad]| -> Vec<f64> {
            ls.iter()
                .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
                .collect()
        };
        match block {
            ParamBlock::Encoder => layers(&self.encoder),
            ParamBlock::Projection => layers(std::slice::from_ref(&self.projection)),
            ParamBlock::LabelEmbeddings => self.label_embeddings.iter().copied().collect(),
            ParamBlock::Classifier => layers(&self.classifier),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FlatLayer {
    fn from_dense(d: &Dense) -> Self {
        Self {
            fan_in: d.fan_in(),
            fan_out: d.fan_out(),
            weight: d.weight.iter().copied().collect(),
            bias: d.bias.to_vec(),
        }
    }

    fn to_dense(&self) -> Result<Dense> {
        let weight = Array2::from_shape_vec((self.fan_out, self.fan_in), self.weight.clone())
            .map_err(|e| Error::ShapeMismatch(format!("checkpoint layer: {e}")))?;
        if self.bias.len() != self.fan_out {
            return Err(Error::ShapeMismatch("checkpoint bias length".into()));
        }
        Ok(Dense {
            weight,
            bias: Array1::from(self.bias.clone()),
        })
    }
}

/// JSON checkpoint: config plus flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub encoder: Vec<FlatLayer>,
    pub projection: FlatLayer,
    pub label_embeddings: Vec<f64>,
    pub classifier: Vec<FlatLayer>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState, seed: u64) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            seed,
            config: state.config.clone(),
            encoder: state.encoder.iter().map(FlatLayer::from_dense).collect(),
            projection: FlatLayer::from_dense(&state.projection),
            label_embeddings: state.label_embeddings.iter().copied().collect(),
            classifier: state.classifier.iter().map(FlatLayer::from_dense).collect(),
        }
    }

    pub fn into_state(self) -> Result<ModelState> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema {:?}",
                self.schema
            )));
        }
        self.config.validate()?;
        let label_embeddings = Array2::from_shape_vec(
            (self.config.n_classes, self.config.p),
            self.label_embeddings,
        )
        .map_err(|e| Error::ShapeMismatch(format!("checkpoint label embeddings: {e}")))?;
        Ok(ModelState {
            encoder: self
                .encoder
                .iter()
                .map(FlatLayer::to_dense)
                .collect::<Result<_>>()?,
            projection: self.projection.to_dense()?,
            classifier: self
                .classifier
                .iter()
                .map(FlatLayer::to_dense)
                .collect::<Result<_>>()?,
            label_embeddings,
            config: self.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            hidden_layers: vec![7, 6],
            d: 4,
            p: 3,
            n_classes: 3,
            activation: Activation::Tanh,
            tau: 0.5,
            classifier: ClassifierKind::Mlp { hidden: 5 },
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_depth_encoder_is_affine() {
        let cfg = ModelConfig {
            input_dim: 2,
            hidden_layers: vec![],
            d: 2,
            ..small_config()
        };
        let mut m = ModelState::new(cfg, &mut SeededRng::new(0, 0)).unwrap();
        m.encoder[0].weight = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        m.encoder[0].bias = ndarray::arr1(&[0.5, -1.0]);
        assert_eq!(m.encode(&[1.0, 1.0]).unwrap(), vec![3.5, 6.0]);
        assert_eq!(m.encode(&[1.0, 1.0]).unwrap(), m.encode(&[1.0, 1.0]).unwrap());
        assert!(matches!(m.encode(&[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn encoder_input_gradient_matches_fd() {
        let m = ModelState::new(small_config(), &mut SeededRng::new(1, 0)).unwrap();
        let x = vec![0.3, -0.2, 0.8, 0.1, -0.5];
        for out in 0..4 {
            let mut w = Array2::zeros((1, 4));
            w[[0, out]] = 1.0;
            let xa = Array2::from_shape_vec((1, 5), x.clone()).unwrap();
            let analytic = m.encoder_input_grad(xa.view(), &w);
            let fd = finite_difference_gradient(|v| m.encode(v).unwrap()[out], &x, 1e-6).unwrap();
            for j in 0..5 {
                assert!(rel_err(analytic[[0, j]], fd[j]) < 1e-5);
            }
        }
    }

    #[test]
    fn identity_projection_keeps_unit_features() {
        let cfg = ModelConfig {
            d: 3,
            p: 3,
            ..small_config()
        };
        let mut m = ModelState::new(cfg, &mut SeededRng::new(0, 0)).unwrap();
        m.projection = Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let f = [0.6, 0.0, 0.8];
        let z = m.project_normalize(&f).unwrap();
        for k in 0..3 {
            assert!((z[k] - f[k]).abs() < 1e-15);
        }
        let z = m.project_normalize(&[3.0, -2.0, 7.0]).unwrap();
        assert!((crate::numerics::norm(&z) - 1.0).abs() < 1e-12);
        m.projection = Dense::zeros(3, 3);
        assert!(matches!(m.project_normalize(&f), Err(Error::NearZeroNorm(_))));
    }

    #[test]
    fn normalization_chain_rule_matches_fd() {
        let m = ModelState::new(small_config(), &mut SeededRng::new(2, 0)).unwrap();
        let x = Array2::from_shape_fn((2, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let weights = Array2::from_shape_fn((2, 3), |(i, j)| (i as f64 + 1.0) * (j as f64 - 1.0));
        let cache = m.forward_projection(x.view()).unwrap();
        let (enc, proj) = m.backward_projection(&cache, &weights);
        let mut grads = m.zero_grads();
        grads.encoder = enc;
        grads.projection = proj;
        for block in [ParamBlock::Encoder, ParamBlock::Projection] {
            let theta = m.flat_params(block);
            let objective = |t: &[f64]| {
                let mut mm = m.clone();
                mm.set_flat_params(block, t).unwrap();
                let z = mm.forward_projection(x.view()).unwrap().z;
                (&z * &weights).sum()
            };
            let fd = finite_difference_gradient(objective, &theta, 1e-6).unwrap();
            let an = grads.flat(block);
            for (a, b) in an.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-5, "{block:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn classifier_zero_and_bias_and_gradient() {
        let mut m = ModelState::new(
            ModelConfig {
                classifier: ClassifierKind::Linear,
                ..small_config()
            },
            &mut SeededRng::new(3, 0),
        )
        .unwrap();
        let f = [0.4, -1.0, 2.0, 0.1];
        let before = m.classify(&f).unwrap();
        m.classifier[0].bias[1] += 0.75;
        let after = m.classify(&f).unwrap();
        assert!((after[1] - before[1] - 0.75).abs() < 1e-14);
        assert_eq!(after[0], before[0]);
        m.classifier[0] = Dense::zeros(4, 3);
        assert_eq!(m.classify(&f).unwrap(), vec![0.0; 3]);

        let m = ModelState::new(small_config(), &mut SeededRng::new(4, 0)).unwrap();
        let fb = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let w = Array2::from_shape_fn((3, 3), |(i, j)| ((i * 3 + j) as f64).cos());
        let (_, cache) = m.forward_classifier(fb.view()).unwrap();
        let mut grads = m.zero_grads();
        grads.classifier = m.backward_classifier(&cache, w.clone());
        let theta = m.flat_params(ParamBlock::Classifier);
        let fd = finite_difference_gradient(
            |t| {
                let mut mm = m.clone();
                mm.set_flat_params(ParamBlock::Classifier, t).unwrap();
                (&mm.classify_batch(fb.view()).unwrap() * &w).sum()
            },
            &theta,
            1e-6,
        )
        .unwrap();
        for (a, b) in grads.flat(ParamBlock::Classifier).iter().zip(&fd) {
            assert!(rel_err(*a, *b) < 1e-5);
        }
    }

    #[test]
    fn relu_gradients_match_fd_away_from_kinks() {
        let cfg = ModelConfig {
            activation: Activation::Relu,
            ..small_config()
        };
        let m = ModelState::new(cfg, &mut SeededRng::new(8, 0)).unwrap();
        let x = Array2::from_shape_fn((1, 5), |(_, j)| 0.2 + 0.1 * j as f64);
        let w = Array2::from_shape_fn((1, 4), |(_, j)| j as f64 - 1.5);
        let an = m.encoder_input_grad(x.view(), &w);
        let fd = finite_difference_gradient(
            |v| {
                let f = m.encode(v).unwrap();
                f.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
            },
            x.as_slice().unwrap(),
            1e-7,
        )
        .unwrap();
        for j in 0..5 {
            assert!(rel_err(an[[0, j]], fd[j]) < 1e-5);
        }
    }

    #[test]
    fn label_embedding_init() {
        let a = init_label_embeddings(10, 128, &mut SeededRng::new(7, 0)).unwrap();
        let b = init_label_embeddings(10, 128, &mut SeededRng::new(7, 0)).unwrap();
        assert_eq!(a, b);
        assert!(max_row_norm_deviation(&a) < 1e-12);
        assert!(init_label_embeddings(1, 4, &mut SeededRng::new(0, 0)).is_err());
        assert!(init_label_embeddings(3, 1, &mut SeededRng::new(0, 0)).is_err());
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..100 {
            let m = init_label_embeddings(10, 128, &mut SeededRng::new(seed, 0)).unwrap();
            for i in 0..10 {
                for j in 0..i {
                    let c = m.row(i).dot(&m.row(j)).abs();
                    assert!(c < 0.5);
                    total += c;
                    count += 1.0;
                }
            }
        }
        // E|cos| ≈ sqrt(2 / (π p)) ≈ 0.07 for p = 128
        assert!(total / count < 0.1);
    }

    #[test]
    fn renormalize_examples() {
        let m = init_label_embeddings(4, 6, &mut SeededRng::new(1, 0)).unwrap();
        let again = renormalize_embeddings(m.clone()).unwrap();
        assert!((&again - &m).iter().all(|v| v.abs() <= 1e-12));
        let mut scaled = m.clone();
        scaled.row_mut(2).mapv_inplace(|v| v * 5.0);
        let back = renormalize_embeddings(scaled).unwrap();
        assert!((&back - &m).iter().all(|v| v.abs() <= 1e-12));
        let mut zero = m;
        zero.row_mut(0).fill(0.0);
        assert!(matches!(renormalize_embeddings(zero), Err(Error::NearZeroNorm(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ModelState::new(small_config(), &mut SeededRng::new(5, 0)).unwrap();
        let ck = Checkpoint::from_state(&m, 5);
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_state().unwrap(), m);
        let mut bad = ck;
        bad.schema = "other".into();
        assert!(bad.into_state().is_err());
    }
}
