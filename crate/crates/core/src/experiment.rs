//! Experiment configuration and the generate → train → score → evaluate
//! pipeline shared by the command-line front end and the test suites.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::datagen::{generate_dataset, import_csv, openness, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{
    accuracy, angular_separability, auroc, dispersion, dtacc, norm_separability, oscr,
    oscr_curve, roc_curve, EvalReport, RuleMetrics,
};
use crate::model::{ModelConfig, ModelState};
use crate::scoring::{score_batch, NormalizedBank, Rule, ScoredSample};
use crate::training::{encode_dataset, extract_features, row_argmax, train_two_stage, FeatureBank, TrainConfig, TrainedModel};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directory holding an `inputs.csv` / `labels.csv` pair.
    Csv { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub rules: Vec<Rule>,
    /// Neighbour count for KNN and NNGuide.
    pub k: usize,
    /// Thresholds at which acceptance rates are tabulated.
    pub theta_grid: Vec<f64>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            rules: Rule::ALL.to_vec(),
            k: 10,
            theta_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_dataset() -> DatasetSource {
    DatasetSource::Synthetic(SyntheticSpec::default())
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            dataset: default_dataset(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            scoring: ScoringConfig::default(),
            output_dir: default_output_dir(),
            seeds: default_seeds(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
            if spec.input_dim != self.model.input_dim || spec.n_known_classes != self.model.n_classes {
                return Err(Error::Config(format!(
                    "model expects input_dim={} and {} classes, dataset has input_dim={} and {} known classes",
                    self.model.input_dim,
                    self.model.n_classes,
                    spec.input_dim,
                    spec.n_known_classes
                )));
            }
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.scoring.k == 0 {
            return Err(Error::Config("scoring.k must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    /// Short SHA-256 digest of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Tags naming the disabled components, e.g. `["no-mixup"]`.
    pub fn ablation_tags(&self) -> Vec<String> {
        let mut tags = Vec::new();
        if !self.augment.mixup_enabled {
            tags.push("no-mixup".to_string());
        }
        if !self.augment.ls_enabled {
            tags.push("no-ls".to_string());
        }
        if !self.train.r_ortho_enabled {
            tags.push("no-r-ortho".to_string());
        }
        tags
    }

    pub fn load_dataset(&self, exec: Exec) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSource::Synthetic(spec) => generate_dataset(spec, exec)?,
            DatasetSource::Csv { dir } => import_csv(dir)?,
        };
        if train.input_dim() != self.model.input_dim || train.n_known_classes != self.model.n_classes {
            return Err(Error::Config(format!(
                "dataset has input_dim={} and {} known classes; model expects {} and {}",
                train.input_dim(),
                train.n_known_classes,
                self.model.input_dim,
                self.model.n_classes
            )));
        }
        Ok((train, test))
    }
}

/// Ablation variants: the full method and one component switched off each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoMixup,
    NoLs,
    NoROrtho,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoMixup, Variant::NoLs, Variant::NoROrtho];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMixup => "no-mixup",
            Variant::NoLs => "no-ls",
            Variant::NoROrtho => "no-r-ortho",
        }
    }

    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoMixup => cfg.augment.mixup_enabled = false,
            Variant::NoLs => cfg.augment.ls_enabled = false,
            Variant::NoROrtho => cfg.train.r_ortho_enabled = false,
        }
        cfg
    }
}

/// Scores, curves and metrics of one trained model on a test split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// `(sample_id, rule, scored sample)` for every test row and rule.
    pub scores: Vec<(usize, Rule, ScoredSample)>,
    pub roc: Vec<(Rule, Vec<(f64, f64)>)>,
    pub oscr: Vec<(Rule, Vec<(f64, f64)>)>,
    /// `(rule, θ, known acceptance, unknown acceptance, CCR)`.
    pub threshold_sweep: Vec<(Rule, f64, f64, f64, f64)>,
}

fn select_rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Evaluates a trained model on `test` with the given scoring rules.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    state: &ModelState,
    bank: &FeatureBank,
    test: &Dataset,
    scoring: &ScoringConfig,
    seed: u64,
    config_hash: &str,
    tags: &[String],
    exec: Exec,
) -> Result<Evaluation> {
    let c = state.config.n_classes;
    let features = encode_dataset(state, test)?;
    let logits = state.classify_batch(features.view())?;
    let preds = row_argmax(&logits);
    let known_idx = test.known_indices();
    let unknown_idx = test.unknown_indices();
    if known_idx.is_empty() || unknown_idx.is_empty() {
        return Err(Error::EmptyInput);
    }
    let known_truth: Vec<usize> = known_idx.iter().map(|&i| test.labels[i].class_id).collect();
    let known_preds: Vec<usize> = known_idx.iter().map(|&i| preds[i]).collect();
    let acc = accuracy(&known_preds, &known_truth)?;

    let nb = NormalizedBank::new(bank)?;
    let mut rules = Vec::new();
    let mut scores = Vec::new();
    let mut roc = Vec::new();
    let mut oscr_pts = Vec::new();
    let mut sweep = Vec::new();
    for &rule in &scoring.rules {
        let s = score_batch(rule, features.view(), logits.view(), &nb, scoring.k, exec)?;
        let samples: Vec<ScoredSample> = (0..test.len())
            .map(|i| {
                let l = test.labels[i];
                ScoredSample {
                    score: s[i],
                    predicted_class: preds[i],
                    is_known_truth: l.known,
                    true_class: l.known.then_some(l.class_id),
                }
            })
            .collect();
        let known: Vec<ScoredSample> = known_idx.iter().map(|&i| samples[i]).collect();
        let ks: Vec<f64> = known.iter().map(|x| x.score).collect();
        let us: Vec<f64> = unknown_idx.iter().map(|&i| s[i]).collect();
        rules.push(RuleMetrics {
            rule: rule.name().to_string(),
            auroc: auroc(&ks, &us)?,
            oscr: oscr(&known, &us)?,
            dtacc: dtacc(&ks, &us)?,
        });
        roc.push((rule, roc_curve(&ks, &us)?));
        oscr_pts.push((rule, oscr_curve(&known, &us)?));
        for &theta in &scoring.theta_grid {
            let ka = ks.iter().filter(|&&x| x >= theta).count() as f64 / ks.len() as f64;
            let ua = us.iter().filter(|&&x| x >= theta).count() as f64 / us.len() as f64;
            let ccr = known.iter().filter(|x| x.score >= theta && x.correct()).count() as f64
                / known.len() as f64;
            sweep.push((rule, theta, ka, ua, ccr));
        }
        scores.extend(samples.into_iter().enumerate().map(|(i, x)| (i, rule, x)));
    }

    let fk = select_rows(&features, &known_idx);
    let fu = select_rows(&features, &unknown_idx);
    let unknown_classes: BTreeSet<usize> = unknown_idx.iter().map(|&i| test.labels[i].class_id).collect();
    let report = EvalReport {
        seed,
        accuracy: acc,
        rules,
        angular_separability: angular_separability(fk.view(), fu.view(), exec)?,
        norm_separability: norm_separability(fk.view(), fu.view())?,
        dispersion_degrees: dispersion(fk.view(), &known_truth, c)?,
        openness: openness(c, c + unknown_classes.len())?,
        config_hash: config_hash.to_string(),
        tags: tags.to_vec(),
    };
    Ok(Evaluation {
        report,
        scores,
        roc,
        oscr: oscr_pts,
        threshold_sweep: sweep,
    })
}

/// One seed of the full pipeline.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trained: TrainedModel,
    pub evaluation: Evaluation,
}

pub fn run_seed(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    exec: Exec,
) -> Result<SeedRun> {
    let trained = train_two_stage(train, &config.model, &config.train, &config.augment, seed)?;
    let evaluation = evaluate_model(
        &trained.state,
        &trained.bank,
        test,
        &config.scoring,
        seed,
        &config.hash(),
        &config.ablation_tags(),
        exec,
    )?;
    Ok(SeedRun {
        seed,
        trained,
        evaluation,
    })
}

/// Trains and evaluates every configured seed. Seeds run concurrently under
/// `Exec::Parallel`; each seed is sequential internally.
pub fn run_seeds(config: &ExperimentConfig, exec: Exec) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let (train, test) = config.load_dataset(exec)?;
    exec.map_slice(&config.seeds, |&seed| run_seed(config, &train, &test, seed, Exec::Sequential))
        .into_iter()
        .collect()
}

/// Rebuilds the feature bank for a stored model.
pub fn bank_for(state: &ModelState, train: &Dataset) -> Result<FeatureBank> {
    extract_features(state, train)
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
