//! Synthetic open-set benchmarks drawn from vMF mixtures.
//!
//! Known classes get well-separated mean directions in a latent sphere.
//! Unknown classes are rotated towards a random known direction by an angle
//! controlled by `hardness`, so one dial moves between "easy" (orthogonal)
//! and "hard" (within 15 degrees of a known class) semantic shift. Latent
//! draws are pushed through a fixed random observation map before anyone
//! sees them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{dot, l2_normalize, sample_uniform_sphere, sample_vmf, SeededRng, UnitVector};

/// Angle between an unknown direction and its anchor known direction at
/// `hardness = 1`.
pub const HARDEST_ANGLE_DEG: f64 = 15.0;

/// Known directions drawn at random must have pairwise cosine at most this.
pub const RANDOM_MODE_MAX_COSINE: f64 = 0.5;

const STREAM_DIRECTIONS: u64 = 1;
const STREAM_OBSERVATION: u64 = 2;
const STREAM_CLASS_BASE: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    Identity,
    RandomAffine,
    RandomAffineTanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// All class directions (known and unknown) mutually orthogonal before
    /// the hardness rotation.
    Orthogonal,
    /// Known directions rejection-sampled with pairwise cosine <= 0.5.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub p_latent: usize,
    pub input_dim: usize,
    pub n_known_classes: usize,
    pub n_unknown_classes: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub kappa_data: f64,
    pub hardness: f64,
    pub observation_map: ObservationKind,
    pub direction_mode: DirectionMode,
    /// Gain of the random affine weights (entries are N(0, gain²/p_latent)).
    pub observation_gain: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            p_latent: 16,
            input_dim: 32,
            n_known_classes: 8,
            n_unknown_classes: 8,
            samples_per_class_train: 500,
            samples_per_class_test: 50,
            kappa_data: 20.0,
            hardness: 0.5,
            observation_map: ObservationKind::RandomAffineTanh,
            direction_mode: DirectionMode::Orthogonal,
            observation_gain: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_known_classes < 2 {
            return Err(Error::Config(format!(
                "need at least two known classes, got {}",
                self.n_known_classes
            )));
        }
        if self.p_latent < 2 {
            return Err(Error::BadDimension(format!("p_latent {} < 2", self.p_latent)));
        }
        if self.input_dim == 0 {
            return Err(Error::BadDimension("input_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hardness) {
            return Err(Error::Config(format!("hardness {} outside [0, 1]", self.hardness)));
        }
        if !(self.kappa_data >= 0.0) || !self.kappa_data.is_finite() {
            return Err(Error::Config(format!("kappa_data {} must be >= 0", self.kappa_data)));
        }
        if self.observation_map == ObservationKind::Identity && self.input_dim != self.p_latent {
            return Err(Error::BadDimension(format!(
                "identity observation map needs input_dim == p_latent ({} != {})",
                self.input_dim, self.p_latent
            )));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.n_known_classes + self.n_unknown_classes
    }

    /// Angle (radians) between each unknown direction and its anchor.
    pub fn unknown_angle(&self) -> f64 {
        (90.0 - self.hardness * (90.0 - HARDEST_ANGLE_DEG)).to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabel {
    /// `0..C` for known classes; unknown classes use ids `C..C+U`.
    pub class_id: usize,
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<SampleLabel>,
    pub role: Role,
    pub n_known_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn known_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].known).collect()
    }

    pub fn unknown_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labels[i].known).collect()
    }

    /// Fails unless this is a training split that holds known classes only.
    pub fn ensure_training_split(&self) -> Result<()> {
        if self.role != Role::Train {
            return Err(Error::SplitViolation(
                "training stages may only read the train split".into(),
            ));
        }
        if let Some(i) = self.labels.iter().position(|l| !l.known) {
            return Err(Error::SplitViolation(format!(
                "train split contains unknown-class sample {i}"
            )));
        }
        Ok(())
    }

    pub fn known_class_targets(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.class_id).collect()
    }
}

/// Fixed map from latent sphere to observed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    pub kind: ObservationKind,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ObservationMap {
    pub fn new(spec: &SyntheticSpec, rng: &mut SeededRng) -> Self {
        let (rows, cols) = (spec.input_dim, spec.p_latent);
        let scale = spec.observation_gain / (cols as f64).sqrt();
        match spec.observation_map {
            ObservationKind::Identity => Self {
                kind: ObservationKind::Identity,
                weight: Array2::eye(cols),
                bias: Array1::zeros(cols),
            },
            kind => {
                let weight = Array2::from_shape_fn((rows, cols), |_| rng.normal() * scale);
                let bias = Array1::from_shape_fn(rows, |_| rng.normal() * 0.1);
                Self { kind, weight, bias }
            }
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        if self.kind == ObservationKind::Identity {
            return z.to_vec();
        }
        let zv = ndarray::ArrayView1::from(z);
        let y = self.weight.dot(&zv) + &self.bias;
        match self.kind {
            ObservationKind::RandomAffineTanh => y.iter().map(|v| v.tanh()).collect(),
            _ => y.to_vec(),
        }
    }
}

fn gram_schmidt_against(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes for numerical orthogonality
    for _ in 0..2 {
        for b in basis {
            let proj = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
}

/// Random unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_draw(p: usize, basis: &[Vec<f64>], rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        gram_schmidt_against(&mut v, basis);
        if crate::numerics::norm(&v) > 1e-6 {
            if let Ok(u) = l2_normalize(&v) {
                return u.into_inner();
            }
        }
    }
}

fn orthonormal_basis_of(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        gram_schmidt_against(&mut w, &basis);
        if crate::numerics::norm(&w) > 1e-8 {
            if let Ok(u) = l2_normalize(&w) {
                basis.push(u.into_inner());
            }
        }
    }
    basis
}

/// Class mean directions: the `n_known_classes` known directions first,
/// then the unknown ones.
pub fn generate_class_directions(
    spec: &SyntheticSpec,
    rng: &mut SeededRng,
) -> Result<Vec<UnitVector>> {
    spec.validate()?;
    let p = spec.p_latent;
    let (nk, nu) = (spec.n_known_classes, spec.n_unknown_classes);

    let known: Vec<Vec<f64>> = match spec.direction_mode {
        DirectionMode::Orthogonal => {
            if p < nk + nu {
                return Err(Error::DimensionTooSmall {
                    have: p,
                    need: nk + nu,
                });
            }
            let mut basis = Vec::with_capacity(nk);
            for _ in 0..nk {
                let v = orthogonal_draw(p, &basis, rng);
                basis.push(v);
            }
            basis
        }
        DirectionMode::Random => {
            if nu > 0 && p <= nk {
                return Err(Error::DimensionTooSmall { have: p, need: nk + 1 });
            }
            let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(nk);
            let mut attempts = 0usize;
            while dirs.len() < nk {
                attempts += 1;
                if attempts > 1_000_000 {
                    return Err(Error::DimensionTooSmall { have: p, need: nk });
                }
                let cand = sample_uniform_sphere(p, rng)?.into_inner();
                if dirs.iter().all(|d| dot(d, &cand) <= RANDOM_MODE_MAX_COSINE) {
                    dirs.push(cand);
                }
            }
            dirs
        }
    };

    let angle = spec.unknown_angle();
    let (cos_a, sin_a) = (angle.cos(), angle.sin());
    let mut taken = orthonormal_basis_of(&known);
    let mut out: Vec<UnitVector> = known
        .iter()
        .map(|k| l2_normalize(k))
        .collect::<Result<_>>()?;
    for _ in 0..nu {
        let anchor = &known[rng.below(nk)];
        // In orthogonal mode complements are also mutually orthogonal.
        let w = orthogonal_draw(p, &taken, rng);
        if spec.direction_mode == DirectionMode::Orthogonal {
            taken.push(w.clone());
        }
        let u: Vec<f64> = anchor
            .iter()
            .zip(&w)
            .map(|(a, b)| cos_a * a + sin_a * b)
            .collect();
        out.push(l2_normalize(&u)?);
    }
    Ok(out)
}

/// Latent draws for one split, in class order: `(latent, label)` pairs.
pub fn sample_latents(
    spec: &SyntheticSpec,
    directions: &[UnitVector],
    role: Role,
    exec: Exec,
) -> Result<Vec<(UnitVector, SampleLabel)>> {
    let nk = spec.n_known_classes;
    let classes = match role {
        Role::Train => nk,
        Role::Test => directions.len(),
    };
    let per_class = match role {
        Role::Train => spec.samples_per_class_train,
        Role::Test => spec.samples_per_class_test,
    };
    let role_offset = match role {
        Role::Train => 0,
        Role::Test => 1,
    };
    let base = SeededRng::new(spec.seed, 0);
    let blocks = exec.map_range(classes, |c| -> Result<Vec<(UnitVector, SampleLabel)>> {
        let mut rng = base.derive(STREAM_CLASS_BASE + 2 * c as u64 + role_offset);
        let label = SampleLabel {
            class_id: c,
            known: c < nk,
        };
        (0..per_class)
            .map(|_| Ok((sample_vmf(&directions[c], spec.kappa_data, &mut rng)?, label)))
            .collect()
    });
    let mut out = Vec::with_capacity(classes * per_class);
    for block in blocks {
        out.extend(block?);
    }
    Ok(out)
}

fn assemble(
    latents: Vec<(UnitVector, SampleLabel)>,
    map: &ObservationMap,
    spec: &SyntheticSpec,
    role: Role,
) -> Dataset {
    let n = latents.len();
    let mut inputs = Array2::zeros((n, spec.input_dim));
    let mut labels = Vec::with_capacity(n);
    for (i, (z, label)) in latents.into_iter().enumerate() {
        let x = map.apply(z.as_slice());
        inputs.row_mut(i).assign(&Array1::from(x));
        labels.push(label);
    }
    Dataset {
        inputs,
        labels,
        role,
        n_known_classes: spec.n_known_classes,
    }
}

/// Train split (known classes only) and test split (known then unknown).
pub fn generate_dataset(spec: &SyntheticSpec, exec: Exec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut dir_rng = SeededRng::new(spec.seed, STREAM_DIRECTIONS);
    let directions = generate_class_directions(spec, &mut dir_rng)?;
    let mut map_rng = SeededRng::new(spec.seed, STREAM_OBSERVATION);
    let map = ObservationMap::new(spec, &mut map_rng);
    let train = sample_latents(spec, &directions, Role::Train, exec)?;
    let test = sample_latents(spec, &directions, Role::Test, exec)?;
    Ok((
        assemble(train, &map, spec, Role::Train),
        assemble(test, &map, spec, Role::Test),
    ))
}

/// `1 - sqrt(n_train / n_test)`.
pub fn openness(n_train_classes: usize, n_test_classes: usize) -> Result<f64> {
    if n_train_classes == 0 || n_train_classes > n_test_classes {
        return Err(Error::InvalidClassCounts {
            train: n_train_classes,
            test: n_test_classes,
        });
    }
    Ok(1.0 - (n_train_classes as f64 / n_test_classes as f64).sqrt())
}

/// Writes both splits to `inputs.csv` / `labels.csv` in `dir`.
///
/// `inputs.csv` has a header `x0,x1,...` and one row per sample;
/// `labels.csv` has `sample_id,class_id,known,role`. Sample ids run over the
/// concatenation of the given splits in order.
pub fn export_csv(dir: &Path, splits: &[&Dataset]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dim = splits.first().map(|d| d.input_dim()).unwrap_or(0);
    let inputs_path = dir.join("inputs.csv");
    let labels_path = dir.join("labels.csv");
    let mut inputs =
        BufWriter::new(File::create(&inputs_path).map_err(|e| Error::io(&inputs_path, e))?);
    let header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    writeln!(inputs, "{}", header.join(",")).map_err(|e| Error::io(&inputs_path, e))?;
    let mut labels = csv::Writer::from_path(&labels_path)?;
    labels.write_record(["sample_id", "class_id", "known", "role"])?;
    let mut id = 0usize;
    for ds in splits {
        if ds.input_dim() != dim {
            return Err(Error::ShapeMismatch("splits disagree on input_dim".into()));
        }
        for (row, label) in ds.inputs.rows().into_iter().zip(&ds.labels) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(inputs, "{}", line.join(",")).map_err(|e| Error::io(&inputs_path, e))?;
            labels.write_record([
                id.to_string(),
                label.class_id.to_string(),
                u8::from(label.known).to_string(),
                ds.role.as_str().to_string(),
            ])?;
            id += 1;
        }
    }
    inputs.flush().map_err(|e| Error::io(&inputs_path, e))?;
    labels.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Reads a CSV pair written by [`export_csv`] back into (train, test).
/// `n_known_classes` is inferred as one past the largest known class id.
pub fn import_csv(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut inputs_rdr = csv::Reader::from_path(dir.join("inputs.csv"))?;
    let dim = inputs_rdr.headers()?.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in inputs_rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number {s:?} in inputs.csv: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "inputs.csv row {} has {} columns, header has {dim}",
                rows.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    let mut labels_rdr = csv::Reader::from_path(dir.join("labels.csv"))?;
    let mut entries: Vec<(usize, SampleLabel, Role)> = Vec::new();
    for rec in labels_rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let parse = |s: String, what: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Config(format!("bad {what} {s:?} in labels.csv: {e}")))
        };
        let id = parse(field(0), "sample_id")?;
        let class_id = parse(field(1), "class_id")?;
        let known = match field(2).as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Config(format!("bad known flag {other:?}"))),
        };
        let role = match field(3).as_str() {
            "train" => Role::Train,
            "test" => Role::Test,
            other => return Err(Error::Config(format!("bad role {other:?}"))),
        };
        entries.push((id, SampleLabel { class_id, known }, role));
    }
    if entries.len() != rows.len() {
        return Err(Error::ShapeMismatch(format!(
            "labels.csv has {} rows, inputs.csv has {}",
            entries.len(),
            rows.len()
        )));
    }
    let n_known = entries
        .iter()
        .filter(|e| e.1.known)
        .map(|e| e.1.class_id + 1)
        .max()
        .unwrap_or(0);
    let build = |role: Role| -> Result<Dataset> {
        let picked: Vec<&(usize, SampleLabel, Role)> =
            entries.iter().filter(|e| e.2 == role).collect();
        let mut inputs = Array2::zeros((picked.len(), dim));
        let mut labels = Vec::with_capacity(picked.len());
        for (r, (id, label, _)) in picked.iter().enumerate() {
            let src = rows.get(*id).ok_or_else(|| {
                Error::ShapeMismatch(format!("sample_id {id} has no inputs row"))
            })?;
            inputs.row_mut(r).assign(&ndarray::ArrayView1::from(src.as_slice()));
            labels.push(*label);
        }
        Ok(Dataset {
            inputs,
            labels,
            role,
            n_known_classes: n_known,
        })
    };
    let train = build(Role::Train)?;
    train.ensure_training_split()?;
    Ok((train, build(Role::Test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_cos_to_known(spec: &SyntheticSpec, dirs: &[UnitVector]) -> Vec<f64> {
        let nk = spec.n_known_classes;
        dirs[nk..]
            .iter()
            .map(|u| {
                dirs[..nk]
                    .iter()
                    .map(|k| u.dot(k.as_slice()))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    #[test]
    fn orthogonal_easy_unknowns_have_zero_cosine() {
        let spec = SyntheticSpec {
            hardness: 0.0,
            ..Default::default()
        };
        let dirs = generate_class_directions(&spec, &mut SeededRng::new(3, 1)).unwrap();
        assert_eq!(dirs.len(), 16);
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    assert!(dirs[i].dot(dirs[j].as_slice()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hardest_unknowns_within_fifteen_degrees() {
        for mode in [DirectionMode::Orthogonal, DirectionMode::Random] {
            let spec = SyntheticSpec {
                hardness: 1.0,
                direction_mode: mode,
                ..Default::default()
            };
            let dirs = generate_class_directions(&spec, &mut SeededRng::new(9, 1)).unwrap();
            for c in max_cos_to_known(&spec, &dirs) {
                assert!(c.clamp(-1.0, 1.0).acos().to_degrees() <= 15.0 + 1e-9);
            }
        }
    }

    #[test]
    fn unknown_similarity_monotone_in_hardness() {
        let mut prev = -1.0;
        for step in 0..=10 {
            let spec = SyntheticSpec {
                hardness: step as f64 / 10.0,
                direction_mode: DirectionMode::Random,
                ..Default::default()
            };
            let dirs = generate_class_directions(&spec, &mut SeededRng::new(4, 1)).unwrap();
            let cos = max_cos_to_known(&spec, &dirs);
            let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min > prev - 1e-12, "hardness {step}: {min} <= {prev}");
            prev = min;
        }
    }

    #[test]
    fn random_mode_known_separation() {
        let spec = SyntheticSpec {
            direction_mode: DirectionMode::Random,
            n_known_classes: 6,
            n_unknown_classes: 2,
            p_latent: 8,
            input_dim: 8,
            ..Default::default()
        };
        for trial in 0..1000 {
            let dirs = generate_class_directions(&spec, &mut SeededRng::new(trial, 1)).unwrap();
            for i in 0..6 {
                for j in 0..i {
                    assert!(dirs[i].dot(dirs[j].as_slice()) <= 0.5);
                }
            }
        }
    }

    #[test]
    fn orthogonal_mode_needs_room() {
        let spec = SyntheticSpec {
            p_latent: 10,
            ..Default::default()
        };
        assert!(matches!(
            generate_class_directions(&spec, &mut SeededRng::new(0, 1)),
            Err(Error::DimensionTooSmall { have: 10, need: 16 })
        ));
    }

    #[test]
    fn counts_and_flags() {
        let spec = SyntheticSpec {
            samples_per_class_train: 7,
            samples_per_class_test: 3,
            ..Default::default()
        };
        let (train, test) = generate_dataset(&spec, Exec::default()).unwrap();
        assert_eq!(train.len(), 8 * 7);
        assert_eq!(test.len(), 16 * 3);
        assert!(train.labels.iter().all(|l| l.known && l.class_id < 8));
        assert_eq!(test.known_indices().len(), 24);
        assert_eq!(test.unknown_indices().len(), 24);
        assert!(test
            .labels
            .iter()
            .all(|l| l.known == (l.class_id < 8)));
        train.ensure_training_split().unwrap();
        assert!(test.ensure_training_split().is_err());
    }

    #[test]
    fn regeneration_is_bit_identical_across_exec_modes() {
        let spec = SyntheticSpec::default();
        let a = generate_dataset(&spec, Exec::Sequential).unwrap();
        let b = generate_dataset(&spec, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn latents_on_sphere() {
        let spec = SyntheticSpec::default();
        let dirs = generate_class_directions(&spec, &mut SeededRng::new(0, 1)).unwrap();
        let lat = sample_latents(&spec, &dirs, Role::Test, Exec::default()).unwrap();
        for (z, _) in lat {
            assert!((crate::numerics::norm(z.as_slice()) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn openness_values() {
        assert!((openness(6, 10).unwrap() - 0.2254).abs() < 1e-4);
        assert!((openness(4, 54).unwrap() - 0.7278).abs() < 1e-4);
        assert_eq!(openness(7, 7).unwrap(), 0.0);
        assert!(openness(0, 3).is_err());
        assert!(openness(5, 3).is_err());
        let mut prev = 1.0;
        for n in 1..=20 {
            let o = openness(n, 20).unwrap();
            assert!(o < prev);
            prev = o;
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = SyntheticSpec {
            samples_per_class_train: 4,
            samples_per_class_test: 2,
            ..Default::default()
        };
        let (train, test) = generate_dataset(&spec, Exec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_csv(dir.path(), &[&train, &test]).unwrap();
        let (tr, te) = import_csv(dir.path()).unwrap();
        assert_eq!(tr, train);
        assert_eq!(te, test);
    }
}
