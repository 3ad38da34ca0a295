//! Open-set scoring rules. Every score is "higher means more known-like".

use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{l2_normalize, softmax};
use crate::training::FeatureBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    MaxLogit,
    Msp,
    Knn,
    NnGuide,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::MaxLogit, Rule::Msp, Rule::Knn, Rule::NnGuide];

    pub fn name(self) -> &'static str {
        match self {
            Rule::MaxLogit => "maxlogit",
            Rule::Msp => "msp",
            Rule::Knn => "knn",
            Rule::NnGuide => "nnguide",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "maxlogit" => Ok(Rule::MaxLogit),
            "msp" => Ok(Rule::Msp),
            "knn" => Ok(Rule::Knn),
            "nnguide" => Ok(Rule::NnGuide),
            other => Err(Error::Config(format!("unknown scoring rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub predicted_class: usize,
    pub is_known_truth: bool,
    /// `None` for unknown-class samples.
    pub true_class: Option<usize>,
}

impl ScoredSample {
    pub fn correct(&self) -> bool {
        self.true_class == Some(self.predicted_class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Known,
    Unknown,
}

pub fn maxlogit(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    Ok(logits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Maximum softmax probability at unit temperature.
pub fn msp(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    Ok(softmax(logits, 1.0)?.into_iter().fold(0.0, f64::max))
}

/// Bank features projected onto the unit sphere once, for repeated queries.
#[derive(Debug, Clone)]
pub struct NormalizedBank {
    rows: Array2<f64>,
}

impl NormalizedBank {
    pub fn new(bank: &FeatureBank) -> Result<Self> {
        Self::from_features(bank.features.view())
    }

    pub fn from_features(features: ArrayView2<f64>) -> Result<Self> {
        let mut rows = features.to_owned();
        for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
            let u = l2_normalize(row.as_slice().expect("standard layout"))
                .map_err(|_| Error::ZeroVector(i))?;
            row.assign(&ndarray::ArrayView1::from(u.as_slice()));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::BankTooSmall { bank: self.len(), k });
        }
        Ok(())
    }

    /// Negative Euclidean distance from the normalized query to its k-th
    /// nearest bank row.
    pub fn knn_score(&self, feature: &[f64], k: usize) -> Result<f64> {
        self.check_k(k)?;
        let q = l2_normalize(feature)?;
        let mut dists: Vec<f64> = self
            .rows
            .rows()
            .into_iter()
            .map(|b| {
                b.iter()
                    .zip(q.as_slice())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        Ok(-*kth)
    }

    /// Mean cosine between the normalized query and its `k` most similar
    /// bank rows.
    pub fn guidance(&self, feature: &[f64], k: usize) -> Result<f64> {
        self.check_k(k)?;
        let q = l2_normalize(feature)?;
        let mut sims: Vec<f64> = self.rows.rows().into_iter().map(|b| q.dot(b.as_slice().unwrap())).collect();
        sims.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
        Ok(sims[..k].iter().sum::<f64>() / k as f64)
    }

    /// `maxlogit(logits) × guidance(feature)`.
    pub fn nnguide_score(&self, feature: &[f64], logits: &[f64], k: usize) -> Result<f64> {
        Ok(maxlogit(logits)? * self.guidance(feature, k)?)
    }
}

pub fn knn_score(feature: &[f64], bank: &FeatureBank, k: usize) -> Result<f64> {
    NormalizedBank::new(bank)?.knn_score(feature, k)
}

pub fn nnguide_score(feature: &[f64], logits: &[f64], bank: &FeatureBank, k: usize) -> Result<f64> {
    NormalizedBank::new(bank)?.nnguide_score(feature, logits, k)
}

/// Known iff `score >= theta`.
pub fn decide(score: f64, theta: f64) -> Decision {
    if score >= theta {
        Decision::Known
    } else {
        Decision::Unknown
    }
}

/// Scores every row of a test split under `rule`.
pub fn score_batch(
    rule: Rule,
    features: ArrayView2<f64>,
    logits: ArrayView2<f64>,
    bank: &NormalizedBank,
    k: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    if features.nrows() != logits.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} logit rows",
            features.nrows(),
            logits.nrows()
        )));
    }
    exec.map_range(features.nrows(), |i| {
        let f = features.row(i);
        let l = logits.row(i);
        let f = f.as_slice().expect("standard layout");
        let l = l.as_slice().expect("standard layout");
        match rule {
            Rule::MaxLogit => maxlogit(l),
            Rule::Msp => msp(l),
            Rule::Knn => bank.knn_score(f, k),
            Rule::NnGuide => bank.nnguide_score(f, l, k),
        }
    })
    .into_iter()
    .collect()
}

/// Rows of the score dump: `sample_id,rule,score,predicted_class,known`.
pub fn write_score_dump(path: &Path, rows: &[(usize, Rule, ScoredSample)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "rule", "score", "predicted_class", "known"])?;
    for (id, rule, s) in rows {
        w.write_record([
            id.to_string(),
            rule.name().to_string(),
            format!("{:?}", s.score),
            s.predicted_class.to_string(),
            u8::from(s.is_known_truth).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use ndarray::arr2;

    fn bank_of(features: Array2<f64>) -> FeatureBank {
        let n = features.nrows();
        FeatureBank {
            features,
            labels: vec![0; n],
            source: "test".into(),
        }
    }

    #[test]
    fn maxlogit_examples() {
        assert_eq!(maxlogit(&[2.0, -1.0, 0.5]).unwrap(), 2.0);
        assert_eq!(maxlogit(&[2.0 + 3.0, -1.0 + 3.0, 0.5 + 3.0]).unwrap(), 5.0);
        assert_eq!(maxlogit(&[-0.7; 3]).unwrap(), -0.7);
        assert!(matches!(maxlogit(&[]), Err(Error::EmptyLogits)));
    }

    #[test]
    fn msp_examples() {
        assert!((msp(&[1.3; 4]).unwrap() - 0.25).abs() < 1e-15);
        let e10 = 10f64.exp();
        assert!((msp(&[10.0, 0.0, 0.0]).unwrap() - e10 / (e10 + 2.0)).abs() < 1e-15);
        assert!((msp(&[10.0, 0.0, 0.0]).unwrap() - 0.99991).abs() < 1e-5);
        let a = msp(&[0.2, 1.7, -0.4]).unwrap();
        let b = msp(&[100.2, 101.7, 99.6]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(msp(&[]), Err(Error::EmptyLogits)));
    }

    #[test]
    fn knn_examples() {
        let bank = bank_of(arr2(&[[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 1.0, 1.0]]));
        assert_eq!(knn_score(&[0.0, 3.0, 0.0], &bank, 1).unwrap(), 0.0);
        assert_eq!(knn_score(&[0.0, 7.0, 0.0], &bank, 1).unwrap(), 0.0);
        let ortho = bank_of(arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]));
        let s = knn_score(&[0.0, 0.0, 5.0], &ortho, 1).unwrap();
        assert!((s + 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(knn_score(&[1.0, 0.0, 0.0], &ortho, 3), Err(Error::BankTooSmall { .. })));
    }

    #[test]
    fn knn_non_increasing_in_k() {
        let mut rng = SeededRng::new(4, 0);
        let feats = Array2::from_shape_fn((60, 5), |_| rng.normal());
        let nb = NormalizedBank::from_features(feats.view()).unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let mut prev = f64::INFINITY;
            for k in 1..=60 {
                let s = nb.knn_score(&q, k).unwrap();
                assert!(s <= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn nnguide_examples() {
        let bank = bank_of(arr2(&[[1.0, 1.0], [2.0, 2.0], [0.5, 0.5], [1.0, -1.0]]));
        let s = nnguide_score(&[3.0, 3.0], &[0.2, 4.5], &bank, 3).unwrap();
        assert!((s - 4.5).abs() < 1e-14);
        let orth = bank_of(arr2(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]));
        assert_eq!(nnguide_score(&[0.0, 0.0, 1.0], &[9.0, -3.0], &orth, 2).unwrap(), 0.0);
    }

    #[test]
    fn decision_boundaries() {
        assert_eq!(decide(0.3, 0.3), Decision::Known);
        assert_eq!(decide(0.2999, 0.3), Decision::Unknown);
        assert_eq!(decide(-1e300, f64::NEG_INFINITY), Decision::Known);
        assert_eq!(decide(1e300, f64::INFINITY), Decision::Unknown);
    }

    #[test]
    fn rule_parsing() {
        for r in Rule::ALL {
            assert_eq!(r.name().parse::<Rule>().unwrap(), r);
        }
        assert!("postmax".parse::<Rule>().is_err());
    }

    #[test]
    fn batch_scoring_modes_agree() {
        let mut rng = SeededRng::new(8, 0);
        let bank = Array2::from_shape_fn((80, 6), |_| rng.normal());
        let nb = NormalizedBank::from_features(bank.view()).unwrap();
        let feats = Array2::from_shape_fn((50, 6), |_| rng.normal());
        let logits = Array2::from_shape_fn((50, 4), |_| rng.normal());
        for rule in Rule::ALL {
            let a = score_batch(rule, feats.view(), logits.view(), &nb, 5, Exec::Sequential).unwrap();
            let b = score_batch(rule, feats.view(), logits.view(), &nb, 5, Exec::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }
}
