//! On-disk artifacts: JSON reports and manifests, flat CSV rows, curve
//! point files and multi-seed aggregates.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{mean_std, Evaluation, ExperimentConfig};
use crate::metrics::EvalReport;
use crate::scoring::{write_score_dump, Rule};
use crate::training::{StageOneEpoch, StageTwoEpoch};

pub const MANIFEST_SCHEMA: &str = "osrlab.manifest/v1";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub const REPORT_CSV_HEADER: [&str; 12] = [
    "seed",
    "rule",
    "accuracy",
    "auroc",
    "oscr",
    "dtacc",
    "angular_separability",
    "norm_separability",
    "dispersion_degrees",
    "openness",
    "config_hash",
    "tags",
];

/// One CSV row per `(seed, rule)`.
pub fn report_rows(report: &EvalReport) -> Vec<Vec<String>> {
    report
        .rules
        .iter()
        .map(|r| {
            vec![
                report.seed.to_string(),
                r.rule.clone(),
                format!("{:?}", report.accuracy),
                format!("{:?}", r.auroc),
                format!("{:?}", r.oscr),
                format!("{:?}", r.dtacc),
                format!("{:?}", report.angular_separability),
                format!("{:?}", report.norm_separability),
                format!("{:?}", report.dispersion_degrees),
                format!("{:?}", report.openness),
                report.config_hash.clone(),
                report.tags.join(";"),
            ]
        })
        .collect()
}

pub fn write_report_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        for row in report_rows(r) {
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([x_name, y_name])?;
    for (x, y) in points {
        w.write_record([format!("{x:?}"), format!("{y:?}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub rule: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Aggregates per `(rule, metric)`; rule-independent metrics are listed
/// under the rule name `*`.
pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let mut push = |rule: &str, metric: &str, values: Vec<f64>| {
        let (mean, std) = mean_std(&values);
        rows.push(AggregateRow {
            rule: rule.to_string(),
            metric: metric.to_string(),
            mean,
            std,
            n: values.len(),
        });
    };
    let global: [(&str, fn(&EvalReport) -> f64); 5] = [
        ("accuracy", |r| r.accuracy),
        ("angular_separability", |r| r.angular_separability),
        ("norm_separability", |r| r.norm_separability),
        ("dispersion_degrees", |r| r.dispersion_degrees),
        ("openness", |r| r.openness),
    ];
    for (name, f) in global {
        push("*", name, reports.iter().map(f).collect());
    }
    let Some(first) = reports.first() else {
        return rows;
    };
    for (i, rm) in first.rules.iter().enumerate() {
        let pick = |g: fn(&crate::metrics::RuleMetrics) -> f64| {
            reports.iter().map(|r| g(&r.rules[i])).collect::<Vec<_>>()
        };
        push(&rm.rule, "auroc", pick(|m| m.auroc));
        push(&rm.rule, "oscr", pick(|m| m.oscr));
        push(&rm.rule, "dtacc", pick(|m| m.dtacc));
    }
    rows
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rule", "metric", "mean", "std", "n"])?;
    for r in rows {
        w.write_record([
            r.rule.clone(),
            r.metric.clone(),
            format!("{:?}", r.mean),
            format!("{:?}", r.std),
            r.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `scores.csv`, `thresholds.csv` and the
/// `roc_<rule>.csv` / `oscr_<rule>.csv` curve files into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("report.json"), &eval.report)?;
    write_report_csv(&dir.join("report.csv"), std::slice::from_ref(&eval.report))?;
    write_score_dump(&dir.join("scores.csv"), &eval.scores)?;
    for (rule, pts) in &eval.roc {
        write_curve(&dir.join(format!("roc_{}.csv", rule.name())), "fpr", "tpr", pts)?;
    }
    for (rule, pts) in &eval.oscr {
        write_curve(&dir.join(format!("oscr_{}.csv", rule.name())), "fpr", "ccr", pts)?;
    }
    let path = dir.join("thresholds.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["rule", "theta", "known_accept", "unknown_accept", "ccr"])?;
    for (rule, theta, ka, ua, ccr) in &eval.threshold_sweep {
        w.write_record([
            rule.name().to_string(),
            format!("{theta:?}"),
            format!("{ka:?}"),
            format!("{ua:?}"),
            format!("{ccr:?}"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateManifest {
    pub schema: &'static str,
    pub command: &'static str,
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub dataset_seed: u64,
    pub n_known_classes: usize,
    pub n_test_classes: usize,
    pub openness: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub files: Vec<PathBuf>,
}

impl GenerateManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: ExperimentConfig,
        dataset_seed: u64,
        n_known_classes: usize,
        n_test_classes: usize,
        openness: f64,
        train_rows: usize,
        test_rows: usize,
        files: Vec<PathBuf>,
    ) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            command: "generate",
            created_unix: unix_time(),
            config,
            dataset_seed,
            n_known_classes,
            n_test_classes,
            openness,
            train_rows,
            test_rows,
            files,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedTrace {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub stage_one: Vec<StageOneEpoch>,
    pub stage_two: Vec<StageTwoEpoch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: &'static str,
    pub created_unix: u64,
    pub config_hash: String,
    pub tags: Vec<String>,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedTrace>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: ExperimentConfig, runs: Vec<SeedTrace>) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            command,
            created_unix: unix_time(),
            config_hash: config.hash(),
            tags: config.ablation_tags(),
            config,
            runs,
        }
    }
}

/// Per-seed output directory, `seed-<n>`.
pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub fn rule_list(rules: &[Rule]) -> String {
    rules.iter().map(|r| r.name()).collect::<Vec<_>>().join(",")
}
