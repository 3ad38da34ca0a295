//! Command-line front end: `generate`, `train`, `evaluate`, `gradcheck`
//! and `ablate`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::{export_csv, openness};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::experiment::{bank_for, evaluate_model, run_seeds, DatasetSource, Evaluation, ExperimentConfig, Variant};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::model::Checkpoint;
use crate::report::{
    aggregate, ensure_dir, read_json, seed_dir, write_aggregate_csv, write_evaluation, write_json,
    write_report_csv, AggregateRow, GenerateManifest, RunManifest, SeedTrace,
};
use crate::scoring::Rule;

/// File holding the resolved configuration of a training run.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "osrlab", version, about = "Open-set recognition on hyperspherical embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset seed for `generate`; single run seed otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_mixup: bool,
    #[arg(long, global = true)]
    pub no_ls: bool,
    #[arg(long, global = true)]
    pub no_r_ortho: bool,
    /// Comma-separated scoring rules, e.g. `maxlogit,knn`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub rules: Option<Vec<Rule>>,
    /// Run seeds one after another instead of concurrently.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Write the synthetic train/test CSV pair and a manifest.
    Generate,
    /// Train both stages for every seed and write checkpoints.
    Train,
    /// Score the test split with stored checkpoints and write reports.
    Evaluate,
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        /// Random instances per loss/regularizer block.
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Train and evaluate the full method and each single-component ablation.
    Ablate,
}

impl GlobalOpts {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    fn base_config(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// Applies command-line overrides; `--seed` replaces the run seeds.
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.no_mixup {
            cfg.augment.mixup_enabled = false;
        }
        if self.no_ls {
            cfg.augment.ls_enabled = false;
        }
        if self.no_r_ortho {
            cfg.train.r_ortho_enabled = false;
        }
        if let Some(rules) = &self.rules {
            cfg.scoring.rules = rules.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.apply(self.base_config()?)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let opts = &cli.opts;
    match cli.command {
        Command::Generate => cmd_generate(opts),
        Command::Train => cmd_train(&opts.resolve()?, opts.exec()).map(|_| ()),
        Command::Evaluate => {
            // Without --config, reuse the configuration stored by `train`.
            let cfg = match (&opts.config, &opts.out) {
                (None, Some(out)) if out.join(RESOLVED_CONFIG).exists() => {
                    opts.apply(ExperimentConfig::load(&out.join(RESOLVED_CONFIG))?)?
                }
                _ => opts.resolve()?,
            };
            cmd_evaluate(&cfg, opts.exec()).map(|_| ())
        }
        Command::Gradcheck { instances } => cmd_gradcheck(opts, instances),
        Command::Ablate => cmd_ablate(&opts.resolve()?, opts.exec()).map(|_| ()),
    }
}

fn cmd_generate(opts: &GlobalOpts) -> Result<()> {
    let mut cfg = opts.base_config()?;
    if let (Some(seed), DatasetSource::Synthetic(spec)) = (opts.seed, &mut cfg.dataset) {
        spec.seed = seed;
    }
    let cfg = GlobalOpts { seed: None, ..opts.clone() }.apply(cfg)?;
    let DatasetSource::Synthetic(spec) = &cfg.dataset else {
        return Err(Error::Config("generate requires a synthetic dataset".into()));
    };
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let (train, test) = cfg.load_dataset(opts.exec())?;
    export_csv(dir, &[&train, &test])?;
    let total = spec.total_classes();
    let manifest = GenerateManifest::new(
        cfg.clone(),
        spec.seed,
        spec.n_known_classes,
        total,
        openness(spec.n_known_classes, total)?,
        train.len(),
        test.len(),
        vec![PathBuf::from("inputs.csv"), PathBuf::from("labels.csv")],
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "generated {} train / {} test rows in {} (openness {:.4})",
        train.len(),
        test.len(),
        dir.display(),
        manifest.openness
    );
    Ok(())
}

/// Trains every seed of `cfg`, writing `seed-<n>/checkpoint.json`,
/// `config.json` and `manifest.json` under `cfg.output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, exec: Exec) -> Result<RunManifest> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let (train, _) = cfg.load_dataset(exec)?;
    let runs = exec
        .map_slice(&cfg.seeds, |&seed| {
            crate::training::train_two_stage(&train, &cfg.model, &cfg.train, &cfg.augment, seed)
                .map(|t| (seed, t))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut traces = Vec::new();
    for (seed, trained) in runs {
        let sd = seed_dir(dir, seed);
        ensure_dir(&sd)?;
        let rel = sd.strip_prefix(dir).unwrap_or(&sd).join("checkpoint.json");
        write_json(&dir.join(&rel), &Checkpoint::from_state(&trained.state, seed))?;
        let last = trained.stage_one.last().map(|e| e.loss).unwrap_or(f64::NAN);
        println!("seed {seed}: stage-one loss {last:.4}, checkpoint {}", dir.join(&rel).display());
        traces.push(SeedTrace {
            seed,
            checkpoint: rel,
            stage_one: trained.stage_one,
            stage_two: trained.stage_two,
        });
    }
    write_json(&dir.join(RESOLVED_CONFIG), cfg)?;
    let manifest = RunManifest::new("train", cfg.clone(), traces);
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    read_json(path)
}

/// Evaluates stored checkpoints for every seed of `cfg`; writes per-seed
/// artifacts plus `report.csv`, `aggregate.csv` and `aggregate.json`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<Evaluation>> {
    let dir = &cfg.output_dir;
    let (train, test) = cfg.load_dataset(exec)?;
    let hash = cfg.hash();
    let tags = cfg.ablation_tags();
    let mut evals = Vec::new();
    for &seed in &cfg.seeds {
        let sd = seed_dir(dir, seed);
        let state = load_checkpoint(&sd.join("checkpoint.json"))?.into_state()?;
        let bank = bank_for(&state, &train)?;
        let eval = evaluate_model(&state, &bank, &test, &cfg.scoring, seed, &hash, &tags, exec)?;
        write_evaluation(&sd, &eval)?;
        println!(
            "seed {seed}: accuracy {:.4}{}",
            eval.report.accuracy,
            eval.report
                .rules
                .iter()
                .map(|r| format!(", {} auroc {:.4}", r.rule, r.auroc))
                .collect::<String>()
        );
        evals.push(eval);
    }
    let reports: Vec<_> = evals.iter().map(|e| e.report.clone()).collect();
    write_report_csv(&dir.join("report.csv"), &reports)?;
    let agg = aggregate(&reports);
    write_aggregate_csv(&dir.join("aggregate.csv"), &agg)?;
    write_json(&dir.join("aggregate.json"), &agg)?;
    Ok(evals)
}

fn cmd_gradcheck(opts: &GlobalOpts, instances: usize) -> Result<()> {
    let report = run_gradcheck(&GradcheckOptions {
        seed: opts.seed.unwrap_or(0),
        instances,
        ..GradcheckOptions::default()
    })?;
    for b in &report.blocks {
        println!(
            "{:<18} checks {:>4}  worst rel err {:.3e}  {}",
            b.block,
            b.checks,
            b.worst_relative_error,
            if b.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &opts.out {
        ensure_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    report.into_result().map(|_| ())
}

/// Runs every [`Variant`] into `<out>/<variant>/` and writes the combined
/// `ablation.csv` summary.
pub fn cmd_ablate(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<(Variant, Vec<AggregateRow>)>> {
    let root = cfg.output_dir.clone();
    ensure_dir(&root)?;
    let mut out = Vec::new();
    for variant in Variant::ALL {
        let mut vcfg = variant.apply(cfg);
        vcfg.output_dir = root.join(variant.name());
        let runs = run_seeds(&vcfg, exec)?;
        ensure_dir(&vcfg.output_dir)?;
        let mut traces = Vec::new();
        let mut reports = Vec::new();
        for run in runs {
            let sd = seed_dir(&vcfg.output_dir, run.seed);
            write_evaluation(&sd, &run.evaluation)?;
            write_json(
                &sd.join("checkpoint.json"),
                &Checkpoint::from_state(&run.trained.state, run.seed),
            )?;
            reports.push(run.evaluation.report);
            traces.push(SeedTrace {
                seed: run.seed,
                checkpoint: PathBuf::from(format!("seed-{}", run.seed)).join("checkpoint.json"),
                stage_one: run.trained.stage_one,
                stage_two: run.trained.stage_two,
            });
        }
        write_json(&vcfg.output_dir.join(RESOLVED_CONFIG), &vcfg)?;
        write_json(
            &vcfg.output_dir.join("manifest.json"),
            &RunManifest::new("ablate", vcfg.clone(), traces),
        )?;
        write_report_csv(&vcfg.output_dir.join("report.csv"), &reports)?;
        let agg = aggregate(&reports);
        write_aggregate_csv(&vcfg.output_dir.join("aggregate.csv"), &agg)?;
        println!("{}: {} seeds", variant.name(), reports.len());
        out.push((variant, agg));
    }
    let path = root.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["variant", "rule", "metric", "mean", "std", "n"])?;
    for (variant, rows) in &out {
        for r in rows {
            w.write_record([
                variant.name().to_string(),
                r.rule.clone(),
                r.metric.clone(),
                format!("{:?}", r.mean),
                format!("{:?}", r.std),
                r.n.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(out)
}
