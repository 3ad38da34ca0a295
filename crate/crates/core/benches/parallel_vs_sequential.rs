use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use osrlab::datagen::{generate_dataset, SyntheticSpec};
use osrlab::experiment::{run_seeds, ExperimentConfig};
use osrlab::metrics::angular_separability;
use osrlab::numerics::SeededRng;
use osrlab::scoring::{score_batch, NormalizedBank, Rule};
use osrlab::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeededRng::new(seed, 0);
    Array2::from_shape_fn((rows, cols), |_| rng.normal())
}

fn scoring(c: &mut Criterion) {
    let bank = NormalizedBank::from_features(gaussian(4000, 32, 1).view()).unwrap();
    let queries = gaussian(800, 32, 2);
    let logits = gaussian(800, 8, 3);
    let mut g = c.benchmark_group("score_batch_knn");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_batch(Rule::Knn, queries.view(), logits.view(), &bank, 10, black_box(exec)).unwrap())
        });
    }
    g.finish();
}

fn separability(c: &mut Criterion) {
    let known = gaussian(4000, 32, 4);
    let unknown = gaussian(400, 32, 5);
    let mut g = c.benchmark_group("angular_separability");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| angular_separability(known.view(), unknown.view(), black_box(exec)).unwrap())
        });
    }
    g.finish();
}

fn datagen(c: &mut Criterion) {
    let spec = SyntheticSpec::default();
    let mut g = c.benchmark_group("generate_dataset");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset(&spec, black_box(exec)).unwrap())
        });
    }
    g.finish();
}

fn seeds(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    if let osrlab::experiment::DatasetSource::Synthetic(spec) = &mut cfg.dataset {
        spec.samples_per_class_train = 60;
        spec.samples_per_class_test = 20;
    }
    cfg.train.epochs_stage1 = 5;
    cfg.train.epochs_stage2 = 5;
    cfg.seeds = (0..4).collect();
    let mut g = c.benchmark_group("run_seeds");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_seeds(&cfg, black_box(exec)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, separability, datagen, seeds);
criterion_main!(benches);
