//! Statistical checks of the samplers and the synthetic generator against
//! closed-form oracles (Bessel-function moments, uniform CDFs).

use std::f64::consts::PI;

use ndarray::Array2;
use osrlab::datagen::{generate_class_directions, generate_dataset, sample_latents, ObservationKind, Role, SyntheticSpec};
use osrlab::numerics::{l2_normalize, sample_uniform_sphere, sample_vmf, SeededRng};
use osrlab::Exec;

/// `I_ν(x) / I_{ν-1}(x)` from the power series of both functions.
fn bessel_ratio(nu: f64, x: f64) -> f64 {
    let series = |order: f64| {
        let q = x * x / 4.0;
        let (mut term, mut sum) = (1.0f64, 1.0f64);
        for k in 0..2000 {
            term *= q / ((k as f64 + 1.0) * (order + 1.0 + k as f64));
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum
    };
    (x / 2.0) / nu * series(nu) / series(nu - 1.0)
}

/// Mean resultant length of vMF in `p` dimensions.
fn mean_cosine(p: usize, kappa: f64) -> f64 {
    bessel_ratio(p as f64 / 2.0, kappa)
}

/// Asymptotic Kolmogorov distribution tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..200)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_one_sample(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d)
}

#[test]
fn bessel_oracle_sanity() {
    // A_3(κ) = coth κ - 1/κ in closed form.
    for kappa in [0.5f64, 2.0, 10.0, 50.0] {
        let closed = 1.0 / kappa.tanh() - 1.0 / kappa;
        assert!((mean_cosine(3, kappa) - closed).abs() < 1e-12, "{kappa}");
    }
}

#[test]
fn uniform_sphere_coordinate_means_vanish() {
    let mut rng = SeededRng::new(1, 0);
    let mut sums = [0.0; 3];
    let n = 100_000;
    for _ in 0..n {
        let u = sample_uniform_sphere(3, &mut rng).unwrap();
        assert!((u.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        for (s, x) in sums.iter_mut().zip(u.as_slice()) {
            *s += x;
        }
    }
    for s in sums {
        assert!((s / n as f64).abs() < 0.02);
    }
}

#[test]
fn circle_angles_are_uniform() {
    let mut rng = SeededRng::new(2, 0);
    let angles: Vec<f64> = (0..20_000)
        .map(|_| {
            let u = sample_uniform_sphere(2, &mut rng).unwrap();
            let a = u.as_slice()[1].atan2(u.as_slice()[0]);
            if a < 0.0 {
                a + 2.0 * PI
            } else {
                a
            }
        })
        .collect();
    let p = ks_one_sample(angles, |x| (x / (2.0 * PI)).clamp(0.0, 1.0));
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn zero_concentration_matches_uniform_sphere() {
    // On S^2 the cosine to any fixed axis is Uniform[-1, 1].
    let mut rng = SeededRng::new(3, 3);
    let mu = l2_normalize(&[1.0, 2.0, 3.0]).unwrap();
    let cos: Vec<f64> = (0..20_000).map(|_| sample_vmf(&mu, 0.0, &mut rng).unwrap().dot(mu.as_slice())).collect();
    let pv = ks_one_sample(cos, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
    assert!(pv > 0.001, "p=3: KS p-value {pv}");

    let p = 8;
    let mut rng = SeededRng::new(3, p as u64);
    let mu = l2_normalize(&(0..p).map(|i| i as f64 + 1.0).collect::<Vec<_>>()).unwrap();
    let a: Vec<f64> = (0..10_000).map(|_| sample_vmf(&mu, 0.0, &mut rng).unwrap().dot(mu.as_slice())).collect();
    let b: Vec<f64> = (0..10_000)
        .map(|_| sample_uniform_sphere(p, &mut rng).unwrap().dot(mu.as_slice()))
        .collect();
    let pv = ks_two_sample(a, b);
    assert!(pv > 0.001, "p={p}: KS p-value {pv}");
}

#[test]
fn vmf_mean_cosine_matches_bessel_ratio() {
    for (p, kappa) in [(3, 1.0), (3, 10.0), (8, 5.0), (8, 100.0), (16, 20.0), (16, 300.0)] {
        let mut rng = SeededRng::new(4, p as u64 * 1000 + kappa as u64);
        let mu = sample_uniform_sphere(p, &mut rng).unwrap();
        let n = 10_000;
        let cos: Vec<f64> = (0..n).map(|_| sample_vmf(&mu, kappa, &mut rng).unwrap().dot(mu.as_slice())).collect();
        let mean = cos.iter().sum::<f64>() / n as f64;
        let var = cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = mean_cosine(p, kappa);
        assert!(
            (mean - expected).abs() < 5.0 * se + 1e-12,
            "p={p} κ={kappa}: {mean} vs {expected} (se {se})"
        );
    }
}

#[test]
fn von_mises_circular_moments() {
    for kappa in [0.5, 2.0, 8.0] {
        let mut rng = SeededRng::new(5, (kappa * 10.0) as u64);
        let mu = l2_normalize(&[0.6, 0.8]).unwrap();
        let base = 0.8f64.atan2(0.6);
        let n = 50_000;
        let (mut c1, mut c2) = (0.0, 0.0);
        for _ in 0..n {
            let z = sample_vmf(&mu, kappa, &mut rng).unwrap();
            let theta = z.as_slice()[1].atan2(z.as_slice()[0]) - base;
            c1 += theta.cos();
            c2 += (2.0 * theta).cos();
        }
        let (c1, c2) = (c1 / n as f64, c2 / n as f64);
        // Both cosines are bounded by 1, so 5 / sqrt(n) bounds five standard errors.
        let tol = 5.0 / (n as f64).sqrt();
        // E cos θ = I1/I0, E cos 2θ = I2/I0 = (I2/I1)(I1/I0).
        let r1 = bessel_ratio(1.0, kappa);
        let r2 = bessel_ratio(2.0, kappa) * r1;
        assert!((c1 - r1).abs() <= tol, "κ={kappa}: {c1} vs {r1}");
        assert!((c2 - r2).abs() <= tol, "κ={kappa}: {c2} vs {r2}");
    }
}

#[test]
fn vmf_draws_are_unit_and_reproducible() {
    let mu = l2_normalize(&[1.0, -2.0, 0.5, 3.0]).unwrap();
    let draw = |seed| {
        let mut rng = SeededRng::new(seed, 9);
        (0..500)
            .map(|i| sample_vmf(&mu, [0.0, 1.0, 50.0, 1e4][i % 4], &mut rng).unwrap().into_inner())
            .collect::<Vec<_>>()
    };
    let a = draw(7);
    for v in &a {
        assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
    }
    assert_eq!(a, draw(7));
    assert_ne!(a, draw(8));
}

fn nearest_centroid_accuracy(spec: &SyntheticSpec) -> f64 {
    let (train, test) = generate_dataset(spec, Exec::Sequential).unwrap();
    let c = spec.n_known_classes;
    let d = train.input_dim();
    let mut centroids = Array2::<f64>::zeros((c, d));
    for (row, l) in train.inputs.rows().into_iter().zip(&train.labels) {
        let mut r = centroids.row_mut(l.class_id);
        r += &row;
    }
    let known = test.known_indices();
    let correct = known
        .iter()
        .filter(|&&i| {
            let x = test.inputs.row(i);
            let best = (0..c)
                .min_by(|&a, &b| {
                    let da = (&centroids.row(a) / (spec.samples_per_class_train as f64) - x).mapv(|v| v * v).sum();
                    let db = (&centroids.row(b) / (spec.samples_per_class_train as f64) - x).mapv(|v| v * v).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == test.labels[i].class_id
        })
        .count();
    correct as f64 / known.len() as f64
}

#[test]
fn concentrated_identity_data_is_separable() {
    let spec = SyntheticSpec {
        input_dim: 16,
        kappa_data: 200.0,
        observation_map: ObservationKind::Identity,
        samples_per_class_train: 100,
        ..SyntheticSpec::default()
    };
    assert!(nearest_centroid_accuracy(&spec) >= 0.99);
}

#[test]
fn zero_concentration_data_is_chance_level() {
    let spec = SyntheticSpec {
        input_dim: 16,
        kappa_data: 0.0,
        observation_map: ObservationKind::Identity,
        samples_per_class_train: 100,
        samples_per_class_test: 200,
        ..SyntheticSpec::default()
    };
    let acc = nearest_centroid_accuracy(&spec);
    assert!((acc - 0.125).abs() < 0.05, "{acc}");
}

#[test]
fn latent_norms_before_observation_map() {
    let spec = SyntheticSpec {
        kappa_data: 3.0,
        ..SyntheticSpec::default()
    };
    let dirs = generate_class_directions(&spec, &mut SeededRng::new(spec.seed, 1)).unwrap();
    for role in [Role::Train, Role::Test] {
        for (z, _) in sample_latents(&spec, &dirs, role, Exec::default()).unwrap() {
            assert!((z.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
        }
    }
}
