//! Dense reference formulas, written against nalgebra's LU inverse so they
//! share no code with the crate's Cholesky solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use hotspot::geom::Point2;
use hotspot::gp::{Hyperparams, TrainingSet};

pub fn kernel(a: &Point2, b: &Point2, ell: f64, sf2: f64) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    sf2 * (-0.5 * d2 / (ell * ell)).exp()
}

pub struct Dense {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// `μ = K*ᵀ (K + Q)⁻¹ y`, `Σ = K** − K*ᵀ (K + Q)⁻¹ K*` with the same relative
/// jitter as the model.
pub fn dense_posterior(train: &TrainingSet, test: &[Point2], h: &Hyperparams) -> Dense {
    let (ell, sf2) = (h.length_scale, h.signal_variance);
    let n = train.len();
    let t = test.len();
    if n == 0 {
        return Dense {
            mean: vec![0.0; t],
            cov: DMatrix::from_fn(t, t, |i, j| kernel(&test[i], &test[j], ell, sf2)),
        };
    }
    let jitter = 1e-8 * sf2;
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(&train.points[i], &train.points[j], ell, sf2)
            + if i == j { train.noise[i] + jitter } else { 0.0 }
    });
    let kinv = k.lu().try_inverse().expect("invertible gram");
    let ks = DMatrix::from_fn(t, n, |i, j| kernel(&test[i], &train.points[j], ell, sf2));
    let kss = DMatrix::from_fn(t, t, |i, j| kernel(&test[i], &test[j], ell, sf2));
    let y = DVector::from_column_slice(&train.values);
    let mean = &ks * &kinv * y;
    let cov = kss - &ks * &kinv * ks.transpose();
    Dense {
        mean: mean.iter().copied().collect(),
        cov,
    }
}

/// Variance at `targets` after also observing each of them with `noise`.
pub fn dense_cpv(train: &TrainingSet, targets: &[Point2], noise: f64, h: &Hyperparams) -> Vec<f64> {
    let mut aug = train.clone();
    for p in targets {
        aug.push(*p, 0.0, noise);
    }
    let d = dense_posterior(&aug, targets, h);
    (0..targets.len()).map(|i| d.cov[(i, i)]).collect()
}

pub struct Instance {
    pub hyper: Hyperparams,
    pub train: TrainingSet,
    pub test: Vec<Point2>,
}

/// Random heteroscedastic problem: two to three noise levels, clustered
/// and spread points on a 10 m square.
pub fn random_instance<R: Rng>(rng: &mut R, max_n: usize, max_t: usize) -> Instance {
    let sf2 = rng.random_range(0.5..50.0);
    let levels = rng.random_range(2..=3);
    let mut noise: Vec<f64> = (0..levels).map(|_| sf2 * rng.random_range(0.01..0.5)).collect();
    noise.sort_by(f64::total_cmp);
    let hyper = Hyperparams {
        length_scale: rng.random_range(0.5..3.0),
        signal_variance: sf2,
        noise_variances: noise.clone(),
    };
    let n = rng.random_range(1..=max_n);
    let mut train = TrainingSet::new();
    for _ in 0..n {
        let p = Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let level = rng.random_range(0..levels);
        train.push(p, rng.random_range(-3.0..3.0) * sf2.sqrt(), noise[level]);
    }
    let t = rng.random_range(1..=max_t);
    let test = (0..t)
        .map(|_| Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
        .collect();
    Instance { hyper, train, test }
}

/// Largest absolute difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
