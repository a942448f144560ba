mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_cpv, dense_posterior, kernel, max_abs_diff, random_instance};
use hotspot::baselines::{serpentine, BaselineConfig, BaselineKind};
use hotspot::bench::{aggregate, mean_std};
use hotspot::field::{generate_random_field, Bump, FieldConfig, ScalarField};
use hotspot::geom::{Extent, Point2};
use hotspot::gp::{
    conditioned_block_variance, cpv_at, information_gain, posterior, se_kernel, sparse_posterior,
    BlockTracker, ExactGp, GpBackend, Hyperparams, SparseGp, TrainingSet,
};
use hotspot::planner::{
    random_start, run_strategy, score_arms, BetaSchedule, EpisodeLimits, MetricOracle, Planner,
    PlannerConfig, Scenario, Strategy, VarianceMode, Window,
};
use hotspot::sensing::{build_arm_grid, AltitudeLevel, ArmGrid, NoiseModel};

fn desk_grid() -> ArmGrid {
    let n = NoiseModel::default();
    let levels = [
        AltitudeLevel::new(10.0, 1.0, &n),
        AltitudeLevel::new(40.0, 4.0, &n),
        AltitudeLevel::new(70.0, 7.0, &n),
    ];
    build_arm_grid(Extent::new(20.0, 20.0).unwrap(), &levels, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_posterior_matches_dense_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 50, 30);
        let h = &inst.hyper;
        let ours = posterior(&inst.train, &inst.test, h).unwrap();
        let oracle = dense_posterior(&inst.train, &inst.test, h);
        let var: Vec<f64> = (0..inst.test.len()).map(|i| oracle.cov[(i, i)]).collect();
        prop_assert!(max_abs_diff(&ours.mean, &oracle.mean) <= 1e-8 * h.signal_variance.sqrt());
        prop_assert!(max_abs_diff(&ours.variance, &var) <= 1e-8 * h.signal_variance);
    }

    #[test]
    fn incremental_backend_matches_dense_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 50, 30);
        let h = &inst.hyper;
        let mut gp = ExactGp::new(inst.test.clone(), h.clone());
        let mut seen = TrainingSet::new();
        let mut i = 0;
        while i < inst.train.len() {
            // Batches share one noise level, as images do.
            let noise = inst.train.noise[i];
            let mut j = i;
            while j < inst.train.len() && inst.train.noise[j] == noise && j - i < 9 {
                seen.push(inst.train.points[j], inst.train.values[j], noise);
                j += 1;
            }
            gp.add_batch(&inst.train.points[i..j], &inst.train.values[i..j], noise).unwrap();
            i = j;
        }
        let oracle = dense_posterior(&seen, &inst.test, h);
        let var: Vec<f64> = (0..inst.test.len()).map(|i| oracle.cov[(i, i)]).collect();
        prop_assert!(max_abs_diff(gp.mean(), &oracle.mean) <= 1e-8 * h.signal_variance.sqrt());
        prop_assert!(max_abs_diff(gp.variance(), &var) <= 1e-8 * h.signal_variance);
        let idx: Vec<usize> = (0..inst.test.len()).step_by(2).collect();
        let block = gp.covariance_block(&idx);
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                prop_assert!((block[b * idx.len() + a] - oracle.cov[(ia, ib)]).abs() <= 1e-8 * h.signal_variance);
            }
        }
    }

    #[test]
    fn cpv_routes_agree_and_never_exceed_variance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 40, 12);
        let h = &inst.hyper;
        let noise = *h.noise_variances.last().unwrap();
        let oracle = dense_cpv(&inst.train, &inst.test, noise, h);
        let augmented = cpv_at(&inst.train, &inst.test, noise, h).unwrap();
        let mut gp = ExactGp::new(inst.test.clone(), h.clone());
        for i in 0..inst.train.len() {
            gp.add_batch(&inst.train.points[i..=i], &inst.train.values[i..=i], inst.train.noise[i]).unwrap();
        }
        let idx: Vec<usize> = (0..inst.test.len()).collect();
        let schur = gp.cpv(&idx, noise).unwrap();
        let tracked = BlockTracker::new().cpv(&gp, 0, &idx, noise).unwrap();
        let tol = 1e-8 * h.signal_variance;
        prop_assert!(max_abs_diff(&augmented, &oracle) <= tol);
        prop_assert!(max_abs_diff(&schur, &oracle) <= tol);
        prop_assert!(max_abs_diff(&tracked, &oracle) <= tol);
        for (c, v) in schur.iter().zip(gp.variance()) {
            prop_assert!(*c <= v + 1e-10);
        }
    }

    #[test]
    fn fitc_with_training_inducing_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = random_instance(&mut rng, 120, 30);
        // Distinct inducing locations keep K_uu well conditioned.
        inst.train.points.iter_mut().enumerate().for_each(|(i, p)| p.x += 1e-3 * i as f64);
        let h = &inst.hyper;
        let exact = posterior(&inst.train, &inst.test, h).unwrap();
        let sparse = sparse_posterior(&inst.train, &inst.test, &inst.train.points, h).unwrap();
        prop_assert!(max_abs_diff(&exact.mean, &sparse.mean) <= 1e-6 * h.signal_variance.sqrt().max(1.0));
        prop_assert!(max_abs_diff(&exact.variance, &sparse.variance) <= 1e-6 * h.signal_variance.max(1.0));
    }

    #[test]
    fn information_gain_is_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 30, 10);
        let d = dense_posterior(&inst.train, &inst.test, &inst.hyper);
        let l = inst.test.len();
        let block: Vec<f64> = (0..l * l).map(|k| d.cov[(k % l, k / l)]).collect();
        let g = information_gain(&block, l, inst.hyper.noise_variances[0]).unwrap();
        prop_assert!(g >= 0.0);
    }

    #[test]
    fn optimum_ignores_bump_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = Extent::new(10.0, 10.0).unwrap();
        let bumps: Vec<Bump> = (0..4)
            .map(|_| Bump {
                center: Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
                amplitude: rng.random_range(1.0..5.0),
                width: rng.random_range(0.5..2.0),
            })
            .collect();
        let mut reversed = bumps.clone();
        reversed.reverse();
        let a = ScalarField::from_bumps(extent, bumps, 0.0).unwrap().global_optimum(0.1).unwrap();
        let b = ScalarField::from_bumps(extent, reversed, 0.0).unwrap().global_optimum(0.1).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert!((a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn sample_sigma_is_non_negative(values in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let (m, s) = mean_std(&values);
        prop_assert!(s >= 0.0);
        prop_assert!(m >= 0.0 && m <= 100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_fields_hit_their_maximum(seed in any::<u64>(), bumps in 1usize..8) {
        let config = FieldConfig { seed, num_bumps: bumps, ..FieldConfig::default() };
        let f = generate_random_field(&config).unwrap();
        let (_, max) = f.global_optimum(0.1).unwrap();
        prop_assert!((max - config.global_max).abs() <= 0.01 * config.global_max);
    }

    #[test]
    fn fields_are_lipschitz(seed in any::<u64>()) {
        let config = FieldConfig { seed, ..FieldConfig::default() };
        let f = generate_random_field(&config).unwrap();
        let (bumps, _) = match f.source() {
            hotspot::field::FieldSource::Mixture { bumps, baseline } => (bumps.clone(), *baseline),
            _ => unreachable!(),
        };
        // |∂/∂x a·e^{-r²/2w²}| ≤ a / (w·√e).
        let lipschitz: f64 = bumps.iter().map(|b| b.amplitude / (b.width * 1f64.exp().sqrt())).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = 1e-3;
        for _ in 0..50 {
            let p = Point2::new(rng.random_range(0.0..19.9), rng.random_range(0.0..19.9));
            let q = Point2::new(p.x + delta, p.y + delta);
            prop_assert!((f.value(&p) - f.value(&q)).abs() <= lipschitz * delta * 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn boustrophedon_is_a_permutation_prefix(seed in any::<u64>(), level in 0usize..3, budget in 5.0f64..120.0) {
        let grid = desk_grid();
        let field = generate_random_field(&FieldConfig { seed, ..FieldConfig::default() }).unwrap();
        let oracle = MetricOracle::new(&field, &grid).unwrap();
        let hyper = Hyperparams::default();
        let mut s = BaselineConfig::at_level(BaselineKind::Boustrophedon, level).build(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = random_start(&grid, &mut rng);
        let limits = EpisodeLimits { budget, ..EpisodeLimits::default() };
        let scenario = Scenario { field: &field, grid: &grid, hyper: &hyper, oracle: &oracle };
        let t = run_strategy(s.as_mut(), scenario, &limits, start, &mut rng).unwrap();
        let order = serpentine(&grid, level);
        let visited: Vec<usize> = t.visited().collect();
        let n = visited.len().min(order.len());
        prop_assert_eq!(&visited[..n], &order[..n]);
    }
}

#[test]
fn kernel_half_value_distance() {
    let h = Hyperparams { length_scale: 1.7, signal_variance: 9.0, noise_variances: vec![1.0] };
    let r = h.length_scale * (2.0 * 2f64.ln()).sqrt();
    let v = se_kernel(&Point2::new(0.0, 0.0), &Point2::new(r, 0.0), &h);
    assert!((v - 4.5).abs() < 1e-12);
    assert!((v - kernel(&Point2::new(0.0, 0.0), &Point2::new(r, 0.0), 1.7, 9.0)).abs() < 1e-12);
}

#[test]
fn one_point_closed_forms() {
    let (sf2, sn2, y) = (4.0, 0.5, 2.0);
    let h = Hyperparams { length_scale: 1.0, signal_variance: sf2, noise_variances: vec![sn2] };
    let jitter = 1e-8 * sf2;
    let mut t = TrainingSet::new();
    t.push(Point2::new(1.0, 1.0), y, sn2);
    let p = posterior(&t, &[Point2::new(1.0, 1.0)], &h).unwrap();
    let s = sn2 + jitter;
    assert!((p.mean[0] - y * sf2 / (sf2 + s)).abs() < 1e-12);
    assert!((p.variance[0] - sf2 * s / (sf2 + s)).abs() < 1e-12);
    // Conditioning the prior on one look at the test point itself.
    let prior_block = [sf2];
    let c = conditioned_block_variance(&prior_block, 1, sn2, jitter).unwrap();
    assert!((c[0] - sf2 * s / (sf2 + s)).abs() < 1e-12);
    // Scalar information gain.
    let g = information_gain(&[3.0], 1, 1.5).unwrap();
    assert!((g - 0.5 * (1.0f64 + 2.0).ln()).abs() < 1e-12);
    assert_eq!(information_gain(&[3.0], 1, f64::INFINITY).unwrap(), 0.0);
}

#[test]
fn fit_recovers_length_scale() {
    use hotspot::gp::{fit_hyperparams, FitOptions, LabeledTrainingSet};
    let truth = Hyperparams { length_scale: 2.0, signal_variance: 25.0, noise_variances: vec![0.5] };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts: Vec<Point2> =
        (0..500).map(|_| Point2::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0))).collect();
    let n = pts.len();
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        kernel(&pts[i], &pts[j], truth.length_scale, truth.signal_variance) + if i == j { 1e-6 } else { 0.0 }
    });
    let l = k.cholesky().unwrap().l();
    let z = nalgebra::DVector::from_fn(n, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
    let f = l * z;
    let mut data = LabeledTrainingSet::default();
    for (i, p) in pts.iter().enumerate() {
        let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        data.push(*p, f[i] + e * truth.noise_variances[0].sqrt(), 0);
    }
    let options = FitOptions { initial_length_scales: vec![0.7, 6.0], tolerance: 1e-2, ..FitOptions::default() };
    let fit = fit_hyperparams(&data, &options).unwrap();
    assert!((fit.length_scale - 2.0).abs() <= 0.6, "{fit:?}");

    let mut doubled = data.clone();
    doubled.values.iter_mut().for_each(|v| *v *= 2.0);
    let fit2 = fit_hyperparams(&doubled, &options).unwrap();
    let ratio = fit2.signal_variance / fit.signal_variance;
    assert!((ratio - 4.0).abs() < 0.4, "σ_f² ratio {ratio}");
}

#[test]
fn huge_beta_planner_picks_what_variance_reduction_picks() {
    use hotspot::planner::PlanState;
    let grid = desk_grid();
    let hyper = Hyperparams::default();
    let all: Vec<usize> = (0..grid.len()).collect();
    let mut unique = 0;
    for seed in 0..6u64 {
        let field = generate_random_field(&FieldConfig { seed, ..FieldConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gp = ExactGp::new(grid.test_points().to_vec(), hyper.clone());
        let mut visited = Vec::new();
        for _ in 0..(2 + seed as usize) {
            let id = rng.random_range(0..grid.len());
            let b = hotspot::sensing::take_image(&field, grid.arm(id), &grid, &mut rng);
            gp.add_batch(&b.pixel_locations, &b.values, hyper.noise_variances[grid.arm(id).level]).unwrap();
            visited.push(id);
        }
        let current = *visited.last().unwrap();
        let state = PlanState {
            grid: &grid,
            gp: &gp,
            position: grid.arm(current).position,
            current: Some(current),
            k: visited.len() + 1,
            last_batch: None,
            visited: &visited,
        };
        let mut vr = BaselineConfig::new(BaselineKind::VarianceReduction).build(&grid).unwrap();
        let mut planner = Planner::new(PlannerConfig {
            variance_mode: VarianceMode::Cpv,
            window: Window::Off,
            beta: BetaSchedule::new(0.0, 0.0, 1e9),
            ..PlannerConfig::default()
        })
        .unwrap();
        let a = vr.next_arm(&state, &mut rng).unwrap().arm;
        let b = planner.next_arm(&state, &mut rng).unwrap().arm;
        let s = score_arms(&gp, &grid, &all, VarianceMode::Cpv, 0.0, &mut BlockTracker::new()).unwrap();
        let top = s.iter().map(|x| x.sigma).fold(f64::MIN, f64::max);
        let ties = s.iter().filter(|x| x.sigma >= top * (1.0 - 1e-9)).count();
        assert!(s[a].sigma >= top * (1.0 - 1e-9));
        assert!(s[b].sigma >= top * (1.0 - 1e-9), "seed {seed}");
        if ties == 1 {
            unique += 1;
            assert_eq!(a, b, "seed {seed}");
        }
    }
    assert!(unique > 0);
}

#[test]
fn zero_beta_picks_highest_mean() {
    let grid = desk_grid();
    let hyper = Hyperparams::default();
    let field = generate_random_field(&FieldConfig { seed: 4, ..FieldConfig::default() }).unwrap();
    let mut gp = ExactGp::new(grid.test_points().to_vec(), hyper.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for id in [5, 200, 401, 420, 433] {
        let b = hotspot::sensing::take_image(&field, grid.arm(id), &grid, &mut rng);
        gp.add_batch(&b.pixel_locations, &b.values, hyper.noise_variances[grid.arm(id).level]).unwrap();
    }
    let all: Vec<usize> = (0..grid.len()).collect();
    let s = score_arms(&gp, &grid, &all, VarianceMode::Cpv, 0.0, &mut BlockTracker::new()).unwrap();
    let best_score = s.iter().map(|x| x.score).fold(f64::MIN, f64::max);
    let best_mean = s.iter().map(|x| x.mean).fold(f64::MIN, f64::max);
    assert_eq!(best_score, best_mean);
}

#[test]
fn aggregate_sigma_uses_sample_convention() {
    let rows: Vec<hotspot::bench::CellResult> = [10.0, 20.0, 60.0]
        .iter()
        .enumerate()
        .map(|(i, p)| hotspot::bench::CellResult {
            env_seed: 0,
            trial_seed: i as u64,
            strategy: "x".into(),
            variance_mode: "cpv".into(),
            window: "1".into(),
            beta_form: "increasing".into(),
            budget: 100.0,
            s: 0,
            images: 3,
            point_metric: *p,
            arm_metric: *p,
            gp_time_ms: 1.0,
            error: None,
            update_ms: vec![],
        })
        .collect();
    let a = aggregate(&rows);
    assert_eq!(a[0].samples, 3);
    assert!((a[0].point_mean - 30.0).abs() < 1e-12);
    assert!((a[0].point_std - 700f64.sqrt()).abs() < 1e-12);
}

#[test]
fn sparse_backend_with_one_far_inducing_point_keeps_prior() {
    let h = Hyperparams::default();
    let test = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
    let mut gp = SparseGp::new(test, vec![Point2::new(500.0, 500.0)], h.clone()).unwrap();
    gp.add_batch(&[Point2::new(0.5, 0.0)], &[10.0], 1.0).unwrap();
    for (m, v) in gp.mean().iter().zip(gp.variance()) {
        assert!(m.abs() < 1e-9);
        assert!((v - h.signal_variance).abs() < 1e-6);
    }
}

#[test]
fn strategies_obey_budget_on_every_level() {
    let grid = desk_grid();
    let hyper = Hyperparams::default();
    let field = generate_random_field(&FieldConfig { seed: 9, ..FieldConfig::default() }).unwrap();
    let oracle = MetricOracle::new(&field, &grid).unwrap();
    let scenario = Scenario { field: &field, grid: &grid, hyper: &hyper, oracle: &oracle };
    let limits = EpisodeLimits { budget: 37.5, ..EpisodeLimits::default() };
    let mut strategies: Vec<Box<dyn Strategy + Send>> = Vec::new();
    for level in 0..3 {
        strategies.push(BaselineConfig::at_level(BaselineKind::GradientAscent, level).build(&grid).unwrap());
    }
    strategies.push(Box::new(Planner::new(PlannerConfig::default()).unwrap()));
    for s in &mut strategies {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = random_start(&grid, &mut rng);
        let t = run_strategy(s.as_mut(), scenario, &limits, start, &mut rng).unwrap();
        assert!(t.total_cost(&grid) <= limits.budget);
    }
}
