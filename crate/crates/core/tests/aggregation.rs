//! Aggregation against an independent recomputation, and fit invariances.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use ricsp_core::{aggregate, fit_points, sweep, InitRule, Observable, ProblemKind, RepairParams, Trajectory};

fn reference_point(trajs: &[Trajectory], alpha: f64) -> (f64, f64, usize) {
    let mut values = Vec::new();
    for t in trajs {
        let n = t.n_vars as f64;
        let m = (alpha * n + 1e-9).floor() as usize;
        // A failed step never counts; runs are alive strictly below it.
        let alive_upto = if t.alpha_stop().is_some() {
            t.records.len() - 1
        } else {
            t.records.len()
        };
        if m <= alive_upto {
            let flips: u64 = t.records[..m].iter().map(|r| r.flips).sum();
            values.push(flips as f64 / n);
        }
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt(), values.len())
}

#[test]
fn aggregate_matches_reference_at_random_grid_points() {
    let params = RepairParams::default_for(1000, 0);
    let seeds: Vec<u64> = (1..=10).collect();
    let trajs = sweep(
        ProblemKind::Coloring { q: 3 },
        1000,
        3.0,
        &seeds,
        &params,
        InitRule::UniformRandom,
        None,
    )
    .unwrap();
    let table = aggregate(&trajs, 0.01, Observable::Integrated).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
    for _ in 0..3 {
        let i = rng.random_range(0..table.points.len());
        let p = table.points[i];
        let (mean, stderr, alive) = reference_point(&trajs, p.alpha);
        assert_eq!(p.n_alive, alive, "alpha {}", p.alpha);
        assert_eq!(p.n_censored, trajs.len() - alive);
        assert!(
            (p.mean - mean).abs() <= 1e-12 * mean.max(1.0),
            "alpha {}: {} vs {mean}",
            p.alpha,
            p.mean
        );
        if alive > 1 {
            assert!(
                (p.stderr - stderr).abs() <= 1e-9 * stderr.max(1e-12),
                "{} vs {stderr}",
                p.stderr
            );
        }
    }
}

#[test]
fn aggregate_is_permutation_invariant() {
    let params = RepairParams::default_for(300, 0);
    let seeds: Vec<u64> = (1..=8).collect();
    let trajs = sweep(
        ProblemKind::Coloring { q: 3 },
        300,
        2.5,
        &seeds,
        &params,
        InitRule::UniformRandom,
        Some(2),
    )
    .unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    for observable in [Observable::Integrated, Observable::PerStep] {
        let base = aggregate(&trajs, 0.02, observable).unwrap();
        for _ in 0..5 {
            let mut shuffled = trajs.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            assert_eq!(aggregate(&shuffled, 0.02, observable).unwrap(), base);
        }
    }
}

#[test]
fn sweep_is_deterministic_and_matches_single_runs() {
    let params = RepairParams::default_for(200, 0);
    let kind = ProblemKind::KSat { k: 3 };
    let a = sweep(kind, 200, 5.0, &[3, 4, 5], &params, InitRule::UniformRandom, Some(3)).unwrap();
    let b = sweep(kind, 200, 5.0, &[3, 4, 5], &params, InitRule::UniformRandom, Some(1)).unwrap();
    assert_eq!(a, b);
    let single = sweep(kind, 200, 5.0, &[4], &params, InitRule::UniformRandom, None).unwrap();
    assert_eq!(single[..], a[1..2]);
    let stream = ricsp_core::generate_stream(kind, 200, 1000, 4).unwrap();
    let direct = ricsp_core::run_incremental(&stream, &params.with_seed(4), InitRule::UniformRandom).unwrap();
    assert_eq!(direct, a[1]);
}

#[test]
fn shifting_the_grid_moves_the_fit_less_than_a_step() {
    let (alpha_star, gamma, amp) = (2.0, 1.5, 1.0);
    let step = 0.9 / 39.0;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for _ in 0..20 {
        let mut fit_on = |offset: f64| {
            let pts: Vec<(f64, f64)> = (0..40)
                .map(|i| {
                    let a = 1.0 + offset + step * i as f64;
                    let noise = 1.0 + 0.02 * (rng.random::<f64>() * 2.0 - 1.0);
                    (a, amp * (alpha_star - a).powf(-gamma) * noise)
                })
                .collect();
            fit_points(&pts).unwrap()
        };
        let base = fit_on(0.0);
        for frac in [0.25, 0.5, 0.75] {
            let shifted = fit_on(frac * step);
            assert!(
                (shifted.alpha_star - base.alpha_star).abs() < step,
                "shift {frac}: {} vs {}",
                shifted.alpha_star,
                base.alpha_star
            );
        }
    }
}
