use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revise_core::revise::{objective, revise, CostKind, ReviseConfig};
use revise_core::testbed::identity_logistic;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Minimizer of `softplus(-2 x) + λ (x - a)²` on a 1e-3 grid.
fn grid_minimizer(a: f64, lambda: f64) -> f64 {
    let mut best = (f64::INFINITY, a);
    for i in 0..=8000 {
        let x = a + i as f64 * 1e-3;
        let v = softplus(-2.0 * x) + lambda * (x - a) * (x - a);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

fn config() -> ReviseConfig {
    ReviseConfig {
        eta: 0.05,
        tau_max: 500,
        cost: CostKind::L2Squared,
        ..ReviseConfig::default()
    }
}

#[test]
fn reference_instance() {
    let (clf, vae) = identity_logistic(2.0).unwrap();
    let r = revise(&[-1.0, 0.0], &clf, &vae, 0.1, &config()).unwrap();
    assert!(r.success);
    let x = &r.counterfactual;
    assert!((x[0] - 0.77).abs() < 0.01, "{x:?}");
    assert_eq!(x[1], 0.0);
    assert!((x[0] - grid_minimizer(-1.0, 0.1)).abs() < 1e-3);
    assert_eq!(r.changes.len(), 1);
}

#[test]
fn objective_matches_closed_form() {
    let (clf, vae) = identity_logistic(2.0).unwrap();
    for &(z1, z2) in &[(0.0, 0.0), (0.77, 0.3), (-1.5, 2.0)] {
        let v = objective(&[z1, z2], &[-1.0, 0.0], &clf, &vae, 0.1, &config()).unwrap();
        let expect = softplus(-2.0 * z1) + 0.1 * ((z1 + 1.0).powi(2) + z2 * z2);
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }
}

#[test]
fn random_instances_match_grid_search() {
    let (clf, vae) = identity_logistic(2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    for _ in 0..100 {
        let a = rng.gen_range(-2.0..-0.2);
        let b = rng.gen_range(-1.0..1.0);
        let r = revise(&[a, b], &clf, &vae, 0.1, &config()).unwrap();
        let oracle = [grid_minimizer(a, 0.1), b];
        let err = r
            .counterfactual
            .iter()
            .zip(oracle)
            .map(|(x, o)| (x - o).abs())
            .fold(0.0, f64::max);
        if r.success && err <= 0.05 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn oracle_distance_shrinks_with_lambda() {
    let d: Vec<f64> = [1e-3, 1e-2, 0.1, 1.0]
        .iter()
        .map(|&l| grid_minimizer(-1.0, l) + 1.0)
        .collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
}
