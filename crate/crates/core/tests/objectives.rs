use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;
use sketchfl::linalg::{dot, norm, sub};
use sketchfl::objectives::{gen_synthetic, Client, FederatedObjective, ObjectiveKind};
use sketchfl::rng::rng_from_seed;

fn random_vec(seed: u64, d: usize, scale: f64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn fixtures() -> Vec<(&'static str, FederatedObjective)> {
    vec![
        ("quadratic", gen_synthetic(ObjectiveKind::Quadratic, 4, 8, 64, 1.0, 3).unwrap()),
        ("quadratic_rank_deficient", gen_synthetic(ObjectiveKind::Quadratic, 3, 8, 4, 0.5, 4).unwrap()),
        ("log_cosh", gen_synthetic(ObjectiveKind::LogCosh, 4, 6, 32, 1.0, 5).unwrap()),
    ]
}

fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut p = w.to_vec();
            let mut m = w.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn smoothness_sandwich_holds_per_client(seed in any::<u64>(), scale in 0.01f64..10.0) {
        for (name, obj) in fixtures() {
            let (mu, l) = (obj.constants().mu, obj.constants().l);
            let x = random_vec(seed, obj.d, scale);
            let y = random_vec(seed ^ 0x5555, obj.d, scale);
            let r2 = sketchfl::linalg::dist_sq(&x, &y);
            for c in 0..obj.n_clients() {
                let fx = obj.value_client(c, &x).unwrap();
                let fy = obj.value_client(c, &y).unwrap();
                let g = obj.grad_client(c, &x).unwrap();
                let gap = fy - fx - dot(&g, &sub(&y, &x));
                let slack = 1e-9 * (1.0 + fx.abs() + fy.abs());
                prop_assert!(gap >= mu / 2.0 * r2 - slack, "{} client {}: {} < {}", name, c, gap, mu / 2.0 * r2);
                prop_assert!(gap <= l / 2.0 * r2 + slack, "{} client {}: {} > {}", name, c, gap, l / 2.0 * r2);
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (name, obj) in fixtures() {
        for s in 0..10 {
            let w = random_vec(100 + s, obj.d, 1.0);
            let fd = central_difference(|v| obj.value(v), &w, 1e-6);
            let g = obj.grad(&w);
            let err = norm(&sub(&fd, &g));
            assert!(err <= 1e-5 * norm(&g).max(1.0), "{name}: {err}");
            for c in 0..obj.n_clients() {
                let fd = central_difference(|v| obj.value_client(c, v).unwrap(), &w, 1e-6);
                let g = obj.grad_client(c, &w).unwrap();
                assert!(norm(&sub(&fd, &g)) <= 1e-5 * norm(&g).max(1.0), "{name} client {c}");
            }
        }
    }
}

#[test]
fn optimum_has_zero_gradient() {
    let obj = gen_synthetic(ObjectiveKind::Quadratic, 4, 8, 64, 1.0, 3).unwrap();
    assert!(norm(&obj.grad(&obj.optimum().w)) <= 1e-9);
    assert!(!obj.optimum().degenerate);
}

#[test]
fn heterogeneity_matches_direct_least_squares() {
    let obj = gen_synthetic(ObjectiveKind::Quadratic, 4, 8, 32, 1.0, 12).unwrap();
    let d = obj.d;
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut blocks = Vec::new();
    for c in &obj.clients {
        let Client::Quadratic(q) = c else { panic!("quadratic fixture") };
        let a = DMatrix::from_row_slice(q.n, d, &q.a);
        let b = DVector::from_column_slice(&q.b);
        h += a.transpose() * &a;
        rhs += a.transpose() * &b;
        blocks.push((a, b));
    }
    let w = h.lu().solve(&rhs).unwrap();
    let mut sigma_sq = 0.0;
    for (a, b) in &blocks {
        let g = a.transpose() * (a * &w - b);
        sigma_sq += g.norm_squared();
    }
    sigma_sq /= blocks.len() as f64;
    let got = obj.constants().sigma_sq;
    assert!((got - sigma_sq).abs() <= 1e-9 * sigma_sq.max(1.0), "{got} vs {sigma_sq}");
    for i in 0..d {
        assert!((obj.optimum().w[i] - w[i]).abs() <= 1e-9);
    }
}

#[test]
fn heterogeneity_vanishes_for_identical_or_single_clients() {
    let same = gen_synthetic(ObjectiveKind::Quadratic, 5, 6, 32, 0.0, 1).unwrap();
    assert!(same.constants().sigma_sq <= 1e-20);
    let single = gen_synthetic(ObjectiveKind::Quadratic, 1, 6, 32, 2.0, 1).unwrap();
    assert!(single.constants().sigma_sq <= 1e-20);
}

#[test]
fn per_sample_gradients_average_to_client_gradient() {
    for (name, obj) in fixtures() {
        let w = random_vec(9, obj.d, 1.0);
        for c in 0..obj.n_clients() {
            let n = obj.n_samples(c).unwrap();
            let mut mean = vec![0.0; obj.d];
            for i in 0..n {
                let g = obj.per_sample_grad(c, &w, i).unwrap();
                for j in 0..obj.d {
                    mean[j] += g[j] / n as f64;
                }
            }
            let g = obj.grad_client(c, &w).unwrap();
            assert!(norm(&sub(&mean, &g)) <= 1e-12 * norm(&g).max(1.0), "{name} client {c}");
        }
    }
}

#[test]
fn rank_deficient_fixture_uses_minimum_norm_optimum() {
    let obj = gen_synthetic(ObjectiveKind::Quadratic, 3, 8, 4, 0.5, 4).unwrap();
    assert!(obj.optimum().degenerate);
    assert!(obj.optimum_strict().is_err());
    assert!(obj.constants().mu.abs() < 1e-9);
    assert!(norm(&obj.grad(&obj.optimum().w)) <= 1e-9);
}

#[test]
fn log_cosh_gradient_bound_dominates_client_gradients() {
    let obj = gen_synthetic(ObjectiveKind::LogCosh, 4, 6, 32, 1.0, 5).unwrap();
    let g = obj.constants().g.unwrap();
    for s in 0..50 {
        let w = random_vec(s, obj.d, 5.0);
        for c in 0..obj.n_clients() {
            assert!(norm(&obj.grad_client(c, &w).unwrap()) <= g * (1.0 + 1e-12));
        }
    }
}

#[test]
fn fixture_data_round_trips() {
    for (_, obj) in fixtures() {
        let back = FederatedObjective::from_fixture_data(&obj.fixture_data()).unwrap();
        assert_eq!(back, obj);
    }
}
