use sketchfl::cwe::{
    battery, estimate_first_moment, estimate_second_moment, estimate_tail, tail_threshold, verify_embedding,
    verify_embedding_with,
};
use sketchfl::linalg::{dot, norm};
use sketchfl::sketch::{SketchKind, SketchSpec};

fn unit_pair(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let bat = battery(d, seed);
    let get = |name: &str| bat.vectors.iter().find(|(n, _)| n == name).unwrap().1.clone();
    (get("random_g"), get("random_h"))
}

fn orthogonal_pair(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let bat = battery(d, seed);
    let get = |name: &str| bat.vectors.iter().find(|(n, _)| n == name).unwrap().1.clone();
    (get("random_g"), get("orthogonal_to_g"))
}

#[test]
fn orthogonal_pairs_have_zero_mean_for_every_kind() {
    let (g, h) = orthogonal_pair(64, 4);
    assert!(dot(&g, &h).abs() < 1e-14);
    for kind in [
        SketchKind::Gaussian,
        SketchKind::Srht,
        SketchKind::Ams,
        SketchKind::CountSketch,
        SketchKind::SparseEmbedding(2),
    ] {
        let (mean, se) = estimate_first_moment(SketchSpec::new(kind, 64, 16, 1), &g, &h, 20_000).unwrap();
        assert!(mean.abs() <= 5.0 * se, "{kind:?}: mean {mean}, stderr {se}");
    }
}

#[test]
fn gaussian_first_moment_d256_b64() {
    let (g, h) = unit_pair(256, 2);
    let (mean, se) = estimate_first_moment(SketchSpec::new(SketchKind::Gaussian, 256, 64, 3), &g, &h, 20_000).unwrap();
    assert!((mean - dot(&g, &h)).abs() <= 5.0 * se);
}

#[test]
fn count_sketch_orthogonal_second_moment() {
    let (g, h) = orthogonal_pair(256, 6);
    let sm = estimate_second_moment(SketchSpec::new(SketchKind::CountSketch, 256, 64, 8), &g, &h, 50_000).unwrap();
    let bound = 3.0 / 64.0 + dot(&g, &h).powi(2);
    assert!((sm.bound - bound).abs() < 1e-12);
    assert!(sm.second_moment <= bound + 5.0 * sm.stderr, "{sm:?}");
}

#[test]
fn identity_second_moment_is_squared_inner_product() {
    let (g, h) = unit_pair(32, 1);
    let sm = estimate_second_moment(SketchSpec::new(SketchKind::Identity, 32, 32, 0), &g, &h, 1000).unwrap();
    assert_eq!(sm.second_moment, dot(&g, &h).powi(2));
    assert_eq!(sm.stderr, 0.0);
}

#[test]
fn uniform_sampling_never_exceeds_its_deterministic_threshold() {
    let (g, h) = unit_pair(64, 9);
    let spec = SketchSpec::new(SketchKind::UniformSampling, 64, 8, 2);
    let t = tail_threshold(&spec, 0.01, &g, &h).unwrap();
    assert!((t - (1.0 + 8.0) * norm(&g) * norm(&h)).abs() < 1e-12);
    let rep = estimate_tail(spec, &g, &h, t + 1e-9, 0.01, 20_000).unwrap();
    assert_eq!(rep.empirical_exceed_prob, 0.0);
}

#[test]
fn identity_never_exceeds_any_positive_threshold() {
    let (g, h) = unit_pair(16, 3);
    let spec = SketchSpec::new(SketchKind::Identity, 16, 16, 0);
    assert!(tail_threshold(&spec, 0.1, &g, &h).is_none());
    let rep = estimate_tail(spec, &g, &h, 1e-12, 0.1, 1000).unwrap();
    assert_eq!(rep.empirical_exceed_prob, 0.0);
}

#[test]
fn ams_tail_within_ten_delta() {
    let (g, h) = unit_pair(256, 5);
    let spec = SketchSpec::new(SketchKind::Ams, 256, 64, 12);
    let delta = 0.01;
    let t = tail_threshold(&spec, delta, &g, &h).unwrap();
    let rep = estimate_tail(spec, &g, &h, t, delta, 20_000).unwrap();
    assert!(rep.pass(), "{rep:?}");
}

#[test]
fn gram_norm_inflation_gaussian_and_srht_d128_b32() {
    for (kind, alpha) in [(SketchKind::Gaussian, 12.0), (SketchKind::Srht, 8.0)] {
        let rep = verify_embedding(SketchSpec::new(kind, 128, 32, 21), 20_000, 4).unwrap();
        assert_eq!(rep.alpha, alpha);
        for g in &rep.gram {
            assert!(g.norm_pass, "{kind:?} {g:?}");
            assert!((g.norm_bound - (1.0 + alpha)).abs() < 1e-9);
        }
    }
}

#[test]
fn identity_embedding_passes_everything_exactly() {
    let rep = verify_embedding(SketchSpec::new(SketchKind::Identity, 16, 16, 0), 200, 1).unwrap();
    assert!(rep.pass());
    assert!(rep.moments.iter().all(|m| m.stderr == 0.0 && m.empirical_mean == m.target));
}

#[test]
fn reports_are_deterministic() {
    let spec = SketchSpec::new(SketchKind::SparseEmbedding(2), 64, 16, 77);
    let a = verify_embedding_with(spec, 2000, 3, None).unwrap();
    let b = verify_embedding_with(spec, 2000, 3, None).unwrap();
    assert_eq!(a, b);
}
