//! Monte-Carlo certification of coordinate-wise embedding statistics.
//!
//! A family is an `a`-coordinate-wise embedding when, for fixed `g, h`,
//! `E[gᵀRᵀRh] = gᵀh` and `E[(gᵀRᵀRh)²] ≤ (gᵀh)² + (a/b)‖g‖²‖h‖²`.
//! The estimators here draw fresh operators (one per round index of the
//! spec's seed schedule) and compare sample statistics with these targets
//! using `z = 5` standard-error bands.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::rng::{derive_stream, domain, rng_from_seed};
use crate::sketch::{alpha_param, cwe_constant, SketchKind, SketchOperator, SketchSpec};

/// Width of the acceptance band in standard errors.
pub const Z: f64 = 5.0;

/// Sample mean and standard error of a sequence, summed in index order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if let Some(&first) = xs.first() {
        if xs.iter().all(|&x| x == first) {
            return (first, 0.0);
        }
    }
    let n = xs.len() as f64;
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    let mean = s / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for x in xs {
        let t = x - mean;
        ss += t * t;
    }
    let sd = (ss / (n - 1.0)).sqrt();
    (mean, sd / n.sqrt())
}

/// Applies `f` to the operators of rounds `0..n`, in parallel, returning the
/// results in round order.
pub fn map_draws<T, F>(spec: SketchSpec, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&SketchOperator) -> Result<T> + Sync,
{
    spec.validate()?;
    (0..n)
        .into_par_iter()
        .map(|t| {
            let op = SketchOperator::build(spec, t as u64)?;
            f(&op)
        })
        .collect()
}

fn check_dims(spec: &SketchSpec, g: &[f64], h: &[f64]) -> Result<()> {
    for v in [g, h] {
        if v.len() != spec.d {
            return Err(Error::DimensionMismatch {
                expected: spec.d,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn bilinear_samples(spec: SketchSpec, g: &[f64], h: &[f64], n: usize) -> Result<Vec<f64>> {
    check_dims(&spec, g, h)?;
    map_draws(spec, n, |op| Ok(dot(&op.sk(g)?, &op.sk(h)?)))
}

/// Sample mean and standard error of `gᵀRᵀRh`.
pub fn estimate_first_moment(
    spec: SketchSpec,
    g: &[f64],
    h: &[f64],
    n_samples: usize,
) -> Result<(f64, f64)> {
    if n_samples < 100 {
        return Err(Error::InvalidParam("n_samples must be at least 100".into()));
    }
    let xs = bilinear_samples(spec, g, h, n_samples)?;
    Ok(mean_stderr(&xs))
}

/// Estimated second moment with its standard error and the family bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMoment {
    pub second_moment: f64,
    pub stderr: f64,
    pub bound: f64,
}

/// `(gᵀh)² + (a/b)‖g‖²‖h‖²`.
pub fn second_moment_bound(a: f64, b: usize, g: &[f64], h: &[f64]) -> f64 {
    let gh = dot(g, h);
    gh * gh + a / b as f64 * norm_sq(g) * norm_sq(h)
}

/// Sample mean of `(gᵀRᵀRh)²` and the bound with the family constant.
pub fn estimate_second_moment(
    spec: SketchSpec,
    g: &[f64],
    h: &[f64],
    n_samples: usize,
) -> Result<SecondMoment> {
    if n_samples < 1000 {
        return Err(Error::InvalidParam("n_samples must be at least 1000".into()));
    }
    let xs = bilinear_samples(spec, g, h, n_samples)?;
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let (m, se) = mean_stderr(&sq);
    let a = cwe_constant(spec.kind, spec.d).unwrap_or(0.0);
    Ok(SecondMoment {
        second_moment: m,
        stderr: se,
        bound: second_moment_bound(a, spec.b_sketch, g, h),
    })
}

/// First- and second-moment comparison for one vector pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub kind: SketchKind,
    pub pair: String,
    pub d: usize,
    pub b: usize,
    pub a: f64,
    pub n_samples: usize,
    pub empirical_mean: f64,
    pub target: f64,
    pub stderr: f64,
    pub empirical_second_moment: f64,
    pub second_moment_bound: f64,
    pub stderr2: f64,
    pub first_moment_pass: bool,
    pub second_moment_pass: bool,
    pub pass: bool,
}

fn within(diff: f64, stderr: f64) -> bool {
    diff <= Z * stderr + 1e-12 * (1.0 + stderr)
}

/// Builds a [`MomentReport`] from the samples `x_t = gᵀR_tᵀR_th` with the
/// second-moment constant `a`.
pub fn moment_report_from_samples(
    spec: &SketchSpec,
    pair: &str,
    g: &[f64],
    h: &[f64],
    xs: &[f64],
    a: f64,
) -> MomentReport {
    let (mean, stderr) = mean_stderr(xs);
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let (m2, stderr2) = mean_stderr(&sq);
    let target = dot(g, h);
    let bound = second_moment_bound(a, spec.b_sketch, g, h);
    let first = within((mean - target).abs(), stderr);
    let second = m2 <= bound + Z * stderr2 + 1e-12 * bound.abs().max(1.0);
    MomentReport {
        kind: spec.kind,
        pair: pair.to_string(),
        d: spec.d,
        b: spec.b_sketch,
        a,
        n_samples: xs.len(),
        empirical_mean: mean,
        target,
        stderr,
        empirical_second_moment: m2,
        second_moment_bound: bound,
        stderr2,
        first_moment_pass: first,
        second_moment_pass: second,
        pass: first && second,
    }
}

/// Moment report for one pair with an explicit constant `a`.
pub fn moment_report(
    spec: SketchSpec,
    pair: &str,
    g: &[f64],
    h: &[f64],
    n_samples: usize,
    a: f64,
) -> Result<MomentReport> {
    let xs = bilinear_samples(spec, g, h, n_samples)?;
    Ok(moment_report_from_samples(&spec, pair, g, h, &xs, a))
}

/// Empirical tail probability of `|gᵀRᵀRh − gᵀh| ≥ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub kind: SketchKind,
    pub threshold: f64,
    pub empirical_exceed_prob: f64,
    pub claimed_delta: f64,
    pub n_samples: usize,
}

impl TailReport {
    /// Whether the empirical probability is at most ten times the claim.
    pub fn pass(&self) -> bool {
        self.empirical_exceed_prob <= 10.0 * self.claimed_delta
    }
}

/// Tail threshold of the family at failure probability `delta`, or `None`
/// for the identity sketch (which never deviates).
///
/// The count-sketch threshold uses the `1/√(bδ)` form; its alternative
/// `log(1/δ)` form is given by [`count_sketch_log_threshold`].
pub fn tail_threshold(spec: &SketchSpec, delta: f64, g: &[f64], h: &[f64]) -> Option<f64> {
    let n = spec.d as f64;
    let b = spec.b_sketch as f64;
    let gh = norm(g) * norm(h);
    let polylog = (n / delta).ln().powf(1.5);
    match spec.kind {
        SketchKind::Gaussian | SketchKind::Srht | SketchKind::Ams => Some(polylog / b.sqrt() * gh),
        SketchKind::CountSketch => Some(gh / (b * delta).sqrt()),
        SketchKind::SparseEmbedding(s) => Some(polylog / (s as f64).sqrt() * gh),
        SketchKind::UniformSampling => Some((1.0 + n / b) * gh),
        SketchKind::Identity => None,
    }
}

/// Alternative count-sketch tail threshold `log(1/δ)·‖g‖‖h‖`.
pub fn count_sketch_log_threshold(delta: f64, g: &[f64], h: &[f64]) -> f64 {
    (1.0 / delta).ln() * norm(g) * norm(h)
}

/// Fraction of draws with `|gᵀRᵀRh − gᵀh| ≥ threshold`.
pub fn estimate_tail(
    spec: SketchSpec,
    g: &[f64],
    h: &[f64],
    threshold: f64,
    claimed_delta: f64,
    n_samples: usize,
) -> Result<TailReport> {
    if threshold <= 0.0 {
        return Err(Error::InvalidParam("threshold must be positive".into()));
    }
    let xs = bilinear_samples(spec, g, h, n_samples)?;
    let target = dot(g, h);
    let exceed = xs.iter().filter(|x| (*x - target).abs() >= threshold).count();
    Ok(TailReport {
        kind: spec.kind,
        threshold,
        empirical_exceed_prob: exceed as f64 / n_samples as f64,
        claimed_delta,
        n_samples,
    })
}

/// Named test vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub vectors: Vec<(String, Vec<f64>)>,
    pub pairs: Vec<(String, usize, usize)>,
}

fn unit_random(d: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}

/// Fixed vector battery: two axis vectors, a flat vector, two random unit
/// vectors and a unit vector orthogonal to the first random one. Pairs cover
/// axis, parallel, orthogonal and generic configurations.
pub fn battery(d: usize, seed: u64) -> Battery {
    let mut rng = rng_from_seed(derive_stream(seed, domain::BATTERY, d as u64));
    let mut e0 = vec![0.0; d];
    e0[0] = 1.0;
    let mut elast = vec![0.0; d];
    elast[d - 1] = 1.0;
    let flat = vec![1.0 / (d as f64).sqrt(); d];
    let g = unit_random(d, &mut rng);
    let h = unit_random(d, &mut rng);
    let mut o = unit_random(d, &mut rng);
    let c = dot(&o, &g);
    for i in 0..d {
        o[i] -= c * g[i];
    }
    let on = norm(&o);
    for x in o.iter_mut() {
        *x /= on;
    }
    let vectors = vec![
        ("e_first".to_string(), e0),
        ("e_last".to_string(), elast),
        ("flat".to_string(), flat),
        ("random_g".to_string(), g),
        ("random_h".to_string(), h),
        ("orthogonal_to_g".to_string(), o),
    ];
    let mut pairs = vec![
        ("axis_parallel".to_string(), 0, 0),
        ("flat_parallel".to_string(), 2, 2),
        ("random_parallel".to_string(), 3, 3),
        ("random_generic".to_string(), 3, 4),
        ("random_orthogonal".to_string(), 3, 5),
        ("flat_vs_random".to_string(), 2, 4),
    ];
    if d > 1 {
        pairs.insert(1, ("axis_orthogonal".to_string(), 0, 1));
    }
    Battery { vectors, pairs }
}

/// Coordinate-wise unbiasedness and norm inflation of `RᵀRh` for one vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramReport {
    pub vector: String,
    /// Largest `|mean_i − h_i| / stderr_i` over coordinates.
    pub max_z: f64,
    pub unbiased_pass: bool,
    pub mean_norm_sq: f64,
    pub stderr_norm_sq: f64,
    /// `(1 + α)‖h‖²`.
    pub norm_bound: f64,
    pub norm_pass: bool,
}

/// Full battery report for one spec.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub kind: SketchKind,
    pub d: usize,
    pub b: usize,
    pub alpha: f64,
    pub alpha_certified: bool,
    pub trials: usize,
    pub moments: Vec<MomentReport>,
    pub gram: Vec<GramReport>,
}

impl EmbeddingReport {
    pub fn pass(&self) -> bool {
        self.moments.iter().all(|m| m.pass)
            && self.gram.iter().all(|g| g.unbiased_pass && g.norm_pass)
    }
}

/// Certifies a family over the fixed battery with `trials` operator draws.
///
/// Every draw sketches all battery vectors once; moment statistics for all
/// pairs and the Gram-vector statistics `RᵀRh` come from the same draws.
pub fn verify_embedding(spec: SketchSpec, trials: usize, rng_seed: u64) -> Result<EmbeddingReport> {
    verify_embedding_with(spec, trials, rng_seed, None)
}

/// [`verify_embedding`] with an explicit second-moment constant `a` in
/// place of the family constant.
pub fn verify_embedding_with(
    spec: SketchSpec,
    trials: usize,
    rng_seed: u64,
    a_override: Option<f64>,
) -> Result<EmbeddingReport> {
    spec.validate()?;
    let d = spec.d;
    let bat = battery(d, rng_seed);
    let (alpha, certified) = match alpha_param(spec.kind, d, spec.b_sketch) {
        Ok(a) => (a.value, a.certified),
        Err(_) => (0.0, true),
    };
    let a = a_override.unwrap_or_else(|| cwe_constant(spec.kind, d).unwrap_or(0.0));
    let gram_idx = [0usize, 2, 3];

    struct Draw {
        bilinear: Vec<f64>,
        gram: Vec<Vec<f64>>,
    }
    let draws = map_draws(spec, trials, |op| {
        let sketched: Vec<Vec<f64>> = bat
            .vectors
            .iter()
            .map(|(_, v)| op.sk(v))
            .collect::<Result<_>>()?;
        let bilinear = bat
            .pairs
            .iter()
            .map(|(_, i, j)| dot(&sketched[*i], &sketched[*j]))
            .collect();
        let gram = gram_idx
            .iter()
            .map(|&i| op.desk(&sketched[i]))
            .collect::<Result<_>>()?;
        Ok(Draw { bilinear, gram })
    })?;

    let mut moments = Vec::new();
    for (p, (name, i, j)) in bat.pairs.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|dr| dr.bilinear[p]).collect();
        moments.push(moment_report_from_samples(
            &spec,
            name,
            &bat.vectors[*i].1,
            &bat.vectors[*j].1,
            &xs,
            a,
        ));
    }

    let mut gram = Vec::new();
    for (q, &i) in gram_idx.iter().enumerate() {
        let (name, h) = &bat.vectors[i];
        let mut max_z: f64 = 0.0;
        let mut unbiased = true;
        let mut col = vec![0.0; trials];
        for c in 0..d {
            for (t, dr) in draws.iter().enumerate() {
                col[t] = dr.gram[q][c];
            }
            let (m, se) = mean_stderr(&col);
            let dev = (m - h[c]).abs();
            if se > 0.0 {
                max_z = max_z.max(dev / se);
            }
            if !within(dev, se) {
                unbiased = false;
            }
        }
        let norms: Vec<f64> = draws.iter().map(|dr| norm_sq(&dr.gram[q])).collect();
        let (mn, sn) = mean_stderr(&norms);
        let bound = (1.0 + alpha) * norm_sq(h);
        gram.push(GramReport {
            vector: name.clone(),
            max_z,
            unbiased_pass: unbiased,
            mean_norm_sq: mn,
            stderr_norm_sq: sn,
            norm_bound: bound,
            norm_pass: mn <= bound + Z * sn + 1e-12 * bound,
        });
    }

    Ok(EmbeddingReport {
        kind: spec.kind,
        d,
        b: spec.b_sketch,
        alpha,
        alpha_certified: certified,
        trials,
        moments,
        gram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_first_moment_is_exact() {
        let spec = SketchSpec::new(SketchKind::Identity, 8, 8, 1);
        let mut e = vec![0.0; 8];
        e[0] = 1.0;
        let (m, se) = estimate_first_moment(spec, &e, &e, 100).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn identity_second_moment_is_exact() {
        let spec = SketchSpec::new(SketchKind::Identity, 4, 4, 1);
        let g = [1.0, 2.0, 0.0, -1.0];
        let h = [0.5, 0.0, 1.0, 1.0];
        let r = estimate_second_moment(spec, &g, &h, 1000).unwrap();
        assert_eq!(r.second_moment, dot(&g, &h).powi(2));
    }

    #[test]
    fn uniform_bound_uses_dimension_constant() {
        let spec = SketchSpec::new(SketchKind::UniformSampling, 64, 8, 1);
        let g = vec![1.0 / 8.0; 64];
        let r = estimate_second_moment(spec, &g, &g, 1000).unwrap();
        assert!((r.bound - (1.0 + 64.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_never_exceeds_tail() {
        let spec = SketchSpec::new(SketchKind::Identity, 4, 4, 1);
        let g = [1.0, 0.0, 0.0, 0.0];
        let r = estimate_tail(spec, &g, &g, 1e-9, 0.01, 200).unwrap();
        assert_eq!(r.empirical_exceed_prob, 0.0);
    }

    #[test]
    fn identity_embedding_passes_with_zero_slack() {
        let spec = SketchSpec::new(SketchKind::Identity, 16, 16, 3);
        let r = verify_embedding(spec, 200, 9).unwrap();
        assert!(r.pass());
        for m in &r.moments {
            assert_eq!(m.stderr, 0.0);
            assert!((m.empirical_mean - m.target).abs() < 1e-15);
        }
    }

    #[test]
    fn battery_contains_required_pair_types() {
        let b = battery(16, 0);
        let names: Vec<&str> = b.pairs.iter().map(|p| p.0.as_str()).collect();
        for needed in ["axis_parallel", "axis_orthogonal", "random_orthogonal", "random_parallel"] {
            assert!(names.contains(&needed));
        }
        assert!(dot(&b.vectors[3].1, &b.vectors[5].1).abs() < 1e-14);
    }
}
