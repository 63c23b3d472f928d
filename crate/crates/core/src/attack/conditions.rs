//! Regularity conditions of attack losses: measurement over a region,
//! step-size rules, rate certificates, property checkers and the
//! unique-minimum probe.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::fixtures::{ball_point, ScalarObjective};
use crate::attack::model::{attack_gd, AttackProblem, AttackTrajectory};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm, sub, sym_eig_extremes, singular_values};
use crate::rng::{derive_stream, domain, rng_from_seed, Rng};
use crate::sketch::SketchOperator;

/// Relative slack applied by every checker and by the pairwise estimates.
pub const CHECK_SLACK: f64 = 1e-9;

/// Kernel eigenvalue below which `θ₁` is reported as singular.
pub const SINGULAR_KERNEL: f64 = 1e-8;

/// Smallest singular value below which a sketch is treated as rank deficient.
pub const RANK_DEFICIENT: f64 = 1e-10;

/// Spread below which the probe reports a unique minimum.
pub const UNIQUE_SPREAD: f64 = 1e-6;

fn excess(lhs: f64, rhs: f64) -> Option<f64> {
    let r = lhs - rhs;
    (r > CHECK_SLACK * (1.0 + lhs.abs().max(rhs.abs()))).then_some(r)
}

/// Closed ball in input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Region {
    /// Uniform draw from the ball.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u = ball_point(rng, self.center.len(), self.radius);
        self.center.iter().zip(&u).map(|(c, v)| c + v).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        dist_sq(x, &self.center).sqrt() <= self.radius * (1.0 + 1e-12)
    }

    fn clamp(&self, x: &mut [f64]) {
        let off = sub(x, &self.center);
        let n = norm(&off);
        if n > self.radius {
            for i in 0..x.len() {
                x[i] = self.center[i] + off[i] * self.radius / n;
            }
        }
    }
}

/// An attack loss restricted to a region, viewed as a [`ScalarObjective`].
#[derive(Debug, Clone)]
pub struct RegionLoss<'a> {
    pub problem: &'a AttackProblem,
    pub region: &'a Region,
}

impl ScalarObjective for RegionLoss<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.problem.loss(x).unwrap_or(f64::NAN)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.problem.grad(x).unwrap_or_else(|_| vec![f64::NAN; x.len()])
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        self.region.sample(rng)
    }
    fn project(&self, x: &mut [f64]) {
        self.region.clamp(x)
    }
    fn diameter(&self) -> f64 {
        2.0 * self.region.radius
    }
}

/// Constants measured over a region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionEstimates {
    /// `sup ‖J(x)‖₂`.
    pub beta: f64,
    /// `inf √λ_min(K(x))`.
    pub theta1: f64,
    /// `sup √λ_max(K(x))`.
    pub theta2: f64,
    /// `inf 2√λ_min(R K Rᵀ)`: lower non-critical constant of `L`.
    pub nc1: f64,
    /// `sup 2√λ_max(R K Rᵀ)`: upper non-critical constant of `L`.
    pub nc2: f64,
    /// Semi-smoothness `a` beyond the quadratic term `b`.
    pub a: f64,
    /// `sup λ_max(∇²L)/2`.
    pub b: f64,
    pub p: f64,
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Semi-strong-convexity `c` beyond the quadratic term `d_sc`.
    pub c: f64,
    /// `inf λ_min(∇²L)/2`.
    pub d_sc: f64,
    /// Semi-Lipschitz `α` beyond the linear term `β_sl`.
    pub alpha_sl: f64,
    /// `sup ‖∇²L(x)‖₂`.
    pub beta_sl: f64,
    pub singular_kernel: bool,
    pub samples: usize,
}

/// Constants entering the cost-convergence step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub theta1: f64,
    pub theta2: f64,
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

impl ConditionEstimates {
    /// Rate constants measured directly on `L`.
    pub fn measured_rate(&self) -> RateConstants {
        RateConstants {
            theta1: self.nc1,
            theta2: self.nc2,
            a: self.a,
            b: self.b,
            p: self.p,
        }
    }

    /// Rate constants of the unsketched lemma: non-critical `(θ₁, θ₂)` and
    /// semi-smooth `(2(β + θ₂), β, ½)`.
    pub fn lemma_rate(&self) -> RateConstants {
        RateConstants {
            theta1: self.theta1,
            theta2: self.theta2,
            a: 2.0 * (self.beta + self.theta2),
            b: self.beta,
            p: 0.5,
        }
    }
}

/// `√λ_min` and `√λ_max` of `K(x)` over `center` and `samples` draws.
pub fn estimate_thetas(problem: &AttackProblem, region: &Region, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let points = region_points(region, samples, seed);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for x in &points {
        let (a, b) = sym_eig_extremes(&problem.pseudo_kernel(x)?);
        lo = lo.min(a.max(0.0));
        hi = hi.max(b);
    }
    Ok((lo.sqrt(), hi.sqrt()))
}

fn region_points(region: &Region, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(derive_stream(seed, domain::SAMPLER, 0));
    std::iter::once(region.center.clone())
        .chain((0..samples).map(|_| region.sample(&mut rng)))
        .collect()
}

fn region_pairs(region: &Region, samples: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = rng_from_seed(derive_stream(seed, domain::SAMPLER, 1));
    (0..samples)
        .map(|_| {
            let x = region.sample(&mut rng);
            let y = if rng.random::<bool>() {
                region.sample(&mut rng)
            } else {
                let mut y = x.clone();
                let r = region.radius * 10f64.powf(-4.0 * rng.random::<f64>());
                let u = ball_point(&mut rng, x.len(), r);
                for i in 0..y.len() {
                    y[i] += u[i];
                }
                region.clamp(&mut y);
                y
            };
            (x, y)
        })
        .collect()
}

/// Measures every condition constant of `problem` over `region` from the
/// centre plus `samples` point draws and `samples` pair draws, with
/// `p = ½`.
pub fn measure_conditions(problem: &AttackProblem, region: &Region, samples: usize, seed: u64) -> Result<ConditionEstimates> {
    if region.center.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: region.center.len(),
        });
    }
    let p = 0.5;
    let stats = match &problem.sketch {
        Some(op) => sketch_stats(op)?,
        None => SketchStats {
            tau: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
        },
    };
    let points = region_points(region, samples, seed);
    let per_point: Vec<[f64; 7]> = points
        .par_iter()
        .map(|x| -> Result<[f64; 7]> {
            let j = problem.model.jacobian(x)?;
            let beta = singular_values(&j).first().copied().unwrap_or(0.0);
            let (k_lo, k_hi) = sym_eig_extremes(&problem.pseudo_kernel(x)?);
            let (s_lo, s_hi) = sym_eig_extremes(&problem.sketched_kernel(x)?);
            let (h_lo, h_hi) = sym_eig_extremes(&problem.hessian(x)?);
            Ok([beta, k_lo, k_hi, s_lo, s_hi, h_lo, h_hi])
        })
        .collect::<Result<_>>()?;
    let mut beta: f64 = 0.0;
    let (mut k_lo, mut k_hi) = (f64::INFINITY, 0.0f64);
    let (mut s_lo, mut s_hi) = (f64::INFINITY, 0.0f64);
    let (mut h_lo, mut h_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &per_point {
        beta = beta.max(v[0]);
        k_lo = k_lo.min(v[1]);
        k_hi = k_hi.max(v[2]);
        s_lo = s_lo.min(v[3]);
        s_hi = s_hi.max(v[4]);
        h_lo = h_lo.min(v[5]);
        h_hi = h_hi.max(v[6]);
    }
    let b = (h_hi / 2.0).max(0.0);
    let d_sc = h_lo / 2.0;
    let beta_sl = h_lo.abs().max(h_hi.abs());

    let f = RegionLoss { problem, region };
    let pairs = region_pairs(region, samples, seed);
    let (mut a, mut c, mut alpha_sq): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let dxy = dist_sq(x, y).sqrt();
        if dxy == 0.0 {
            continue;
        }
        let (lx, ly) = (f.value(x), f.value(y));
        let (gx, gy) = (f.grad(x), f.grad(y));
        let dyx = sub(y, x);
        let ss_rhs = lx + dot(&gx, &dyx) + b * dxy * dxy;
        if let Some(r) = excess(ly, ss_rhs) {
            a = a.max(r / (dxy.powf(2.0 - 2.0 * p) * lx.max(0.0).powf(p)));
        }
        let sc_rhs = ly + dot(&gy, &sub(x, y)) + d_sc * dxy * dxy;
        if let Some(r) = excess(sc_rhs, lx) {
            c = c.max(r / (dxy.powf(2.0 - 2.0 * p) * ly.max(0.0).powf(p)));
        }
        let gdiff = dist_sq(&gx, &gy);
        if let Some(r) = excess(gdiff, beta_sl * beta_sl * dxy * dxy) {
            alpha_sq = alpha_sq.max(r / (dxy.powf(2.0 - 2.0 * p) * lx.max(0.0).powf(p)));
        }
    }
    let singular_kernel = k_lo < SINGULAR_KERNEL;
    Ok(ConditionEstimates {
        beta,
        theta1: k_lo.max(0.0).sqrt(),
        theta2: k_hi.sqrt(),
        nc1: 2.0 * s_lo.max(0.0).sqrt(),
        nc2: 2.0 * s_hi.sqrt(),
        a,
        b,
        p,
        tau: stats.tau,
        gamma1: stats.gamma1,
        gamma2: stats.gamma2,
        c,
        d_sc,
        alpha_sl: alpha_sq.sqrt(),
        beta_sl,
        singular_kernel,
        samples: points.len(),
    })
}

/// Step size and contraction of the cost-convergence rule:
/// `η = (θ₁² − aθ₂^{2−2p}) / (2bθ₂²)` and `γ = η(θ₁² − aθ₂^{2−2p})/2`.
pub fn step_size_rule(rc: &RateConstants) -> Result<(f64, f64)> {
    let margin = rc.theta1 * rc.theta1 - rc.a * rc.theta2.powf(2.0 - 2.0 * rc.p);
    if !(margin > 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "θ₁² = {} does not exceed a·θ₂^(2−2p) = {}",
            rc.theta1 * rc.theta1,
            rc.a * rc.theta2.powf(2.0 - 2.0 * rc.p)
        )));
    }
    if !(rc.b > 0.0 && rc.theta2 > 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "b = {} and θ₂ = {} must be positive",
            rc.b, rc.theta2
        )));
    }
    let eta = margin / (2.0 * rc.b * rc.theta2 * rc.theta2);
    Ok((eta, eta * margin / 2.0))
}

/// Extreme singular values of a drawn sketch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SketchStats {
    /// `‖R‖₂`.
    pub tau: f64,
    /// Smallest singular value of `R`.
    pub gamma1: f64,
    /// Largest singular value of `R`.
    pub gamma2: f64,
}

/// Singular-value statistics of `op`; `RankDeficient` when its smallest
/// singular value is below [`RANK_DEFICIENT`].
pub fn sketch_stats(op: &SketchOperator) -> Result<SketchStats> {
    let sv = singular_values(&op.to_dense());
    let gamma2 = sv.first().copied().unwrap_or(0.0);
    let gamma1 = sv.last().copied().unwrap_or(0.0);
    if gamma1 < RANK_DEFICIENT {
        return Err(Error::RankDeficient { gamma1 });
    }
    Ok(SketchStats {
        tau: gamma2,
        gamma1,
        gamma2,
    })
}

/// Rate constants of the sketched lemma: non-critical `(2θ₁γ₁, 2θ₂γ₂)` and
/// semi-smooth `(2τβ + 2θ₂γ₂, τ²β, ½)`.
pub fn sketched_constants(est: &ConditionEstimates, stats: &SketchStats) -> RateConstants {
    RateConstants {
        theta1: 2.0 * est.theta1 * stats.gamma1,
        theta2: 2.0 * est.theta2 * stats.gamma2,
        a: 2.0 * stats.tau * est.beta + 2.0 * est.theta2 * stats.gamma2,
        b: stats.tau * stats.tau * est.beta,
        p: 0.5,
    }
}

/// Result of checking a trajectory against a linear contraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCertificate {
    pub worst_ratio: f64,
    pub bound: f64,
    pub steps_checked: usize,
    pub pass: bool,
    /// Every iterate stayed in the region, when one was given.
    pub in_region: bool,
}

/// Checks `(L_{t+1} − L*) ≤ (1 − γ)(L_t − L*)` on every step whose
/// `L_t − L*` is at least `floor`.
pub fn rate_certificate(
    traj: &AttackTrajectory,
    gamma: f64,
    l_star: f64,
    floor: f64,
    region: Option<&Region>,
) -> RateCertificate {
    let bound = 1.0 - gamma;
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    let mut pass = true;
    for w in traj.losses.windows(2) {
        let (cur, next) = (w[0] - l_star, w[1] - l_star);
        if cur < floor {
            break;
        }
        let ratio = next / cur;
        worst = worst.max(ratio);
        steps += 1;
        if excess(next, bound * cur).is_some() {
            pass = false;
        }
    }
    let in_region = region.is_none_or(|r| traj.xs.iter().all(|x| r.contains(x)));
    RateCertificate {
        worst_ratio: worst,
        bound,
        steps_checked: steps,
        pass: pass && in_region,
        in_region,
    }
}

/// `(ζ, ξ)` of the solution-convergence rule:
/// `ζ = (θ₁/(θ₁ − α^{1/p}))·β²` and
/// `ξ = 2(d − c^{1/(2p)} θ₁^{−1/p} ζ − c^{1/(2−2p)} (α/θ₁^p)^{1/(1−p)})`.
pub fn solution_constants(est: &ConditionEstimates) -> Result<(f64, f64)> {
    let p = est.p;
    let theta1 = est.nc1;
    let alpha = est.alpha_sl;
    let gap = theta1 - alpha.powf(1.0 / p);
    if !(gap > 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "θ₁ = {theta1} does not exceed α^(1/p) = {}",
            alpha.powf(1.0 / p)
        )));
    }
    let zeta = theta1 / gap * est.beta_sl * est.beta_sl;
    let xi = 2.0
        * (est.d_sc
            - est.c.powf(1.0 / (2.0 * p)) * theta1.powf(-1.0 / p) * zeta
            - est.c.powf(1.0 / (2.0 - 2.0 * p)) * (alpha / theta1.powf(p)).powf(1.0 / (1.0 - p)));
    Ok((zeta, xi))
}

/// Step size `η = ξ/(2ζ)` and contraction `γ = ξη/2` of the
/// solution-convergence rule; `HypothesisViolated` unless `ξ > 0`.
pub fn solution_step_rule(est: &ConditionEstimates) -> Result<(f64, f64)> {
    let (zeta, xi) = solution_constants(est)?;
    if !(xi > 0.0 && zeta > 0.0) {
        return Err(Error::HypothesisViolated(format!("ξ = {xi} must be positive")));
    }
    let eta = xi / (2.0 * zeta);
    Ok((eta, xi * eta / 2.0))
}

/// A point (or pair) at which a checked inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub residual: f64,
}

fn violation(x: &[f64], y: Option<&[f64]>, residual: f64) -> Violation {
    Violation {
        x: x.to_vec(),
        y: y.map(|v| v.to_vec()),
        residual,
    }
}

fn lp(v: f64, p: f64) -> f64 {
    v.max(0.0).powf(p)
}

/// `L(y) ≤ L(x) + ⟨∇L(x), y − x⟩ + b‖y − x‖² + a‖y − x‖^{2−2p} L(x)^p`.
pub fn check_semi_smooth(
    f: &dyn ScalarObjective,
    a: f64,
    b: f64,
    p: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Vec<Violation> {
    pairs
        .iter()
        .filter_map(|(x, y)| {
            let dy = sub(y, x);
            let r = norm(&dy);
            let lx = f.value(x);
            let rhs = lx + dot(&f.grad(x), &dy) + b * r * r + a * r.powf(2.0 - 2.0 * p) * lp(lx, p);
            excess(f.value(y), rhs).map(|e| violation(x, Some(y), e))
        })
        .collect()
}

/// `θ₁² L(x) ≤ ‖∇L(x)‖² ≤ θ₂² L(x)`.
pub fn check_non_critical(f: &dyn ScalarObjective, theta1: f64, theta2: f64, points: &[Vec<f64>]) -> Vec<Violation> {
    points
        .iter()
        .filter_map(|x| {
            let lx = f.value(x);
            let g = f.grad(x);
            let gn = dot(&g, &g);
            excess(theta1 * theta1 * lx, gn)
                .or_else(|| excess(gn, theta2 * theta2 * lx))
                .map(|e| violation(x, None, e))
        })
        .collect()
}

/// `‖∇L(x) − ∇L(y)‖² ≤ β²‖x − y‖² + α²‖x − y‖^{2−2p} L(x)^p`.
pub fn check_semi_lipschitz(
    f: &dyn ScalarObjective,
    alpha: f64,
    beta: f64,
    p: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Vec<Violation> {
    pairs
        .iter()
        .filter_map(|(x, y)| {
            let r = dist_sq(x, y).sqrt();
            let lhs = dist_sq(&f.grad(x), &f.grad(y));
            let rhs = beta * beta * r * r + alpha * alpha * r.powf(2.0 - 2.0 * p) * lp(f.value(x), p);
            excess(lhs, rhs).map(|e| violation(x, Some(y), e))
        })
        .collect()
}

/// `L(x) ≥ L(y) + ⟨∇L(y), x − y⟩ + d‖x − y‖² − c‖x − y‖^{2−2p} L(y)^p`.
pub fn check_semi_strong_convex(
    f: &dyn ScalarObjective,
    c: f64,
    d: f64,
    p: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Vec<Violation> {
    pairs
        .iter()
        .filter_map(|(x, y)| {
            let dx = sub(x, y);
            let r = norm(&dx);
            let ly = f.value(y);
            let rhs = ly + dot(&f.grad(y), &dx) + d * r * r - c * r.powf(2.0 - 2.0 * p) * lp(ly, p);
            excess(rhs, f.value(x)).map(|e| violation(x, Some(y), e))
        })
        .collect()
}

/// Outcome of running the attack from several starts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueMinReport {
    pub finals: Vec<Vec<f64>>,
    pub final_losses: Vec<f64>,
    /// Largest pairwise distance between final iterates.
    pub spread: f64,
    pub unique: bool,
    /// The solution-convergence hypotheses hold for the measured constants.
    pub hypotheses_hold: bool,
}

/// Runs gradient descent from `multi_start` draws in `region` and reports
/// how far apart the limits are.
pub fn unique_minimum_probe(
    problem: &AttackProblem,
    est: &ConditionEstimates,
    region: &Region,
    multi_start: usize,
    eta: f64,
    steps: usize,
    seed: u64,
) -> Result<UniqueMinReport> {
    if multi_start == 0 {
        return Err(Error::EmptyList);
    }
    let starts: Vec<Vec<f64>> = (0..multi_start)
        .map(|i| {
            let mut rng = rng_from_seed(derive_stream(seed, domain::ATTACK, 1 + i as u64));
            region.sample(&mut rng)
        })
        .collect();
    let runs: Vec<AttackTrajectory> = starts
        .par_iter()
        .map(|x0| attack_gd(problem, x0, eta, steps))
        .collect::<Result<_>>()?;
    let finals: Vec<Vec<f64>> = runs.iter().map(|t| t.last().to_vec()).collect();
    let final_losses = runs.iter().map(|t| *t.losses.last().unwrap_or(&f64::NAN)).collect();
    let mut spread: f64 = 0.0;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            spread = spread.max(dist_sq(&finals[i], &finals[j]).sqrt());
        }
    }
    Ok(UniqueMinReport {
        finals,
        final_losses,
        spread,
        unique: spread <= UNIQUE_SPREAD,
        hypotheses_hold: !est.singular_kernel && solution_step_rule(est).is_ok(),
    })
}
