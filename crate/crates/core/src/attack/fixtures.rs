//! Scalar test functions for the regularity checkers, with multi-scale
//! samplers that concentrate points near origins and kinks.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{dot, norm};
use crate::rng::Rng;

/// A differentiable function on a bounded domain.
pub trait ScalarObjective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    /// Draws a point of the domain.
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64>;
    /// Maps a point back into the domain.
    fn project(&self, x: &mut [f64]);
    /// Diameter of the domain, used to scale pair offsets.
    fn diameter(&self) -> f64;
}

fn unit_vector(rng: &mut Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// `10^{−U(0, decades)}`.
fn log_uniform(rng: &mut Rng, decades: f64) -> f64 {
    10f64.powf(-decades * rng.random::<f64>())
}

/// Uniform point in the ball of radius `r` around the origin.
pub fn ball_point(rng: &mut Rng, m: usize, r: f64) -> Vec<f64> {
    let u = unit_vector(rng, m);
    let s = r * rng.random::<f64>().powf(1.0 / m as f64);
    u.iter().map(|x| s * x).collect()
}

/// Point at a log-uniform radius in `[r·10⁻⁶, r]`.
pub fn shell_point(rng: &mut Rng, m: usize, r: f64) -> Vec<f64> {
    let u = unit_vector(rng, m);
    let s = r * log_uniform(rng, 6.0);
    u.iter().map(|x| s * x).collect()
}

fn clamp_ball(x: &mut [f64], r: f64) {
    let n = norm(x);
    if n > r {
        for xi in x.iter_mut() {
            *xi *= r / n;
        }
    }
}

/// Pairs `(x, x + δv)` with `δ` log-uniform over six decades below the
/// domain diameter and `v` a random unit direction, projected into the
/// domain.
pub fn sample_pairs(f: &dyn ScalarObjective, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
    let m = f.dim();
    (0..n)
        .map(|_| {
            let x = f.sample_point(rng);
            let v = unit_vector(rng, m);
            let delta = f.diameter() * log_uniform(rng, 6.0);
            let mut y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
            f.project(&mut y);
            (x, y)
        })
        .collect()
}

/// Points drawn with [`ScalarObjective::sample_point`].
pub fn sample_points(f: &dyn ScalarObjective, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| f.sample_point(rng)).collect()
}

/// `‖x‖²` on a ball.
#[derive(Debug, Clone)]
pub struct SquaredNorm {
    pub m: usize,
    pub radius: f64,
}

impl ScalarObjective for SquaredNorm {
    fn dim(&self) -> usize {
        self.m
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(x, x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v).collect()
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        if rng.random::<bool>() {
            ball_point(rng, self.m, self.radius)
        } else {
            shell_point(rng, self.m, self.radius)
        }
    }
    fn project(&self, x: &mut [f64]) {
        clamp_ball(x, self.radius)
    }
    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// `ln(1 + eˣ)` on `[−1, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Softplus;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ScalarObjective for Softplus {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        softplus(x[0])
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![sigmoid(x[0])]
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        if rng.random::<bool>() {
            vec![rng.random_range(-1.0..=1.0)]
        } else {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            vec![s * (1.0 - log_uniform(rng, 6.0))]
        }
    }
    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].clamp(-1.0, 1.0);
    }
    fn diameter(&self) -> f64 {
        2.0
    }
}

/// `sigmoid(wᵀx + b)` on a ball.
#[derive(Debug, Clone)]
pub struct SigmoidAffine {
    pub w: Vec<f64>,
    pub b: f64,
    pub radius: f64,
}

/// `max |σ''|` over the real line, `1/(6√3)`.
pub const SIGMOID_MAX_CURVATURE: f64 = 0.096_225_044_864_937_63;

impl ScalarObjective for SigmoidAffine {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.w, x) + self.b)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let s = sigmoid(dot(&self.w, x) + self.b);
        self.w.iter().map(|wi| s * (1.0 - s) * wi).collect()
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        ball_point(rng, self.dim(), self.radius)
    }
    fn project(&self, x: &mut [f64]) {
        clamp_ball(x, self.radius)
    }
    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// `max(0, wᵀx)` on a ball, with samples concentrated near the kink.
#[derive(Debug, Clone)]
pub struct ReluAffine {
    pub w: Vec<f64>,
    pub radius: f64,
}

impl ScalarObjective for ReluAffine {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.w, x).max(0.0)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        if dot(&self.w, x) > 0.0 {
            self.w.clone()
        } else {
            vec![0.0; self.w.len()]
        }
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        let m = self.dim();
        let mut x = ball_point(rng, m, self.radius);
        if rng.random::<bool>() {
            let ww = dot(&self.w, &self.w);
            let along = dot(&self.w, &x) / ww;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let target = sign * self.radius * log_uniform(rng, 6.0) / ww.sqrt();
            for i in 0..m {
                x[i] += (target - along) * self.w[i];
            }
            clamp_ball(&mut x, self.radius);
        }
        x
    }
    fn project(&self, x: &mut [f64]) {
        clamp_ball(x, self.radius)
    }
    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// `1/‖x‖` on a punctured ball, with samples concentrated near the origin.
#[derive(Debug, Clone)]
pub struct InverseNorm {
    pub m: usize,
    pub radius: f64,
}

/// Smallest norm kept by [`InverseNorm::project`].
pub const INVERSE_NORM_FLOOR: f64 = 1e-9;

impl ScalarObjective for InverseNorm {
    fn dim(&self) -> usize {
        self.m
    }
    fn value(&self, x: &[f64]) -> f64 {
        1.0 / norm(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let n = norm(x);
        x.iter().map(|v| -v / (n * n * n)).collect()
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        let mut x = if rng.random::<bool>() {
            ball_point(rng, self.m, self.radius)
        } else {
            shell_point(rng, self.m, self.radius)
        };
        self.project(&mut x);
        x
    }
    fn project(&self, x: &mut [f64]) {
        clamp_ball(x, self.radius);
        let n = norm(x);
        if n < INVERSE_NORM_FLOOR {
            if n == 0.0 {
                x[0] = INVERSE_NORM_FLOOR;
            } else {
                for v in x.iter_mut() {
                    *v *= INVERSE_NORM_FLOOR / n;
                }
            }
        }
    }
    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// `Σ_i log cosh(x_i)` on a ball.
#[derive(Debug, Clone)]
pub struct LogCoshSum {
    pub m: usize,
    pub radius: f64,
}

fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl ScalarObjective for LogCoshSum {
    fn dim(&self) -> usize {
        self.m
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| log_cosh(*v)).sum()
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.tanh()).collect()
    }
    fn sample_point(&self, rng: &mut Rng) -> Vec<f64> {
        if rng.random::<bool>() {
            ball_point(rng, self.m, self.radius)
        } else {
            shell_point(rng, self.m, self.radius)
        }
    }
    fn project(&self, x: &mut [f64]) {
        clamp_ball(x, self.radius)
    }
    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}
