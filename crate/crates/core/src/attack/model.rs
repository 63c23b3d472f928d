//! Models under attack and the gradient-matching objective.
//!
//! For a model `F(w, x)` with parameters `w ∈ ℝ^d` and a private input
//! `x ∈ ℝ^m`, write `G(x) = ∇_w F(w, x)`. The attacker observes
//! `g = G(x̃) (+ noise)`, optionally through a sketch `R`, and minimizes
//!
//! `L(x) = ‖R G(x) − R g‖²`  (with `R = I` when unsketched)
//!
//! by gradient descent on `x`. With `J(x) = ∂G/∂x ∈ ℝ^{d×m}` and the
//! pseudo-Hessian `Φ(x) = Jᵀ ∈ ℝ^{m×d}`, the gradient is
//! `∇L(x) = 2 Φ(x) Rᵀ (R G(x) − R g)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, norm, norm_sq};
use crate::rng::{derive_stream, domain, rng_from_seed};
use crate::sketch::SketchOperator;

/// Loss family of the attacked model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `F(w, x) = ½(wᵀx − y)²`.
    LinearRegression,
    /// `F(w, x) = log(1 + exp(−y wᵀx))` with a known label `y ∈ {−1, 1}`.
    LogisticRegression,
}

/// A model with fixed parameters `w` and a known target `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackModel {
    pub kind: ModelKind,
    pub w: Vec<f64>,
    pub y: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AttackModel {
    pub fn linear(w: Vec<f64>, y: f64) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            w,
            y,
        }
    }

    pub fn logistic(w: Vec<f64>, y: f64) -> Result<Self> {
        if y != 1.0 && y != -1.0 {
            return Err(Error::InvalidParam(format!("logistic label must be ±1, got {y}")));
        }
        Ok(Self {
            kind: ModelKind::LogisticRegression,
            w,
            y,
        })
    }

    /// Parameter dimension `d`, equal to the input dimension `m`.
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `(s, s', s'')`: `G(x) = s(z)·x` with `z = wᵀx`, and the first two
    /// derivatives of `s` in `z`.
    fn scalar_parts(&self, x: &[f64]) -> (f64, f64, f64) {
        let z = dot(&self.w, x);
        match self.kind {
            ModelKind::LinearRegression => (z - self.y, 1.0, 0.0),
            ModelKind::LogisticRegression => {
                let q = sigmoid(-self.y * z);
                let s1 = q * (1.0 - q);
                (-self.y * q, s1, -self.y * s1 * (1.0 - 2.0 * q))
            }
        }
    }

    /// `F(w, x)`.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let z = dot(&self.w, x);
        Ok(match self.kind {
            ModelKind::LinearRegression => 0.5 * (z - self.y) * (z - self.y),
            ModelKind::LogisticRegression => {
                let u = -self.y * z;
                u.max(0.0) + (-u.abs()).exp().ln_1p()
            }
        })
    }

    /// `G(x) = ∇_w F(w, x)`.
    pub fn grad_w(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let (s, _, _) = self.scalar_parts(x);
        Ok(x.iter().map(|xi| s * xi).collect())
    }

    /// `J(x) = ∂G/∂x = s·I + s'·x wᵀ` (`d × m`).
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = self.dim();
        let (s, s1, _) = self.scalar_parts(x);
        Ok(DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { 0.0 };
            diag + s1 * x[i] * self.w[j]
        }))
    }

    /// Pseudo-Hessian `Φ(x) = ∇_x∇_w F = J(x)ᵀ` (`m × d`).
    pub fn pseudo_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jacobian(x)?.transpose())
    }

    /// `Σ_i v_i ∇²_x G_i(x)` (`m × m`):
    /// `s''·(vᵀx)·w wᵀ + s'·(v wᵀ + w vᵀ)`.
    pub fn curvature(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        self.check(v)?;
        let n = self.dim();
        let (_, s1, s2) = self.scalar_parts(x);
        let vx = dot(v, x);
        let w = &self.w;
        Ok(DMatrix::from_fn(n, n, |i, j| {
            s2 * vx * w[i] * w[j] + s1 * (v[i] * w[j] + w[i] * v[j])
        }))
    }

    /// Bound on `‖G(x)‖` over `‖x‖ ≤ radius`.
    pub fn grad_w_bound(&self, radius: f64) -> f64 {
        match self.kind {
            ModelKind::LinearRegression => (norm(&self.w) * radius + self.y.abs()) * radius,
            ModelKind::LogisticRegression => radius,
        }
    }
}

/// The attacker's view: a model, an observed (possibly sketched and
/// noised) gradient, and the sketch operator if any.
#[derive(Debug, Clone)]
pub struct AttackProblem {
    pub model: AttackModel,
    /// `g`, or `R g` when sketched.
    pub observed: Vec<f64>,
    pub sketch: Option<SketchOperator>,
    pub noise_sigma: f64,
}

impl AttackProblem {
    /// Observes `G(x̃) + σξ` with `ξ ~ N(0, I)` drawn from `seed`, sketched
    /// by `sketch` when given.
    pub fn observe(
        model: AttackModel,
        x_true: &[f64],
        sketch: Option<SketchOperator>,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParam("noise_sigma must be finite and non-negative".into()));
        }
        let mut g = model.grad_w(x_true)?;
        if noise_sigma > 0.0 {
            let mut rng = rng_from_seed(derive_stream(seed, domain::ATTACK, 0));
            for gi in g.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *gi += noise_sigma * z;
            }
        }
        if let Some(op) = &sketch {
            if op.d() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: op.d(),
                });
            }
        }
        let observed = match &sketch {
            Some(op) => op.sk(&g)?,
            None => g,
        };
        Ok(Self {
            model,
            observed,
            sketch,
            noise_sigma,
        })
    }

    /// Problem for an already observed gradient, `g` or `R g` when
    /// `sketch` is given.
    pub fn from_observed(model: AttackModel, observed: Vec<f64>, sketch: Option<SketchOperator>) -> Result<Self> {
        let expected = sketch.as_ref().map_or(model.dim(), |op| op.b());
        if let Some(op) = &sketch {
            if op.d() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: op.d(),
                });
            }
        }
        if observed.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: observed.len(),
            });
        }
        Ok(Self {
            model,
            observed,
            sketch,
            noise_sigma: 0.0,
        })
    }

    /// Unsketched, noiseless observation.
    pub fn plain(model: AttackModel, x_true: &[f64]) -> Result<Self> {
        Self::observe(model, x_true, None, 0.0, 0)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `R G(x) − R g`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gx = self.model.grad_w(x)?;
        let rx = match &self.sketch {
            Some(op) => op.sk(&gx)?,
            None => gx,
        };
        Ok(rx.iter().zip(&self.observed).map(|(a, b)| a - b).collect())
    }

    fn desk(&self, r: Vec<f64>) -> Result<Vec<f64>> {
        match &self.sketch {
            Some(op) => op.desk(&r),
            None => Ok(r),
        }
    }

    /// `L(x)`.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(norm_sq(&self.residual(x)?))
    }

    /// `∇L(x) = 2 Φ(x) Rᵀ(R G(x) − R g)`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let back = self.desk(self.residual(x)?)?;
        let phi = self.model.pseudo_hessian(x)?;
        let n = self.dim();
        Ok((0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    s += phi[(i, j)] * back[j];
                }
                2.0 * s
            })
            .collect())
    }

    /// `∇²L(x) = 2 (RJ)ᵀ(RJ) + 2 Σ_i [Rᵀ r]_i ∇²G_i`.
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let j = self.model.jacobian(x)?;
        let rj = match &self.sketch {
            Some(op) => op.to_dense() * &j,
            None => j,
        };
        let back = self.desk(self.residual(x)?)?;
        let curv = self.model.curvature(x, &back)?;
        Ok((rj.transpose() * rj + curv) * 2.0)
    }

    /// Pseudo-kernel `K(x) = Φ(x)ᵀΦ(x)` (`d × d`).
    pub fn pseudo_kernel(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let phi = self.model.pseudo_hessian(x)?;
        Ok(phi.transpose() * phi)
    }

    /// Kernel seen through the sketch, `R K(x) Rᵀ` (`b × b`); equal to
    /// `K(x)` when unsketched. `‖∇L‖² = 4 rᵀ (R K Rᵀ) r` with `r` the
    /// residual.
    pub fn sketched_kernel(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.pseudo_kernel(x)?;
        Ok(match &self.sketch {
            Some(op) => {
                let r = op.to_dense();
                &r * k * r.transpose()
            }
            None => k,
        })
    }
}

/// Iterates and losses of an attack run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackTrajectory {
    pub xs: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    /// The run stopped because `L` fell below [`ATTACK_STOP`].
    pub converged: bool,
}

impl AttackTrajectory {
    pub fn last(&self) -> &[f64] {
        self.xs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Loss below which an attack run stops.
pub const ATTACK_STOP: f64 = 1e-16;

/// `x_{t+1} = x_t − η ∇L(x_t)` for at most `t_attack` steps.
pub fn attack_gd(problem: &AttackProblem, x0: &[f64], eta: f64, t_attack: usize) -> Result<AttackTrajectory> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParam(format!("eta = {eta} must be positive")));
    }
    let mut x = x0.to_vec();
    let mut l = problem.loss(&x)?;
    let mut out = AttackTrajectory {
        xs: vec![x.clone()],
        losses: vec![l],
        converged: l < ATTACK_STOP,
    };
    for step in 0..t_attack {
        if l < ATTACK_STOP {
            break;
        }
        let g = problem.grad(&x)?;
        for i in 0..x.len() {
            x[i] -= eta * g[i];
        }
        l = problem.loss(&x)?;
        if !all_finite(&x) || !l.is_finite() {
            return Err(Error::NonFiniteStep { step: step + 1 });
        }
        out.xs.push(x.clone());
        out.losses.push(l);
        out.converged = l < ATTACK_STOP;
    }
    Ok(out)
}
