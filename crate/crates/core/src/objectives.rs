//! Synthetic federated objectives with exactly computable constants.
//!
//! Two client families are provided:
//!
//! * quadratic: `f_c(w) = ½‖A_c w − b_c‖²`, with per-sample losses
//!   `(n_c/2)(a_iᵀw − b_i)²` so that their average is `f_c`;
//! * log-cosh: `f_c(w) = (1/n_c) Σ log cosh(a_iᵀw − y_i)`, whose gradient norm
//!   is bounded by the largest row norm of `A_c`.
//!
//! The global objective is `f = (1/N) Σ_c f_c`. Strong convexity `μ`,
//! smoothness `L`, heterogeneity `σ² = (1/N) Σ ‖∇f_c(w*)‖²`, the gradient
//! bound `G` and per-sample Lipschitz constants `ℓ_c` are computed at
//! construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq, sub};
use crate::rng::{derive_stream, domain, rng_from_seed};

/// Client loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    LogCosh,
}

/// `f_c(w) = ½‖A w − b‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClient {
    /// Row-major `n × d`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub n: usize,
    pub d: usize,
    /// Radius of the parameter ball on which a per-sample Lipschitz bound is
    /// declared.
    pub ball_radius: Option<f64>,
    gram: Vec<f64>,
    atb: Vec<f64>,
}

/// `f_c(w) = (1/n) Σ log cosh(a_iᵀw − y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCoshClient {
    /// Row-major `n × d`.
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

/// One client of a federated objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Client {
    Quadratic(QuadraticClient),
    LogCosh(LogCoshClient),
}

fn log_cosh(r: f64) -> f64 {
    let x = r.abs();
    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
}

fn row(a: &[f64], d: usize, i: usize) -> &[f64] {
    &a[i * d..(i + 1) * d]
}

fn max_row_norm(a: &[f64], n: usize, d: usize) -> f64 {
    (0..n).map(|i| norm(row(a, d, i))).fold(0.0, f64::max)
}

fn check_shape(a: &[f64], rows: usize, d: usize, rhs: usize) -> Result<()> {
    if rows == 0 || d == 0 {
        return Err(Error::InvalidParam("clients need at least one sample and one feature".into()));
    }
    if a.len() != rows * d {
        return Err(Error::DimensionMismatch {
            expected: rows * d,
            got: a.len(),
        });
    }
    if rhs != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: rhs,
        });
    }
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidParam("matrix entries must be finite".into()));
    }
    Ok(())
}

impl QuadraticClient {
    pub fn new(a: Vec<f64>, b: Vec<f64>, d: usize) -> Result<Self> {
        let n = if d == 0 { 0 } else { a.len() / d };
        check_shape(&a, n, d, b.len())?;
        let mut gram = vec![0.0; d * d];
        let mut atb = vec![0.0; d];
        for i in 0..n {
            let r = row(&a, d, i);
            for p in 0..d {
                atb[p] += r[p] * b[i];
                for q in 0..d {
                    gram[p * d + q] += r[p] * r[q];
                }
            }
        }
        Ok(Self {
            a,
            b,
            n,
            d,
            ball_radius: None,
            gram,
            atb,
        })
    }

    /// `A_cᵀA_c`, row-major.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let r = dot(row(&self.a, self.d, i), w) - self.b[i];
            s += r * r;
        }
        0.5 * s
    }

    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|p| dot(&self.gram[p * d..(p + 1) * d], w) - self.atb[p])
            .collect()
    }

    fn per_sample_grad(&self, w: &[f64], i: usize) -> Vec<f64> {
        let r = row(&self.a, self.d, i);
        let s = self.n as f64 * (dot(r, w) - self.b[i]);
        r.iter().map(|x| s * x).collect()
    }

    fn lipschitz(&self) -> Option<f64> {
        let rho = self.ball_radius?;
        let mut best: f64 = 0.0;
        for i in 0..self.n {
            let an = norm(row(&self.a, self.d, i));
            best = best.max(self.n as f64 * an * (an * rho + self.b[i].abs()));
        }
        Some(best)
    }
}

impl LogCoshClient {
    pub fn new(a: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        let n = if d == 0 { 0 } else { a.len() / d };
        check_shape(&a, n, d, y.len())?;
        Ok(Self { a, y, n, d })
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += log_cosh(dot(row(&self.a, self.d, i), w) - self.y[i]);
        }
        s / self.n as f64
    }

    fn grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for i in 0..self.n {
            let r = row(&self.a, self.d, i);
            let t = (dot(r, w) - self.y[i]).tanh();
            for p in 0..self.d {
                g[p] += t * r[p];
            }
        }
        let inv = 1.0 / self.n as f64;
        g.iter().map(|x| x * inv).collect()
    }

    fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.n {
            let r = row(&self.a, d, i);
            let c = 1.0 / (dot(r, w) - self.y[i]).cosh().powi(2);
            for p in 0..d {
                for q in 0..d {
                    h[(p, q)] += c * r[p] * r[q];
                }
            }
        }
        h / self.n as f64
    }

    fn per_sample_grad(&self, w: &[f64], i: usize) -> Vec<f64> {
        let r = row(&self.a, self.d, i);
        let t = (dot(r, w) - self.y[i]).tanh();
        r.iter().map(|x| t * x).collect()
    }

    /// Largest row norm of `A_c`, which bounds every gradient norm.
    pub fn gradient_bound(&self) -> f64 {
        max_row_norm(&self.a, self.n, self.d)
    }
}

impl Client {
    pub fn d(&self) -> usize {
        match self {
            Client::Quadratic(c) => c.d,
            Client::LogCosh(c) => c.d,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Client::Quadratic(c) => c.n,
            Client::LogCosh(c) => c.n,
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            Client::Quadratic(c) => c.value(w),
            Client::LogCosh(c) => c.value(w),
        }
    }

    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Client::Quadratic(c) => c.grad(w),
            Client::LogCosh(c) => c.grad(w),
        }
    }

    pub fn per_sample_grad(&self, w: &[f64], i: usize) -> Vec<f64> {
        match self {
            Client::Quadratic(c) => c.per_sample_grad(w, i),
            Client::LogCosh(c) => c.per_sample_grad(w, i),
        }
    }

    /// Bound `ℓ_c` on every per-sample gradient norm, if one is available.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Client::Quadratic(c) => c.lipschitz(),
            Client::LogCosh(c) => Some(c.gradient_bound()),
        }
    }

    fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        match self {
            Client::Quadratic(c) => DMatrix::from_row_slice(c.d, c.d, &c.gram),
            Client::LogCosh(c) => c.hessian(w),
        }
    }
}

/// Constants of a federated objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub mu: f64,
    pub l: f64,
    pub sigma_sq: f64,
    /// Uniform bound on client gradient norms (log-cosh clients only).
    pub g: Option<f64>,
    /// Per-client per-sample gradient bounds.
    pub ell: Vec<Option<f64>>,
}

/// Global minimizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub w: Vec<f64>,
    pub value: f64,
    /// The stacked system is rank deficient and `w` is the minimum-norm
    /// minimizer.
    pub degenerate: bool,
}

/// `f = (1/N) Σ_c f_c` with cached constants and optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedObjective {
    pub kind: ObjectiveKind,
    pub clients: Vec<Client>,
    pub d: usize,
    constants: Constants,
    optimum: Optimum,
    avg_hessian: Option<DMatrix<f64>>,
}

/// Row-major serialization of a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureData {
    pub kind: ObjectiveKind,
    pub d: usize,
    pub clients: Vec<ClientData>,
}

/// One client's data, matrix row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub a: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ball_radius: Option<f64>,
}

const RANK_TOL: f64 = 1e-10;

fn pinv_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    let eig = SymmetricEigen::new(h.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = RANK_TOL * lmax.max(f64::MIN_POSITIVE);
    let proj = eig.eigenvectors.transpose() * rhs;
    let mut coef = DVector::zeros(proj.len());
    let mut degenerate = false;
    for i in 0..proj.len() {
        let l = eig.eigenvalues[i];
        if l.abs() > tol {
            coef[i] = proj[i] / l;
        } else {
            degenerate = true;
        }
    }
    (&eig.eigenvectors * coef, degenerate)
}

impl FederatedObjective {
    /// Builds an objective from clients of a single family.
    pub fn new(clients: Vec<Client>) -> Result<Self> {
        let first = clients.first().ok_or(Error::EmptyClientList)?;
        let d = first.d();
        let kind = match first {
            Client::Quadratic(_) => ObjectiveKind::Quadratic,
            Client::LogCosh(_) => ObjectiveKind::LogCosh,
        };
        for c in &clients {
            let same = matches!(
                (kind, c),
                (ObjectiveKind::Quadratic, Client::Quadratic(_)) | (ObjectiveKind::LogCosh, Client::LogCosh(_))
            );
            if !same {
                return Err(Error::InvalidParam("clients must share one loss family".into()));
            }
            if c.d() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.d(),
                });
            }
        }
        let mut obj = Self {
            kind,
            clients,
            d,
            constants: Constants {
                mu: 0.0,
                l: 0.0,
                sigma_sq: 0.0,
                g: None,
                ell: vec![],
            },
            optimum: Optimum {
                w: vec![0.0; d],
                value: 0.0,
                degenerate: false,
            },
            avg_hessian: None,
        };
        obj.refresh()?;
        Ok(obj)
    }

    /// Quadratic objective from `(A_c, b_c)` pairs, `A_c` row-major.
    pub fn quadratic(data: Vec<(Vec<f64>, Vec<f64>)>, d: usize) -> Result<Self> {
        let clients = data
            .into_iter()
            .map(|(a, b)| QuadraticClient::new(a, b, d).map(Client::Quadratic))
            .collect::<Result<_>>()?;
        Self::new(clients)
    }

    /// Log-cosh objective from `(A_c, y_c)` pairs, `A_c` row-major.
    pub fn log_cosh(data: Vec<(Vec<f64>, Vec<f64>)>, d: usize) -> Result<Self> {
        let clients = data
            .into_iter()
            .map(|(a, y)| LogCoshClient::new(a, y, d).map(Client::LogCosh))
            .collect::<Result<_>>()?;
        Self::new(clients)
    }

    /// Declares a parameter ball of the given radius for quadratic clients,
    /// which makes their per-sample Lipschitz constants available.
    pub fn with_ball(mut self, radius: f64) -> Self {
        for c in self.clients.iter_mut() {
            if let Client::Quadratic(q) = c {
                q.ball_radius = Some(radius);
            }
        }
        self.constants.ell = self.clients.iter().map(|c| c.lipschitz()).collect();
        self
    }

    fn refresh(&mut self) -> Result<()> {
        let d = self.d;
        let nc = self.clients.len() as f64;
        let (mu, l, avg_h) = match self.kind {
            ObjectiveKind::Quadratic => {
                let mut mu = f64::INFINITY;
                let mut l: f64 = 0.0;
                let mut avg = DMatrix::zeros(d, d);
                for c in &self.clients {
                    let h = c.hessian(&vec![0.0; d]);
                    let (lo, hi) = crate::linalg::sym_eig_extremes(&h);
                    mu = mu.min(lo);
                    l = l.max(hi);
                    avg += h;
                }
                avg /= nc;
                if mu < RANK_TOL * l {
                    mu = 0.0;
                }
                (mu, l, Some(avg))
            }
            ObjectiveKind::LogCosh => {
                let mut l: f64 = 0.0;
                for c in &self.clients {
                    if let Client::LogCosh(lc) = c {
                        let q = QuadraticClient::new(lc.a.clone(), vec![0.0; lc.n], d)?;
                        let h = DMatrix::from_row_slice(d, d, q.gram());
                        let (_, hi) = crate::linalg::sym_eig_extremes(&h);
                        l = l.max(hi / lc.n as f64);
                    }
                }
                (0.0, l, None)
            }
        };
        self.avg_hessian = avg_h;
        self.optimum = self.solve_optimum()?;
        let w = self.optimum.w.clone();
        let mut sigma_sq = 0.0;
        for c in &self.clients {
            sigma_sq += norm_sq(&c.grad(&w));
        }
        sigma_sq /= nc;
        let g = match self.kind {
            ObjectiveKind::LogCosh => Some(
                self.clients
                    .iter()
                    .map(|c| c.lipschitz().unwrap_or(0.0))
                    .fold(0.0, f64::max),
            ),
            ObjectiveKind::Quadratic => None,
        };
        self.constants = Constants {
            mu,
            l,
            sigma_sq,
            g,
            ell: self.clients.iter().map(|c| c.lipschitz()).collect(),
        };
        Ok(())
    }

    fn solve_optimum(&self) -> Result<Optimum> {
        let d = self.d;
        let nc = self.clients.len() as f64;
        match self.kind {
            ObjectiveKind::Quadratic => {
                let h = self.avg_hessian.clone().expect("quadratic Hessian cached");
                let mut rhs = DVector::zeros(d);
                for c in &self.clients {
                    if let Client::Quadratic(q) = c {
                        rhs += DVector::from_row_slice(&q.atb);
                    }
                }
                rhs /= nc;
                let (mut w, degenerate) = pinv_solve(&h, &rhs);
                // One step of iterative refinement on the normal equations.
                let r = &rhs - &h * &w;
                let (dw, _) = pinv_solve(&h, &r);
                w += dw;
                let w: Vec<f64> = w.iter().copied().collect();
                let value = self.value(&w);
                Ok(Optimum {
                    w,
                    value,
                    degenerate,
                })
            }
            ObjectiveKind::LogCosh => self.newton_optimum(),
        }
    }

    fn newton_optimum(&self) -> Result<Optimum> {
        let d = self.d;
        let nc = self.clients.len() as f64;
        let mut w = vec![0.0; d];
        let mut fw = self.value(&w);
        let mut degenerate = false;
        for _ in 0..200 {
            let g = self.grad(&w);
            if norm(&g) <= 1e-15 * (1.0 + norm(&w)) {
                break;
            }
            let mut h = DMatrix::zeros(d, d);
            for c in &self.clients {
                h += c.hessian(&w);
            }
            h /= nc;
            let (step, deg) = pinv_solve(&h, &DVector::from_row_slice(&g));
            degenerate = deg;
            let mut t = 1.0;
            let slope = dot(&g, step.as_slice());
            let mut improved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(x, s)| x - t * s).collect();
                let fc = self.value(&cand);
                if fc <= fw - 1e-4 * t * slope || (fc <= fw && t < 1e-6) {
                    improved = fc < fw || norm(&self.grad(&cand)) < norm(&g);
                    w = cand;
                    fw = fc;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if !crate::linalg::all_finite(&w) {
            return Err(Error::SingularSystem("Newton iteration diverged".into()));
        }
        Ok(Optimum {
            value: fw,
            w,
            degenerate,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    fn client(&self, c: usize) -> Result<&Client> {
        self.clients.get(c).ok_or(Error::IndexOutOfRange {
            index: c,
            len: self.clients.len(),
        })
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `f(w) = (1/N) Σ f_c(w)`.
    pub fn value(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in &self.clients {
            s += c.value(w);
        }
        s / self.clients.len() as f64
    }

    /// `∇f(w) = (1/N) Σ ∇f_c(w)`, summed in client order.
    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for c in &self.clients {
            let gc = c.grad(w);
            for i in 0..self.d {
                g[i] += gc[i];
            }
        }
        let inv = 1.0 / self.clients.len() as f64;
        g.iter().map(|x| x * inv).collect()
    }

    /// `∇f_c(w)`.
    pub fn grad_client(&self, c: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        Ok(self.client(c)?.grad(w))
    }

    /// `f_c(w)`.
    pub fn value_client(&self, c: usize, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        Ok(self.client(c)?.value(w))
    }

    /// Gradient of sample `i` of client `c`; the average over `i` is `∇f_c`.
    pub fn per_sample_grad(&self, c: usize, w: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_w(w)?;
        let cl = self.client(c)?;
        if i >= cl.n_samples() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: cl.n_samples(),
            });
        }
        Ok(cl.per_sample_grad(w, i))
    }

    /// Number of samples held by client `c`.
    pub fn n_samples(&self, c: usize) -> Result<usize> {
        Ok(self.client(c)?.n_samples())
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Global minimizer; minimum-norm when the stacked system is rank
    /// deficient.
    pub fn optimum(&self) -> &Optimum {
        &self.optimum
    }

    /// Like [`optimum`](Self::optimum) but rejects degenerate systems.
    pub fn optimum_strict(&self) -> Result<&Optimum> {
        if self.optimum.degenerate {
            Err(Error::SingularSystem(
                "stacked system is rank deficient; minimum-norm solution available".into(),
            ))
        } else {
            Ok(&self.optimum)
        }
    }

    /// `f(w) − f(w*)`. For quadratics this is evaluated as
    /// `½(w − w*)ᵀ H (w − w*)`, which avoids cancellation near the optimum.
    pub fn suboptimality(&self, w: &[f64]) -> f64 {
        match &self.avg_hessian {
            Some(h) => {
                let e = sub(w, &self.optimum.w);
                let d = self.d;
                let mut s = 0.0;
                for p in 0..d {
                    let mut hp = 0.0;
                    for q in 0..d {
                        hp += h[(p, q)] * e[q];
                    }
                    s += e[p] * hp;
                }
                0.5 * s
            }
            None => self.value(w) - self.optimum.value,
        }
    }

    /// Serializable copy of the client data.
    pub fn fixture_data(&self) -> FixtureData {
        let clients = self
            .clients
            .iter()
            .map(|c| match c {
                Client::Quadratic(q) => ClientData {
                    a: q.a.clone(),
                    rhs: q.b.clone(),
                    ball_radius: q.ball_radius,
                },
                Client::LogCosh(l) => ClientData {
                    a: l.a.clone(),
                    rhs: l.y.clone(),
                    ball_radius: None,
                },
            })
            .collect();
        FixtureData {
            kind: self.kind,
            d: self.d,
            clients,
        }
    }

    /// Rebuilds an objective from serialized data.
    pub fn from_fixture_data(data: &FixtureData) -> Result<Self> {
        let pairs = data.clients.iter().map(|c| (c.a.clone(), c.rhs.clone())).collect();
        let mut obj = match data.kind {
            ObjectiveKind::Quadratic => Self::quadratic(pairs, data.d)?,
            ObjectiveKind::LogCosh => Self::log_cosh(pairs, data.d)?,
        };
        if let Some(r) = data.clients.first().and_then(|c| c.ball_radius) {
            obj = obj.with_ball(r);
        }
        Ok(obj)
    }
}

/// Draws a synthetic objective.
///
/// All clients share one design matrix `A`; heterogeneity only perturbs the
/// right-hand sides, `b_c = A w_true + heterogeneity · ξ_c` with
/// `ξ_c ~ N(0, I)`. Quadratic designs have `N(0, 1/n)` entries, so `AᵀA` is
/// close to the identity when `n ≫ d`; log-cosh designs have `N(0, 1/d)`
/// entries, giving rows of roughly unit norm.
pub fn gen_synthetic(
    kind: ObjectiveKind,
    n_clients: usize,
    d: usize,
    n_per_client: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<FederatedObjective> {
    if n_clients == 0 || d == 0 || n_per_client == 0 {
        return Err(Error::InvalidParam("N, d and n_per_client must be positive".into()));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::InvalidParam("heterogeneity must be finite and non-negative".into()));
    }
    let mut rng = rng_from_seed(derive_stream(seed, domain::DATA, 0));
    let n = n_per_client;
    let sd = match kind {
        ObjectiveKind::Quadratic => 1.0 / (n as f64).sqrt(),
        ObjectiveKind::LogCosh => 1.0 / (d as f64).sqrt(),
    };
    let a: Vec<f64> = (0..n * d)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let w_true: Vec<f64> = (0..d)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let base: Vec<f64> = (0..n).map(|i| dot(row(&a, d, i), &w_true)).collect();
    let data = (0..n_clients)
        .map(|_| {
            let rhs: Vec<f64> = base
                .iter()
                .map(|x| {
                    x + heterogeneity
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            (a.clone(), rhs)
        })
        .collect();
    match kind {
        ObjectiveKind::Quadratic => FederatedObjective::quadratic(data, d),
        ObjectiveKind::LogCosh => FederatedObjective::log_cosh(data, d),
    }
}
