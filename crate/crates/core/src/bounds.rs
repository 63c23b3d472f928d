//! Closed-form convergence and communication bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::BITS_PER_COORD;
use crate::sketch::{alpha_param, SketchKind};

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub l: f64,
    pub mu: f64,
    pub k: usize,
    pub eta_local: f64,
    pub eta_global: f64,
    pub alpha: f64,
    pub sigma_sq: f64,
    /// `E‖w⁰ − w*‖²`.
    pub d0: f64,
    /// `f(w⁰) − f*`.
    pub gap0: f64,
    /// Uniform bound on the client gradient norms.
    pub g: f64,
}

/// A bound value with the hypotheses it was evaluated under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEval {
    pub value: f64,
    /// Step-size hypotheses of the theorem that were not met.
    pub warnings: Vec<String>,
}

impl BoundEval {
    pub fn guard_ok(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Function-class assumption of a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StronglyConvex,
    Convex,
    NonConvex,
}

fn k_step_guard(p: &BoundParams) -> Vec<String> {
    let limit = 1.0 / (8.0 * (1.0 + p.alpha) * p.l * p.k as f64);
    let mut w = Vec::new();
    if p.eta_local > limit {
        w.push(format!(
            "eta_local = {:e} exceeds 1/(8(1+alpha)LK) = {limit:e}",
            p.eta_local
        ));
    }
    if p.eta_global != 1.0 {
        w.push(format!("eta_global = {} but the K-step bound assumes 1", p.eta_global));
    }
    w
}

fn positive(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} = {x} must be positive")))
    }
}

/// `f(w^t) − f*` bound with `K` local steps and `μ > 0`:
/// `L/2·D₀·e^{−μ η_local t} + 4 η_local² L² K³ σ² / μ`.
pub fn bound_strongly_convex(p: &BoundParams, t: usize) -> Result<BoundEval> {
    positive(p.mu, "mu")?;
    positive(p.eta_local, "eta_local")?;
    let decay = 0.5 * p.l * p.d0 * (-p.mu * p.eta_local * t as f64).exp();
    Ok(BoundEval {
        value: decay + strongly_convex_floor(p),
        warnings: k_step_guard(p),
    })
}

/// Noise floor `4 η_local² L² K³ σ² / μ` of the strongly convex bound.
pub fn strongly_convex_floor(p: &BoundParams) -> f64 {
    let kf = p.k as f64;
    4.0 * p.eta_local * p.eta_local * p.l * p.l * kf.powi(3) * p.sigma_sq / p.mu
}

/// Averaged-iterate bound with `K` local steps and `μ = 0`:
/// `4D₀/(η_local K T) + 32 η_local² L K² σ²`.
pub fn bound_convex(p: &BoundParams, t: usize) -> Result<BoundEval> {
    positive(p.eta_local, "eta_local")?;
    if t == 0 {
        return Err(Error::InvalidParam("T must be at least 1".into()));
    }
    let kf = p.k as f64;
    let value = 4.0 * p.d0 / (p.eta_local * kf * t as f64)
        + 32.0 * p.eta_local * p.eta_local * p.l * kf * kf * p.sigma_sq;
    Ok(BoundEval {
        value,
        warnings: k_step_guard(p),
    })
}

/// Bound on `min_{t ≤ T} ‖∇f(w^t)‖²` with `K` local steps and gradients
/// bounded by `G`:
/// `(f(w⁰) − f*)/((T+1) η_global) + η_local L K² G² (η_local + η/2·(1+α))`
/// with `η = η_global η_local`.
pub fn bound_nonconvex(p: &BoundParams, t: usize) -> Result<BoundEval> {
    positive(p.eta_global, "eta_global")?;
    let kf = p.k as f64;
    let eta = p.eta_global * p.eta_local;
    let value = p.gap0 / ((t as f64 + 1.0) * p.eta_global)
        + p.eta_local * p.l * kf * kf * p.g * p.g * (p.eta_local + 0.5 * eta * (1.0 + p.alpha));
    Ok(BoundEval {
        value,
        warnings: Vec::new(),
    })
}

/// The same non-convex bound with the descent term scaled by the
/// per-round step `η_global η_local K`:
/// `(f(w⁰) − f*)/((T+1) η K) + L K G² (η_local + η/2·(1+α))`.
pub fn bound_nonconvex_rescaled(p: &BoundParams, t: usize) -> Result<BoundEval> {
    let kf = p.k as f64;
    let eta = p.eta_global * p.eta_local;
    positive(eta, "eta_global*eta_local")?;
    let value = p.gap0 / ((t as f64 + 1.0) * eta * kf)
        + p.l * kf * p.g * p.g * (p.eta_local + 0.5 * eta * (1.0 + p.alpha));
    Ok(BoundEval {
        value,
        warnings: Vec::new(),
    })
}

/// Single-step (`K = 1`) bounds with `η = η_global η_local`.
///
/// * strongly convex: `(1 − μη)^t · gap₀` on `f(w^t) − f*`;
/// * convex: `D₀/(η(T+1))` on `f(w̄) − f*`, `w̄` the mean of `w⁰..w^T`;
/// * non-convex: `2 gap₀/(η(T+1))` on `min_{t ≤ T} ‖∇f(w^t)‖²`.
pub fn bounds_single_step(regime: Regime, p: &BoundParams, t: usize) -> Result<BoundEval> {
    let eta = p.eta_global * p.eta_local;
    positive(eta, "eta_global*eta_local")?;
    let (limit, label) = match regime {
        Regime::Convex => (1.0 / (2.0 * (1.0 + p.alpha) * p.l), "1/(2(1+alpha)L)"),
        _ => (1.0 / ((1.0 + p.alpha) * p.l), "1/((1+alpha)L)"),
    };
    let mut warnings = Vec::new();
    if eta > limit {
        warnings.push(format!("eta = {eta:e} exceeds {label} = {limit:e}"));
    }
    if p.k != 1 {
        warnings.push(format!("single-step bound evaluated with K = {}", p.k));
    }
    let tf = t as f64;
    let value = match regime {
        Regime::StronglyConvex => {
            positive(p.mu, "mu")?;
            (1.0 - p.mu * eta).powf(tf) * p.gap0
        }
        Regime::Convex => p.d0 / (eta * (tf + 1.0)),
        Regime::NonConvex => 2.0 * p.gap0 / (eta * (tf + 1.0)),
    };
    Ok(BoundEval { value, warnings })
}

/// Inputs of the communication-cost prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetTargets {
    /// Target accuracy.
    pub eps: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub d0: f64,
    pub n_clients: usize,
    pub d: usize,
    pub kind: SketchKind,
    pub b_sketch: usize,
}

/// Which branch of the two-case split was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetCase {
    /// The sketching variance dominates: `ε` above the heterogeneity threshold.
    SketchDominated,
    /// The heterogeneity floor dominates.
    HeterogeneityDominated,
}

/// Predicted optimal step split and communication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunicationBudget {
    pub alpha: f64,
    pub k: usize,
    pub k_eta_local: f64,
    /// Rounds, rounded up.
    pub t_rounds: u64,
    /// Rounds before rounding.
    pub t_exact: f64,
    pub per_round_bits: u64,
    pub total_bits: u64,
    pub case: BudgetCase,
}

/// Rounds and bits to reach `ε` under the optimal choice of `K η_local`.
///
/// Strongly convex (with `K = 1`):
/// * `ε ≥ σ²/(16(1+α)²μ)`: `η_local = 1/(8(1+α)L)`,
///   `T = 8(1+α)(L/μ)·log(L D₀/ε)`;
/// * otherwise `η_local = √(με/2)/(2Lσ)`,
///   `T = (2Lσ/μ^{3/2})·√(2/ε)·log(L D₀/ε)`.
///
/// Convex:
/// * `ε ≥ σ²/((1+α)² L)`: `K η_local = 1/(8(1+α)L)`, `T = 64 D₀(1+α)L/ε`;
/// * otherwise `K η_local = √(ε/L)/(8σ)`, `T = 64 D₀ σ √L/ε^{3/2}`.
pub fn communication_budget(regime: Regime, x: &BudgetTargets) -> Result<CommunicationBudget> {
    positive(x.eps, "eps")?;
    positive(x.l, "L")?;
    let alpha = alpha_param(x.kind, x.d, x.b_sketch)?.value;
    let a1 = 1.0 + alpha;
    let sigma = x.sigma_sq.max(0.0).sqrt();
    let (k_eta, t_exact, case) = match regime {
        Regime::StronglyConvex => {
            positive(x.mu, "mu")?;
            let log = (x.l * x.d0 / x.eps).ln().max(0.0);
            if x.eps >= x.sigma_sq / (16.0 * a1 * a1 * x.mu) {
                (1.0 / (8.0 * a1 * x.l), 8.0 * a1 * (x.l / x.mu) * log, BudgetCase::SketchDominated)
            } else {
                (
                    (x.mu * x.eps / 2.0).sqrt() / (2.0 * x.l * sigma),
                    2.0 * x.l * sigma / x.mu.powf(1.5) * (2.0 / x.eps).sqrt() * log,
                    BudgetCase::HeterogeneityDominated,
                )
            }
        }
        Regime::Convex => {
            if x.eps >= x.sigma_sq / (a1 * a1 * x.l) {
                (1.0 / (8.0 * a1 * x.l), 64.0 * x.d0 * a1 * x.l / x.eps, BudgetCase::SketchDominated)
            } else {
                (
                    (x.eps / x.l).sqrt() / (8.0 * sigma),
                    64.0 * x.d0 * sigma * x.l.sqrt() / x.eps.powf(1.5),
                    BudgetCase::HeterogeneityDominated,
                )
            }
        }
        Regime::NonConvex => {
            return Err(Error::Unsupported(
                "no communication budget for non-convex objectives".into(),
            ))
        }
    };
    let t_rounds = t_exact.ceil().max(0.0) as u64;
    let per_round = BITS_PER_COORD * x.b_sketch as u64 * (x.n_clients as u64 + 1);
    Ok(CommunicationBudget {
        alpha,
        k: 1,
        k_eta_local: k_eta,
        t_rounds,
        t_exact,
        per_round_bits: per_round,
        total_bits: per_round * t_rounds,
        case,
    })
}
