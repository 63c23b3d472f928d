//! Gaussian-mechanism calibration and (ε, δ) composition.
//!
//! A private run adds `N(0, σ²I)` noise to every local step. Each step is
//! `(ε̂, δ̂)`-private for its client; clients hold disjoint data (parallel
//! composition), and rounds compose sequentially (advanced composition).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::FederatedObjective;

fn unit_open(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} = {x} must lie in (0, 1)")))
    }
}

/// Noise scale `σ = √(2 ln(1.25/δ)) · Δ₂ / ε` of the Gaussian mechanism.
pub fn gaussian_sigma(l2_sensitivity: f64, eps: f64, delta: f64) -> Result<f64> {
    unit_open(eps, "eps")?;
    unit_open(delta, "delta")?;
    if !(l2_sensitivity > 0.0 && l2_sensitivity.is_finite()) {
        return Err(Error::InvalidParam("sensitivity must be positive and finite".into()));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * l2_sensitivity / eps)
}

/// Sensitivity `ℓ_c` of client `c`'s batch-averaged gradient.
pub fn l2_sensitivity(obj: &FederatedObjective, c: usize) -> Result<f64> {
    let ell = obj
        .constants()
        .ell
        .get(c)
        .ok_or(Error::IndexOutOfRange {
            index: c,
            len: obj.n_clients(),
        })?;
    ell.ok_or(Error::NoLipschitzBound(c))
}

/// Advanced composition of `k` mechanisms, each `(eps, delta)`-private:
/// `(√(2k ln(1/δ'))·ε + 2kε², δ' + kδ)`.
pub fn advanced_compose(eps: f64, delta: f64, k: usize, delta_prime: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParam(format!("eps = {eps} must lie in [0, 1]")));
    }
    if !(delta_prime > 0.0 && delta_prime <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "delta_prime = {delta_prime} must lie in (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParam(format!("delta = {delta} must lie in [0, 1]")));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let kf = k as f64;
    let eps_out = (2.0 * kf * (1.0 / delta_prime).ln()).sqrt() * eps + 2.0 * kf * eps * eps;
    Ok((eps_out, delta_prime + kf * delta))
}

/// Parallel composition over disjoint data: componentwise maxima.
pub fn parallel_compose(budgets: &[(f64, f64)]) -> Result<(f64, f64)> {
    if budgets.is_empty() {
        return Err(Error::EmptyList);
    }
    let eps = budgets.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let delta = budgets.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((eps, delta))
}

/// Privacy amplification by sampling a batch of `k` out of `n` records:
/// `(6εk/n, exp(6εk/n)·(4k/n)·δ)`.
pub fn amplify_subsample(eps: f64, delta: f64, k: usize, n: usize) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParam(format!("eps = {eps} must lie in [0, 1]")));
    }
    if n == 0 || 2 * k > n {
        return Err(Error::InvalidParam(format!("batch {k} must be at most n/2 = {n}/2")));
    }
    let q = k as f64 / n as f64;
    let e = 6.0 * eps * q;
    Ok((e, e.exp() * 4.0 * q * delta))
}

/// Per-step privacy parameters of a private run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    pub eps_hat: f64,
    pub delta_hat: f64,
    /// Per-client sensitivities `ℓ_c`.
    pub lipschitz: Vec<f64>,
    pub k: usize,
    pub t: usize,
    pub batch_size: usize,
    /// Per-client dataset sizes.
    pub dataset_sizes: Vec<usize>,
}

/// Run-level guarantee.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyBudget {
    /// `√(TK)·ε̂`.
    pub eps_dp: f64,
    /// `TK·δ̂`.
    pub delta_dp: f64,
    /// Per-client guarantee after `K` local steps, simplified form `(√K ε̂, K δ̂)`.
    pub per_client: (f64, f64),
    /// The same composition path evaluated with the exact advanced
    /// composition formula (with `δ' = δ̂` at each level). `None` when the
    /// per-round level exceeds `ε = 1`, where the formula does not apply.
    pub exact: Option<(f64, f64)>,
    /// Noise scale per client.
    pub sigmas: Vec<f64>,
}

fn exact_steps(eps: f64, delta: f64, k: usize, delta_prime: f64) -> Option<(f64, f64)> {
    if k == 1 {
        return Some((eps, delta));
    }
    advanced_compose(eps, delta, k, delta_prime).ok()
}

/// Composes per-step guarantees into the run-level budget.
///
/// Per client, `K` steps give `(√K ε̂, K δ̂)`; clients compose in parallel;
/// `T` rounds give `(√(TK) ε̂, TK δ̂)`.
pub fn total_budget(spec: &DpSpec) -> Result<PrivacyBudget> {
    unit_open(spec.eps_hat, "eps_hat")?;
    unit_open(spec.delta_hat, "delta_hat")?;
    if spec.k == 0 || spec.t == 0 {
        return Err(Error::InvalidParam("K and T must be at least 1".into()));
    }
    let kf = spec.k as f64;
    if spec.eps_hat >= 1.0 / kf.sqrt() {
        return Err(Error::GuardViolated(format!(
            "eps_hat = {} must be below 1/sqrt(K) = {}",
            spec.eps_hat,
            1.0 / kf.sqrt()
        )));
    }
    let tk = (spec.t * spec.k) as f64;
    let per_client = (kf.sqrt() * spec.eps_hat, kf * spec.delta_hat);
    let n_clients = spec.lipschitz.len().max(1);

    let exact = exact_steps(spec.eps_hat, spec.delta_hat, spec.k, spec.delta_hat)
        .and_then(|(e, d)| parallel_compose(&vec![(e, d); n_clients]).ok())
        .and_then(|(e, d)| exact_steps(e, d, spec.t, spec.delta_hat));

    let sigmas = spec
        .lipschitz
        .iter()
        .map(|&l| gaussian_sigma(l, spec.eps_hat, spec.delta_hat))
        .collect::<Result<_>>()?;

    Ok(PrivacyBudget {
        eps_dp: tk.sqrt() * spec.eps_hat,
        delta_dp: tk * spec.delta_hat,
        per_client,
        exact,
        sigmas,
    })
}
