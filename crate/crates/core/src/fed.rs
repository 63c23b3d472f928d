//! Simulation of sketched federated learning with `K` local steps.
//!
//! One round, starting from the shared iterate `w^t`:
//!
//! 1. every client runs `K` gradient steps from `u_c^{t,0} = w^t` and forms
//!    `Δw_c = −η_local Σ_k ∇f_c(u_c^{t,k})` (plus noise in the private
//!    variant);
//! 2. every client uploads `R_t Δw_c`;
//! 3. the server broadcasts `Δw̃ = η_global · mean_c R_t Δw_c`;
//! 4. every client applies `w^{t+1} = w^t + R_tᵀ Δw̃` on its own copy.
//!
//! The same operator `R_t` sketches and de-sketches a round's update, so the
//! effective update is `R_tᵀR_t` applied to the averaged client update.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist_sq, norm_sq};
use crate::objectives::FederatedObjective;
use crate::privacy::{gaussian_sigma, l2_sensitivity, total_budget, DpSpec, PrivacyBudget};
use crate::rng::{derive_stream, domain, rng_from_seed, Rng};
use crate::sketch::{alpha_or_zero, SketchOperator, SketchSpec};

/// Bits used to transmit one coordinate.
pub const BITS_PER_COORD: u64 = 64;

/// Private-run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub eps_hat: f64,
    pub delta_hat: f64,
    pub batch_size: usize,
    /// Replaces the calibrated noise scale (used for degenerate runs).
    #[serde(default)]
    pub sigma_override: Option<f64>,
}

fn one() -> usize {
    1
}

/// Hyperparameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of communication rounds.
    pub t: usize,
    /// Local steps per round.
    pub k: usize,
    pub eta_local: f64,
    pub eta_global: f64,
    pub sketch: SketchSpec,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default = "one")]
    pub n_seeds: usize,
    /// Track `ū^{t,k}` and the running average iterate.
    #[serde(default)]
    pub record_average_iterate: bool,
    /// Starting point, zero when absent.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

impl RunConfig {
    /// `α` of the configured sketch (zero for the identity).
    pub fn alpha(&self) -> f64 {
        alpha_or_zero(self.sketch.kind, self.sketch.d, self.sketch.b_sketch)
    }

    /// Copy of the configuration for seed index `s`.
    pub fn for_seed(&self, s: usize) -> RunConfig {
        let mut c = self.clone();
        c.sketch.master_seed = seed_master(self.sketch.master_seed, s);
        c
    }
}

/// Master seed used by seed index `s` of a multi-seed experiment.
pub fn seed_master(master: u64, s: usize) -> u64 {
    derive_stream(master, domain::SEED, s as u64)
}

/// Metrics at the start of a round (or after the last round).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub w: Vec<f64>,
    pub f_gap: f64,
    pub dist_sq: f64,
    pub grad_norm_sq: f64,
    /// Cumulative bits exchanged to produce `w^t`.
    pub bits: u64,
    /// `f(w̄) − f*` of the running average of `ū^{s,k}` over completed rounds.
    pub avg_gap: Option<f64>,
}

/// Metrics at local step `k` of round `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub k: usize,
    /// `f(w^t) − f*` of the round's starting iterate.
    pub f_gap: f64,
    pub dist_sq: f64,
    /// `V^{t,k} = (1/N) Σ_c ‖u_c^{t,k} − ū^{t,k}‖²`.
    pub variance: f64,
    pub bits: u64,
    /// `f(ū^{t,k}) − f*`.
    pub ubar_gap: f64,
    pub ubar: Option<Vec<f64>>,
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub master_seed: u64,
    pub per_round_bits: u64,
    pub rounds: Vec<RoundRecord>,
    pub steps: Vec<StepRecord>,
    pub average_iterate: Option<Vec<f64>>,
    /// All client copies of `w^t` were bit-identical after every round.
    pub synchronized: bool,
    pub warnings: Vec<String>,
}

/// Noise settings of one client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDp {
    pub batch_size: usize,
    pub sigma: f64,
}

/// Bits per round and in total: `64·b·(N+1)` per round.
pub fn communication_bits(cfg: &RunConfig, n_clients: usize) -> (u64, u64) {
    let per_round = BITS_PER_COORD * cfg.sketch.b_sketch as u64 * (n_clients as u64 + 1);
    (per_round, per_round * cfg.t as u64)
}

fn stochastic_grad(
    obj: &FederatedObjective,
    c: usize,
    u: &[f64],
    dp: Option<&LocalDp>,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let Some(dp) = dp else {
        return obj.grad_client(c, u);
    };
    let n_c = obj.n_samples(c)?;
    let mut g = if dp.batch_size >= n_c {
        obj.grad_client(c, u)?
    } else {
        let idx = sample(rng, n_c, dp.batch_size.max(1));
        let mut acc = vec![0.0; u.len()];
        for i in idx.iter() {
            let gi = obj.per_sample_grad(c, u, i)?;
            for j in 0..acc.len() {
                acc[j] += gi[j];
            }
        }
        let inv = 1.0 / idx.len() as f64;
        acc.iter().map(|x| x * inv).collect()
    };
    if dp.sigma > 0.0 {
        for x in g.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += dp.sigma * z;
        }
    }
    Ok(g)
}

/// Local iterates `u^{t,0..K-1}` and the update `Δw_c`.
fn local_trajectory(
    obj: &FederatedObjective,
    c: usize,
    w: &[f64],
    k_steps: usize,
    eta_local: f64,
    dp: Option<&LocalDp>,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = w.len();
    let mut u = w.to_vec();
    let mut acc = vec![0.0; d];
    let mut iterates = Vec::with_capacity(k_steps);
    for _ in 0..k_steps {
        iterates.push(u.clone());
        let g = stochastic_grad(obj, c, &u, dp, rng)?;
        for i in 0..d {
            acc[i] += g[i];
            u[i] -= eta_local * g[i];
        }
    }
    let delta = acc.iter().map(|x| -eta_local * x).collect();
    Ok((iterates, delta))
}

/// `Δw_c = −η_local Σ_{k<K} ∇f_c(u_c^{t,k})` for client `c` from `w_t`.
pub fn local_steps(
    obj: &FederatedObjective,
    c: usize,
    w_t: &[f64],
    k_steps: usize,
    eta_local: f64,
    dp: Option<&LocalDp>,
    round_rng: &mut Rng,
) -> Result<Vec<f64>> {
    if k_steps == 0 {
        return Err(Error::InvalidParam("K must be at least 1".into()));
    }
    Ok(local_trajectory(obj, c, w_t, k_steps, eta_local, dp, round_rng)?.1)
}

/// `η_global` times the mean of the sketched client updates, summed in
/// client order.
pub fn server_aggregate(sketched_deltas: &[Vec<f64>], eta_global: f64) -> Result<Vec<f64>> {
    let first = sketched_deltas.first().ok_or(Error::EmptyClientList)?;
    let mut sum = first.clone();
    for v in &sketched_deltas[1..] {
        if v.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                got: v.len(),
            });
        }
        for i in 0..sum.len() {
            sum[i] += v[i];
        }
    }
    let n = sketched_deltas.len() as f64;
    Ok(sum.iter().map(|x| eta_global * (x / n)).collect())
}

/// Step-size guard messages for the theorem that applies to `cfg`.
pub fn guard_warnings(obj: &FederatedObjective, cfg: &RunConfig) -> Vec<String> {
    let l = obj.constants().l;
    let alpha = cfg.alpha();
    let mut out = Vec::new();
    if cfg.k == 1 {
        let limit = 1.0 / ((1.0 + alpha) * l);
        let eta = cfg.eta_global * cfg.eta_local;
        if eta > limit {
            out.push(format!(
                "single-step guard violated: eta_global*eta_local = {eta:e} > 1/((1+alpha)L) = {limit:e}"
            ));
        }
    } else {
        let limit = 1.0 / (8.0 * (1.0 + alpha) * l * cfg.k as f64);
        if cfg.eta_local > limit {
            out.push(format!(
                "K-step guard violated: eta_local = {:e} > 1/(8(1+alpha)LK) = {limit:e}",
                cfg.eta_local
            ));
        }
        if cfg.eta_global != 1.0 {
            out.push("K-step bounds assume eta_global = 1".into());
        }
    }
    out
}

fn validate(obj: &FederatedObjective, cfg: &RunConfig) -> Result<()> {
    cfg.sketch.validate()?;
    if cfg.sketch.d != obj.d {
        return Err(Error::DimensionMismatch {
            expected: obj.d,
            got: cfg.sketch.d,
        });
    }
    if cfg.k == 0 {
        return Err(Error::InvalidParam("K must be at least 1".into()));
    }
    if !(cfg.eta_local >= 0.0 && cfg.eta_global > 0.0) {
        return Err(Error::InvalidParam("step sizes must be non-negative".into()));
    }
    if let Some(w0) = &cfg.w0 {
        if w0.len() != obj.d {
            return Err(Error::DimensionMismatch {
                expected: obj.d,
                got: w0.len(),
            });
        }
    }
    Ok(())
}

fn round_rng(master: u64, round: usize, client: usize) -> Rng {
    rng_from_seed(derive_stream(
        derive_stream(master, domain::BATCH, round as u64),
        domain::NOISE,
        client as u64,
    ))
}

fn run_inner(obj: &FederatedObjective, cfg: &RunConfig, dp: Option<&[LocalDp]>) -> Result<RoundTrace> {
    validate(obj, cfg)?;
    let n = obj.n_clients();
    let d = obj.d;
    let w_star = obj.optimum().w.clone();
    let w0 = cfg.w0.clone().unwrap_or_else(|| vec![0.0; d]);
    let (per_round, _) = communication_bits(cfg, n);
    let mut trace = RoundTrace {
        master_seed: cfg.sketch.master_seed,
        per_round_bits: per_round,
        rounds: Vec::with_capacity(cfg.t + 1),
        steps: Vec::with_capacity(cfg.t * cfg.k),
        average_iterate: None,
        synchronized: true,
        warnings: guard_warnings(obj, cfg),
    };
    let record = |t: usize, w: &[f64], bits: u64, avg_gap: Option<f64>| RoundRecord {
        t,
        w: w.to_vec(),
        f_gap: obj.suboptimality(w),
        dist_sq: dist_sq(w, &w_star),
        grad_norm_sq: norm_sq(&obj.grad(w)),
        bits,
        avg_gap,
    };
    trace.rounds.push(record(0, &w0, 0, None));

    let mut ws = vec![w0; n];
    let mut avg_sum = vec![0.0; d];
    let mut avg_count = 0usize;
    let inv_n = 1.0 / n as f64;
    for t in 0..cfg.t {
        let op = SketchOperator::build(cfg.sketch, t as u64)?;
        let bits_before = per_round * t as u64;
        let start_gap = trace.rounds[t].f_gap;
        let start_dist = trace.rounds[t].dist_sq;

        let mut trajectories = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        for c in 0..n {
            let mut rng = round_rng(cfg.sketch.master_seed, t, c);
            let local_dp = dp.map(|v| &v[c]);
            let (iterates, delta) =
                local_trajectory(obj, c, &ws[c], cfg.k, cfg.eta_local, local_dp, &mut rng)?;
            trajectories.push(iterates);
            deltas.push(delta);
        }

        for k in 0..cfg.k {
            let first = &trajectories[0][k];
            let ubar = if trajectories.iter().all(|tr| &tr[k] == first) {
                first.clone()
            } else {
                let mut ubar = vec![0.0; d];
                for traj in &trajectories {
                    for i in 0..d {
                        ubar[i] += traj[k][i];
                    }
                }
                ubar.iter().map(|x| x * inv_n).collect()
            };
            let mut variance = 0.0;
            for traj in &trajectories {
                variance += dist_sq(&traj[k], &ubar);
            }
            variance *= inv_n;
            if cfg.record_average_iterate {
                for i in 0..d {
                    avg_sum[i] += ubar[i];
                }
                avg_count += 1;
            }
            trace.steps.push(StepRecord {
                t,
                k,
                f_gap: start_gap,
                dist_sq: start_dist,
                variance,
                bits: bits_before,
                ubar_gap: obj.suboptimality(&ubar),
                ubar: cfg.record_average_iterate.then_some(ubar),
            });
        }

        let sketched = deltas.iter().map(|v| op.sk(v)).collect::<Result<Vec<_>>>()?;
        let aggregate = server_aggregate(&sketched, cfg.eta_global)?;
        for w in ws.iter_mut() {
            let update = op.desk(&aggregate)?;
            for i in 0..d {
                w[i] += update[i];
            }
        }
        if ws.iter().any(|w| w != &ws[0]) {
            trace.synchronized = false;
        }
        let avg_gap = (cfg.record_average_iterate && avg_count > 0).then(|| {
            let avg: Vec<f64> = avg_sum.iter().map(|x| x / avg_count as f64).collect();
            obj.suboptimality(&avg)
        });
        trace.rounds.push(record(t + 1, &ws[0], per_round * (t as u64 + 1), avg_gap));
        if !all_finite(&ws[0]) {
            return Err(Error::NonFinite {
                round: t + 1,
                trace: Box::new(trace),
            });
        }
    }
    if cfg.record_average_iterate && avg_count > 0 {
        trace.average_iterate = Some(avg_sum.iter().map(|x| x / avg_count as f64).collect());
    }
    Ok(trace)
}

/// Runs the sketched algorithm once, with the configured master seed.
pub fn run_fl(obj: &FederatedObjective, cfg: &RunConfig) -> Result<RoundTrace> {
    run_inner(obj, cfg, None)
}

/// Noise scales of a private run, one per client.
pub fn dp_sigmas(obj: &FederatedObjective, dp: &DpConfig) -> Result<Vec<f64>> {
    (0..obj.n_clients())
        .map(|c| match dp.sigma_override {
            Some(s) => Ok(s),
            None => gaussian_sigma(l2_sensitivity(obj, c)?, dp.eps_hat, dp.delta_hat),
        })
        .collect()
}

/// Runs the private algorithm once and returns its composed budget.
pub fn run_private_fl(obj: &FederatedObjective, cfg: &RunConfig) -> Result<(RoundTrace, PrivacyBudget)> {
    let dp = cfg
        .dp
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("private run requires a dp section".into()))?;
    let sigmas = dp_sigmas(obj, dp)?;
    let lipschitz: Vec<f64> = obj.constants().ell.iter().flatten().copied().collect();
    let spec = DpSpec {
        eps_hat: dp.eps_hat,
        delta_hat: dp.delta_hat,
        lipschitz,
        k: cfg.k,
        t: cfg.t,
        batch_size: dp.batch_size,
        dataset_sizes: (0..obj.n_clients())
            .map(|c| obj.n_samples(c))
            .collect::<Result<_>>()?,
    };
    let mut budget = total_budget(&spec)?;
    budget.sigmas = sigmas.clone();
    let local: Vec<LocalDp> = sigmas
        .iter()
        .map(|&sigma| LocalDp {
            batch_size: dp.batch_size,
            sigma,
        })
        .collect();
    let trace = run_inner(obj, cfg, Some(&local))?;
    Ok((trace, budget))
}

/// Runs `cfg.n_seeds` independent seeds in parallel, in seed order.
pub fn run_many(obj: &FederatedObjective, cfg: &RunConfig) -> Result<Vec<RoundTrace>> {
    (0..cfg.n_seeds.max(1))
        .into_par_iter()
        .map(|s| {
            let c = cfg.for_seed(s);
            if c.dp.is_some() {
                run_private_fl(obj, &c).map(|r| r.0)
            } else {
                run_fl(obj, &c)
            }
        })
        .collect()
}

/// Seed-averaged round metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedAverage {
    pub n_seeds: usize,
    pub f_gap: Vec<f64>,
    pub dist_sq: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    pub avg_gap: Vec<Option<f64>>,
}

impl SeedAverage {
    /// Averages traces of equal length.
    pub fn new(traces: &[RoundTrace]) -> Self {
        let n = traces.len() as f64;
        let len = traces.iter().map(|t| t.rounds.len()).min().unwrap_or(0);
        let mean = |f: &dyn Fn(&RoundRecord) -> f64| -> Vec<f64> {
            (0..len)
                .map(|t| traces.iter().map(|tr| f(&tr.rounds[t])).sum::<f64>() / n)
                .collect()
        };
        let avg_gap = (0..len)
            .map(|t| {
                let vals: Option<Vec<f64>> = traces.iter().map(|tr| tr.rounds[t].avg_gap).collect();
                vals.map(|v| v.iter().sum::<f64>() / n)
            })
            .collect();
        Self {
            n_seeds: traces.len(),
            f_gap: mean(&|r| r.f_gap),
            dist_sq: mean(&|r| r.dist_sq),
            grad_norm_sq: mean(&|r| r.grad_norm_sq),
            avg_gap,
        }
    }

    /// `min_{t ≤ horizon}` of the averaged squared gradient norm.
    pub fn min_grad_norm_sq(&self, horizon: usize) -> f64 {
        self.grad_norm_sq[..=horizon.min(self.grad_norm_sq.len() - 1)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}
