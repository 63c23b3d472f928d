//! One function per subcommand, each producing in-memory artifacts.

use serde_json::json;

use sketchfl::attack::conditions::{solution_step_rule, SketchStats};
use sketchfl::attack::{
    attack_gd, measure_conditions, rate_certificate, sketch_stats, sketched_constants, step_size_rule,
    unique_minimum_probe, AttackProblem,
};
use sketchfl::bounds::{
    bound_convex, bound_nonconvex, bound_strongly_convex, bounds_single_step, BoundEval, BoundParams, Regime,
};
use sketchfl::cwe::verify_embedding_with;
use sketchfl::fed::{guard_warnings, run_many, run_private_fl, RoundTrace, RunConfig, SeedAverage};
use sketchfl::linalg::{dist_sq, norm};
use sketchfl::objectives::{FederatedObjective, ObjectiveKind};
use sketchfl::privacy::total_budget;
use sketchfl::rng::{derive_stream, domain, rng_from_seed};
use sketchfl::sketch::{SketchKind, SketchOperator, SketchSpec};

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{csv_bytes, header, read_vector_csv, to_json, Artifacts, Assertion, Cell, Summary};
use crate::sweep::{sweep_communication, sweep_rows};
use crate::CliError;

/// Bound constants of `obj` under `run`, starting from `run.w0`.
pub fn bound_params(obj: &FederatedObjective, run: &RunConfig) -> BoundParams {
    let c = obj.constants();
    let w0 = run.w0.clone().unwrap_or_else(|| vec![0.0; obj.d]);
    BoundParams {
        l: c.l,
        mu: c.mu,
        k: run.k,
        eta_local: run.eta_local,
        eta_global: run.eta_global,
        alpha: run.alpha(),
        sigma_sq: c.sigma_sq,
        d0: dist_sq(&w0, &obj.optimum().w),
        gap0: obj.suboptimality(&w0),
        g: c.g.unwrap_or(0.0),
    }
}

/// Bound family matching the objective's class.
pub fn default_regime(obj: &FederatedObjective) -> Regime {
    match obj.kind {
        ObjectiveKind::LogCosh => Regime::NonConvex,
        ObjectiveKind::Quadratic if obj.optimum().degenerate => Regime::Convex,
        ObjectiveKind::Quadratic => Regime::StronglyConvex,
    }
}

/// One row of the bound overlay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayRow {
    pub t: usize,
    pub empirical: f64,
    pub bound: f64,
}

impl OverlayRow {
    pub fn margin(&self) -> f64 {
        self.bound - self.empirical
    }
}

/// Pairs each round's seed-averaged metric with the theorem value it is
/// bounded by. Strongly convex rows use `f(w^t) − f*`, convex rows the gap
/// of the running average iterate, non-convex rows `min_{s ≤ t} ‖∇f(w^s)‖²`.
pub fn bound_overlay(regime: Regime, p: &BoundParams, avg: &SeedAverage) -> sketchfl::Result<(Vec<OverlayRow>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut note = |e: &BoundEval| {
        for w in &e.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    };
    for t in 0..avg.f_gap.len() {
        let (empirical, eval) = match regime {
            Regime::StronglyConvex => {
                let e = if p.k == 1 {
                    bounds_single_step(regime, p, t)?
                } else {
                    bound_strongly_convex(p, t)?
                };
                (avg.f_gap[t], e)
            }
            Regime::Convex => {
                let Some(gap) = avg.avg_gap[t] else { continue };
                let e = if p.k == 1 {
                    bounds_single_step(regime, p, t - 1)?
                } else {
                    bound_convex(p, t)?
                };
                (gap, e)
            }
            Regime::NonConvex => {
                let e = if p.k == 1 {
                    bounds_single_step(regime, p, t)?
                } else {
                    bound_nonconvex(p, t)?
                };
                (avg.min_grad_norm_sq(t), e)
            }
        };
        note(&eval);
        rows.push(OverlayRow {
            t,
            empirical,
            bound: eval.value,
        });
    }
    Ok((rows, warnings))
}

fn trace_csv(avg: &SeedAverage, traces: &[RoundTrace]) -> Vec<u8> {
    let rows: Vec<Vec<Cell>> = (0..avg.f_gap.len())
        .map(|t| {
            vec![
                t.into(),
                avg.f_gap[t].into(),
                avg.dist_sq[t].into(),
                avg.grad_norm_sq[t].into(),
                avg.avg_gap[t].into(),
                traces[0].rounds[t].bits.into(),
            ]
        })
        .collect();
    csv_bytes(
        &header(&["t", "f_gap", "dist_sq", "grad_norm_sq", "avg_gap", "bits"]),
        &rows,
    )
}

fn overlay_csv(rows: &[OverlayRow]) -> Vec<u8> {
    let rows: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| vec![r.t.into(), r.empirical.into(), r.bound.into(), r.margin().into()])
        .collect();
    csv_bytes(&header(&["t", "empirical", "bound", "margin"]), &rows)
}

/// Plain gradient descent on `f`, the reference for the single-client
/// identity-sketch run.
pub fn gd_reference(obj: &FederatedObjective, w0: &[f64], eta: f64, t: usize) -> sketchfl::Result<Vec<Vec<f64>>> {
    let mut w = w0.to_vec();
    let mut out = vec![w.clone()];
    for _ in 0..t {
        let g = obj.grad_client(0, &w)?;
        for i in 0..w.len() {
            w[i] -= eta * g[i];
        }
        out.push(w.clone());
    }
    Ok(out)
}

fn gd_equivalent_config(obj: &FederatedObjective, run: &RunConfig) -> bool {
    run.sketch.kind == SketchKind::Identity && run.k == 1 && run.eta_global == 1.0 && obj.n_clients() == 1 && run.dp.is_none()
}

/// Largest local step covered by the bounds for `run`.
pub fn guard_step(obj: &FederatedObjective, run: &RunConfig) -> f64 {
    let l = obj.constants().l;
    let a1 = 1.0 + run.alpha();
    if run.k == 1 {
        1.0 / (a1 * l)
    } else {
        1.0 / (8.0 * a1 * l * run.k as f64)
    }
}

fn seeded_run(cfg: &ExperimentConfig, obj: &FederatedObjective, seed: u64) -> Result<RunConfig, ConfigError> {
    let mut run = cfg.run()?.clone();
    run.sketch.master_seed = seed;
    if cfg.guard_step {
        run.eta_local = guard_step(obj, &run);
    }
    Ok(run)
}

/// `run-fl`: seed-averaged trace, bound overlay and invariant checks.
pub fn run_fl_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let obj = cfg.objective()?.build()?;
    let run = seeded_run(cfg, &obj, seed)?;
    let traces = run_many(&obj, &run)?;
    let avg = SeedAverage::new(&traces);
    let regime = cfg.regime.unwrap_or_else(|| default_regime(&obj));
    let p = bound_params(&obj, &run);
    let (rows, bound_warnings) = bound_overlay(regime, &p, &avg)?;
    let mut warnings = guard_warnings(&obj, &run);
    if warnings.is_empty() {
        warnings = bound_warnings;
    }

    let mut assertions = Vec::new();
    let worst = rows.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min);
    assertions.push(Assertion::new(
        "bound_margin_nonnegative",
        !rows.is_empty() && worst >= 0.0,
        format!("{} rounds compared, smallest margin {worst:e}", rows.len()),
    ));
    assertions.push(Assertion::new(
        "clients_synchronized",
        traces.iter().all(|t| t.synchronized),
        "all client copies of w^t identical after every round",
    ));
    if gd_equivalent_config(&obj, &run) {
        let w0 = run.w0.clone().unwrap_or_else(|| vec![0.0; obj.d]);
        let reference = gd_reference(&obj, &w0, run.eta_local, run.t)?;
        let mismatch = traces[0]
            .rounds
            .iter()
            .zip(&reference)
            .position(|(r, w)| r.w.iter().zip(w).any(|(a, b)| a.to_bits() != b.to_bits()));
        assertions.push(Assertion::new(
            "gd_equivalence",
            mismatch.is_none(),
            match mismatch {
                Some(t) => format!("iterate {t} differs from gradient descent"),
                None => format!("{} iterates bit-identical to gradient descent", reference.len()),
            },
        ));
    }

    let data = json!({
        "regime": regime,
        "n_seeds": traces.len(),
        "bound_params": p,
        "per_round_bits": traces[0].per_round_bits,
        "final_f_gap": avg.f_gap.last(),
    });
    Ok(Artifacts {
        files: vec![
            ("trace.csv".into(), trace_csv(&avg, &traces)),
            ("bound.csv".into(), overlay_csv(&rows)),
        ],
        summary: Summary::new("run-fl", seed, assertions, warnings, data),
    })
}

/// `run-dp-fl`: private trace and composed privacy budget.
pub fn run_dp_fl_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let obj = cfg.objective()?.build()?;
    let run = seeded_run(cfg, &obj, seed)?;
    if run.dp.is_none() {
        return Err(ConfigError::Missing("run.dp").into());
    }
    let (_, budget) = run_private_fl(&obj, &run)?;
    let traces = run_many(&obj, &run)?;
    let avg = SeedAverage::new(&traces);
    let mut plain = run.clone();
    plain.dp = None;
    let plain_avg = SeedAverage::new(&run_many(&obj, &plain)?);
    let assertions = vec![
        Assertion::new(
            "budget_finite",
            budget.eps_dp.is_finite() && budget.delta_dp.is_finite() && budget.delta_dp < 1.0,
            format!("(eps, delta) = ({}, {})", budget.eps_dp, budget.delta_dp),
        ),
        Assertion::new(
            "noise_scales_positive",
            budget.sigmas.iter().all(|s| s.is_finite() && *s > 0.0),
            format!("{} clients", budget.sigmas.len()),
        ),
    ];
    let data = json!({
        "budget": budget,
        "final_f_gap": avg.f_gap.last(),
        "final_f_gap_without_noise": plain_avg.f_gap.last(),
    });
    Ok(Artifacts {
        files: vec![("trace.csv".into(), trace_csv(&avg, &traces))],
        summary: Summary::new("run-dp-fl", seed, assertions, guard_warnings(&obj, &run), data),
    })
}

/// `account-privacy`: composes a per-step guarantee into the run budget.
pub fn account_privacy_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let spec = cfg.privacy.as_ref().ok_or(ConfigError::Missing("privacy"))?;
    let budget = total_budget(spec)?;
    let tk = (spec.t * spec.k) as f64;
    let assertions = vec![
        Assertion::new(
            "eps_composition",
            (budget.eps_dp - tk.sqrt() * spec.eps_hat).abs() <= 1e-12 * budget.eps_dp.max(1.0),
            format!("eps_dp = {}", budget.eps_dp),
        ),
        Assertion::new(
            "delta_composition",
            (budget.delta_dp - tk * spec.delta_hat).abs() <= 1e-12 * budget.delta_dp.max(1e-300),
            format!("delta_dp = {}", budget.delta_dp),
        ),
    ];
    Ok(Artifacts {
        files: vec![("budget.json".into(), to_json(&budget))],
        summary: Summary::new("account-privacy", seed, assertions, vec![], json!({ "budget": budget })),
    })
}

/// `verify-sketch`: moment, Gram and tail certification per family.
pub fn verify_sketch_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let v = cfg.verify.as_ref().ok_or(ConfigError::Missing("verify"))?;
    let mut moment_rows = Vec::new();
    let mut gram_rows = Vec::new();
    let mut assertions = Vec::new();
    let mut reports = Vec::new();
    for &kind in &v.kinds {
        let b = if kind == SketchKind::Identity { v.d } else { v.b_sketch };
        let rep = verify_embedding_with(SketchSpec::new(kind, v.d, b, seed), v.trials, seed, v.a_override)?;
        for m in &rep.moments {
            moment_rows.push(vec![
                kind.name().into(),
                m.pair.clone().into(),
                m.a.into(),
                m.n_samples.into(),
                m.empirical_mean.into(),
                m.target.into(),
                m.stderr.into(),
                m.empirical_second_moment.into(),
                m.second_moment_bound.into(),
                m.pass.into(),
            ]);
        }
        for g in &rep.gram {
            gram_rows.push(vec![
                kind.name().into(),
                g.vector.clone().into(),
                g.max_z.into(),
                g.mean_norm_sq.into(),
                g.norm_bound.into(),
                (g.unbiased_pass && g.norm_pass).into(),
            ]);
        }
        assertions.push(Assertion::new(
            &format!("embedding_{}", kind.name()),
            rep.pass(),
            format!("alpha = {}, certified = {}", rep.alpha, rep.alpha_certified),
        ));
        reports.push(rep);
    }
    Ok(Artifacts {
        files: vec![
            (
                "moments.csv".into(),
                csv_bytes(
                    &header(&[
                        "kind", "pair", "a", "n", "mean", "target", "stderr", "second_moment", "bound", "pass",
                    ]),
                    &moment_rows,
                ),
            ),
            (
                "gram.csv".into(),
                csv_bytes(
                    &header(&["kind", "vector", "max_z", "mean_norm_sq", "norm_bound", "pass"]),
                    &gram_rows,
                ),
            ),
            ("embedding.json".into(), to_json(&reports)),
        ],
        summary: Summary::new("verify-sketch", seed, assertions, vec![], json!({ "kinds": v.kinds })),
    })
}

fn rule_json(r: &sketchfl::Result<(f64, f64)>) -> serde_json::Value {
    match r {
        Ok((eta, gamma)) => json!({ "eta": eta, "gamma": gamma }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// `attack`: conditions report, step rule and trajectory.
pub fn attack_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let a = cfg.attack.as_ref().ok_or(ConfigError::Missing("attack"))?;
    let op = a
        .sketch
        .map(|spec| SketchOperator::build(spec, a.sketch_round))
        .transpose()?;
    let problem = match (&a.observed_csv, &a.x_true) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let observed = read_vector_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            AttackProblem::from_observed(a.model.clone(), observed, op.clone())?
        }
        (None, Some(x)) => AttackProblem::observe(a.model.clone(), x, op.clone(), a.noise_sigma, seed)?,
        (None, None) => {
            return Err(ConfigError::Invalid {
                key: "attack.observed_csv".into(),
                message: "either observed_csv or x_true is required".into(),
            }
            .into())
        }
    };
    let est = measure_conditions(&problem, &a.region, a.samples, seed)?;
    let measured = step_size_rule(&est.measured_rate());
    let lemma = step_size_rule(&est.lemma_rate());
    let stats: Option<sketchfl::Result<SketchStats>> = op.as_ref().map(sketch_stats);
    let sketched = stats
        .as_ref()
        .and_then(|s| s.as_ref().ok())
        .map(|s| step_size_rule(&sketched_constants(&est, s)));

    let mut assertions = Vec::new();
    let mut warnings = Vec::new();
    if let Err(e) = &measured {
        warnings.push(format!("measured step rule: {e}"));
    }
    let eta = a.eta.or(measured.as_ref().ok().map(|r| r.0));
    let x0 = a.x0.clone().unwrap_or_else(|| {
        let mut rng = rng_from_seed(derive_stream(seed, domain::ATTACK, 0));
        a.region.sample(&mut rng)
    });
    let mut files = Vec::new();
    let mut cert_json = serde_json::Value::Null;
    let mut error = None;
    match eta {
        Some(eta) => {
            let traj = attack_gd(&problem, &x0, eta, a.t_attack)?;
            let rows: Vec<Vec<Cell>> = traj
                .xs
                .iter()
                .zip(&traj.losses)
                .enumerate()
                .map(|(t, (x, l))| {
                    let mut row = vec![Cell::from(t), Cell::from(*l)];
                    row.extend(x.iter().map(|v| Cell::from(*v)));
                    row
                })
                .collect();
            let mut head = header(&["step", "loss"]);
            head.extend((0..problem.dim()).map(|i| format!("x{i}")));
            files.push(("trajectory.csv".into(), csv_bytes(&head, &rows)));
            if let Ok((_, gamma)) = measured {
                let cert = rate_certificate(&traj, gamma, 0.0, a.stop_floor, Some(&a.region));
                assertions.push(Assertion::new(
                    "rate_certificate",
                    cert.pass,
                    format!("worst ratio {} against 1 - gamma = {}", cert.worst_ratio, cert.bound),
                ));
                cert_json = serde_json::to_value(&cert).expect("certificate serializes");
            }
            if let Some(x) = &a.x_true {
                let rel = dist_sq(traj.last(), x).sqrt() / norm(x).max(f64::MIN_POSITIVE);
                error = Some(rel);
                if let Some(target) = a.target_error {
                    assertions.push(Assertion::new(
                        "reconstruction_error",
                        rel <= target,
                        format!("relative error {rel:e} after {} steps", traj.xs.len() - 1),
                    ));
                }
            }
        }
        None => assertions.push(Assertion::new(
            "step_rule",
            false,
            "no step size: the measured constants violate the step rule and none is configured",
        )),
    }
    let probe = match (a.multi_start, eta) {
        (n, Some(eta)) if n > 0 => Some(unique_minimum_probe(&problem, &est, &a.region, n, eta, a.t_attack, seed)?),
        _ => None,
    };
    let report = json!({
        "estimates": est,
        "measured_rate": est.measured_rate(),
        "lemma_rate": est.lemma_rate(),
        "measured_step_rule": rule_json(&measured),
        "lemma_step_rule": rule_json(&lemma),
        "solution_step_rule": rule_json(&solution_step_rule(&est)),
        "sketch_stats": stats.map(|s| match s {
            Ok(s) => serde_json::to_value(s).expect("stats serialize"),
            Err(e) => json!({ "error": e.to_string() }),
        }),
        "sketched_step_rule": sketched.as_ref().map(rule_json),
        "certificate": cert_json,
        "relative_error": error,
        "probe": probe,
    });
    files.push(("conditions.json".into(), to_json(&report)));
    Ok(Artifacts {
        files,
        summary: Summary::new("attack", seed, assertions, warnings, json!({ "relative_error": error })),
    })
}

/// `sweep`: rounds and bits to a target accuracy per sketch size.
pub fn sweep_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let s = cfg.sweep.as_ref().ok_or(ConfigError::Missing("sweep"))?;
    let obj = cfg.objective()?.build()?;
    let run = seeded_run(cfg, &obj, seed)?;
    let d = obj.d;
    let b_values = s.b_values.clone().unwrap_or_else(|| vec![d, d / 2, d / 4, d / 8]);
    let result = sweep_communication(&obj, &run, &b_values, s.target_eps, s.max_rounds)?;
    let mut assertions = Vec::new();
    let mut warnings = Vec::new();
    for p in &result.points {
        if let Some(reason) = &p.unreachable {
            warnings.push(format!("b = {}: {reason}", p.b_sketch));
        }
    }
    assertions.push(Assertion::new(
        "bits_bookkeeping",
        result.points.iter().all(|p| p.total_bits == p.t_to_target.map(|t| t as u64 * p.per_round_bits)),
        "total_bits = per_round_bits * T_to_target",
    ));
    if let Some(limit) = s.max_bits_ratio {
        let ratio = result.bits_ratio();
        assertions.push(Assertion::new(
            "bits_within_band",
            ratio.is_some_and(|r| r <= limit),
            format!("max/min total bits = {ratio:?}, limit {limit}"),
        ));
    }
    Ok(Artifacts {
        files: vec![("sweep.csv".into(), sweep_rows(&result))],
        summary: Summary::new("sweep", seed, assertions, warnings, serde_json::to_value(&result).expect("sweep serializes")),
    })
}
