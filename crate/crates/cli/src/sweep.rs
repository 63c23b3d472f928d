//! Communication sweep over sketch sizes.

use rayon::prelude::*;
use serde::Serialize;

use sketchfl::bounds::strongly_convex_floor;
use sketchfl::fed::{run_many, RunConfig, SeedAverage};
use sketchfl::objectives::FederatedObjective;

use crate::experiment::bound_params;
use crate::output::{csv_bytes, header, Cell};

/// Outcome for one sketch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub b_sketch: usize,
    pub alpha: f64,
    pub eta_local: f64,
    pub per_round_bits: u64,
    /// First round whose seed-averaged gap is at most the target.
    pub t_to_target: Option<usize>,
    pub total_bits: Option<u64>,
    pub final_gap: f64,
    /// Why the target was not reached, when it was not.
    pub unreachable: Option<String>,
}

/// Sweep over sketch sizes at a fixed target accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub target_eps: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Largest over smallest total bits, when every point reached the target.
    pub fn bits_ratio(&self) -> Option<f64> {
        let bits: Option<Vec<u64>> = self.points.iter().map(|p| p.total_bits).collect();
        let bits = bits?;
        let lo = *bits.iter().min()?;
        let hi = *bits.iter().max()?;
        (lo > 0).then(|| hi as f64 / lo as f64)
    }
}

/// For each `b`, runs `base` with `η_local = 1/(8(1+α)LK)` until the
/// seed-averaged `f(w^t) − f*` is at most `target_eps`, or for
/// `max_rounds` rounds. A point whose noise floor exceeds the target is
/// reported as unreachable without being run.
pub fn sweep_communication(
    obj: &FederatedObjective,
    base: &RunConfig,
    b_values: &[usize],
    target_eps: f64,
    max_rounds: usize,
) -> sketchfl::Result<SweepResult> {
    let l = obj.constants().l;
    let points = b_values
        .par_iter()
        .map(|&b| {
            let mut cfg = base.clone();
            cfg.sketch.d = obj.d;
            cfg.sketch.b_sketch = b;
            cfg.t = max_rounds;
            let alpha = cfg.alpha();
            cfg.eta_local = 1.0 / (8.0 * (1.0 + alpha) * l * cfg.k as f64);
            let per_round_bits = sketchfl::fed::communication_bits(&cfg, obj.n_clients()).0;
            let mut point = SweepPoint {
                b_sketch: b,
                alpha,
                eta_local: cfg.eta_local,
                per_round_bits,
                t_to_target: None,
                total_bits: None,
                final_gap: f64::NAN,
                unreachable: None,
            };
            let p = bound_params(obj, &cfg);
            if p.mu > 0.0 {
                let floor = strongly_convex_floor(&p);
                if floor > target_eps {
                    point.unreachable = Some(format!("noise floor {floor:e} exceeds target {target_eps:e}"));
                    return Ok(point);
                }
            }
            let avg = SeedAverage::new(&run_many(obj, &cfg)?);
            point.final_gap = *avg.f_gap.last().unwrap_or(&f64::NAN);
            match avg.f_gap.iter().position(|g| *g <= target_eps) {
                Some(t) => {
                    point.t_to_target = Some(t);
                    point.total_bits = Some(t as u64 * per_round_bits);
                }
                None => point.unreachable = Some(format!("target not reached within {max_rounds} rounds")),
            }
            Ok(point)
        })
        .collect::<sketchfl::Result<Vec<_>>>()?;
    Ok(SweepResult { target_eps, points })
}

pub fn sweep_rows(result: &SweepResult) -> Vec<u8> {
    let rows: Vec<Vec<Cell>> = result
        .points
        .iter()
        .map(|p| {
            vec![
                p.b_sketch.into(),
                p.alpha.into(),
                p.eta_local.into(),
                p.per_round_bits.into(),
                p.t_to_target.map_or(Cell::Empty, Cell::from),
                p.total_bits.map_or(Cell::Empty, Cell::from),
                p.final_gap.into(),
            ]
        })
        .collect();
    csv_bytes(
        &header(&["b_sketch", "alpha", "eta_local", "per_round_bits", "t_to_target", "total_bits", "final_gap"]),
        &rows,
    )
}
