//! Gradient-leakage attacks.

pub mod conditions;
pub mod fixtures;
pub mod model;

pub use conditions::{
    check_non_critical, check_semi_lipschitz, check_semi_smooth, check_semi_strong_convex, measure_conditions,
    rate_certificate, sketch_stats, sketched_constants, solution_step_rule, step_size_rule, unique_minimum_probe,
    ConditionEstimates, RateCertificate, RateConstants, Region, SketchStats, UniqueMinReport, Violation,
};
pub use model::{attack_gd, AttackModel, AttackProblem, AttackTrajectory, ModelKind};

use crate::error::Result;
use crate::privacy::gaussian_sigma;

/// Gaussian noise scale that makes the released gradient `(ε, δ)`-private
/// for inputs in the ball of radius `radius`.
pub fn dp_noise_sigma(model: &AttackModel, radius: f64, eps: f64, delta: f64) -> Result<f64> {
    gaussian_sigma(model.grad_w_bound(radius), eps, delta)
}
