//! Sketched-gradient federated learning.
//!
//! * [`sketch`]: seeded sketch operators `R` with `sk = R` and `desk = Rᵀ`;
//! * [`cwe`]: Monte-Carlo certification of the coordinate-wise embedding
//!   moments and tails;
//! * [`objectives`]: federated objectives with exact constants;
//! * [`fed`]: the K-local-step simulator, plain and private;
//! * [`bounds`]: closed-form convergence and communication bounds;
//! * [`privacy`]: Gaussian-mechanism calibration and composition;
//! * [`attack`]: gradient-leakage attacks and their regularity conditions.

pub mod attack;
pub mod bounds;
pub mod cwe;
pub mod error;
pub mod fed;
pub mod linalg;
pub mod objectives;
pub mod privacy;
pub mod rng;
pub mod sketch;

pub use error::{Error, Result};
pub use fed::{run_fl, run_private_fl, RoundTrace, RunConfig};
pub use objectives::{gen_synthetic, FederatedObjective, ObjectiveKind};
pub use sketch::{SketchKind, SketchOperator, SketchSpec};
