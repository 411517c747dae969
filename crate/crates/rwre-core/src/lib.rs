//! Regeneration-based Monte Carlo estimators for the averaged large-deviation
//! behavior of random walks in i.i.d. random environments, cross-validated
//! against exact enumeration and closed-form references.
//!
//! The crate is generic over the floating-point scalar via [`Scalar`]; the
//! `*64` aliases at the crate root fix `f64` for everyday use.

pub mod environment;
pub(crate) mod linalg;
pub mod lmgf;
pub mod oracle;
pub mod rate;
mod scalar;
pub mod tilted;
pub mod walk_sim;

pub use scalar::Scalar;

/// Crate version, for provenance records written by downstream tools.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type TransitionKernel64 = environment::TransitionKernel<f64>;
pub type EnvironmentLaw64 = environment::EnvironmentLaw<f64>;
pub type NestlingLabel64 = environment::NestlingLabel<f64>;
pub type CramerClosedForm64 = oracle::CramerClosedForm<f64>;
pub type CycleEnsemble64 = walk_sim::CycleEnsemble<f64>;
pub type PsiEstimate64 = lmgf::PsiEstimate<f64>;
pub type LmgfEstimate64 = lmgf::LmgfEstimate<f64>;
pub type VelocityEstimate64 = rate::VelocityEstimate<f64>;
pub type RatePoint64 = rate::RatePoint<f64>;
pub type SolverParams64 = rate::SolverParams<f64>;
pub type CylinderFunction64 = tilted::CylinderFunction<f64>;
pub type TiltedEstimate64 = tilted::TiltedEstimate<f64>;
