//! Projection robust Wasserstein (PRW) distances between discrete measures.
//!
//! The PRW distance is the largest 2-Wasserstein cost over all orthogonal
//! projections onto `k`-dimensional subspaces. The crate solves that max-min
//! problem with Riemannian gradient ascent on the Stiefel manifold, using
//! stabilized Sinkhorn (RGAS, RAGAS) or a network simplex (RSGAN) for the
//! inner transport problem.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropic_ot;
pub mod error;
pub mod exact_ot;
pub mod experiments;
pub mod measures;
pub mod prw;
pub mod scalar;
pub mod stiefel;

pub use error::{Error, Result};
pub use scalar::Real;

pub use entropic_ot::{entropic_objective, projected_cost, round_to_polytope, sinkhorn_solve, SinkhornState, TransportPlan};
pub use exact_ot::{brute_force_ot, exact_ot_solve, ExactOtSolution};
pub use measures::{cost_matrix, CostContext, DiscreteMeasure};
pub use prw::{solve, Algorithm, FinalPlan, SolveResult, SolverConfig, StepRule, Termination};
pub use stiefel::{random_stiefel, retract, tangent_project, Retraction, StiefelPoint, TangentVector};

/// Double-precision measure.
pub type Measure = DiscreteMeasure<f64>;
/// Double-precision point on the Stiefel manifold.
pub type Subspace = StiefelPoint<f64>;
/// Double-precision transport plan.
pub type Plan = TransportPlan<f64>;
/// Double-precision solve result.
pub type PrwResult = SolveResult<f64>;
