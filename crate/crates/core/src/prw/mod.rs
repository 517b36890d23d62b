//! Projection robust Wasserstein solvers: the max-min problem
//! `max_{U ∈ St(d,k)} min_{π ∈ Π(μ,ν)} Σ π_ij ‖Uᵀ(x_i − y_j)‖²`.

mod config;
mod gradient;
mod solver;

pub use config::{Algorithm, FinalPlan, SolverConfig, StepRule};
pub use gradient::{correlation_apply, prw_objective, riemannian_gradient, stationarity_surrogate, subspace_error};
pub use solver::{
    ragas_solve, rgas_solve, rsgan_solve, solve, AdaptiveState, IterationRecord, SolveResult, Termination,
};
