//! RGAS, RAGAS and RSGAN outer loops.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, FinalPlan, SolverConfig};
use super::gradient::{correlation_apply, stationarity_surrogate};
use crate::entropic_ot::{entropy, projected_cost, sinkhorn_solve_warm, SinkhornState, TransportPlan};
use crate::error::{Error, Result};
use crate::exact_ot::{exact_ot_solve, ExactOtSolver};
use crate::measures::{cost_matrix, DiscreteMeasure};
use crate::scalar::Real;
use crate::stiefel::{random_stiefel, retract, tangent_project, StiefelPoint, TangentVector};

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The relative change of `U` fell below `tol_outer`.
    TolReached,
    MaxIter,
    /// More than three consecutive inner solves missed their tolerance.
    InnerFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::TolReached => "tol_reached",
            Termination::MaxIter => "max_iter",
            Termination::InnerFailure => "inner_failure",
        }
    }
}

/// One outer iteration, evaluated at `U_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `f_η(U_t) = ⟨C_U, π⟩ − η‖C‖∞H(π)` for entropic solvers, `⟨C_U, π⟩` for RSGAN.
    pub objective: f64,
    /// `‖P_{T_U St}(2V_π U)‖_F`.
    pub grad_norm: f64,
    /// `‖U_{t+1} − U_t‖_F / ‖U_t‖_F`.
    pub relative_change: f64,
    pub step_size: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    /// Exact-plan stationarity surrogate, when diagnostics are on.
    pub stationarity: Option<f64>,
    /// Seconds since the solve started.
    pub wall_time: f64,
}

impl IterationRecord {
    /// Equality ignoring wall time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        Self {
            wall_time: 0.0,
            ..self.clone()
        } == Self {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

/// Outcome of a PRW solve.
#[derive(Debug, Clone)]
pub struct SolveResult<T: Real> {
    /// Best subspace found.
    pub u: StiefelPoint<T>,
    /// Plan reported with `u` (see [`FinalPlan`]).
    pub plan: TransportPlan<T>,
    /// `⟨C_U, π⟩` in data units for the reported pair: the squared PRW estimate.
    pub prw_sq_value: T,
    /// Best value of the outer objective along the run.
    pub best_objective: T,
    /// Linear cost of the inner solver's own plan at `u`.
    pub inner_plan_value: T,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub outer_iterations: usize,
    /// Iteration at which the best objective was seen.
    pub best_iteration: usize,
    /// Random start that produced this result.
    pub restart: usize,
    /// Times an iterate drifted off the manifold and was re-orthonormalized.
    pub reorthonormalizations: usize,
    pub wall_time: f64,
    pub algorithm: Algorithm,
    pub k: usize,
}

impl<T: Real> SolveResult<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::TolReached
    }
}

/// Runs the algorithm named in `config`.
pub fn solve<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, config: &SolverConfig) -> Result<SolveResult<T>> {
    config.validate()?;
    let d = mu.dim();
    if nu.dim() != d {
        return Err(Error::DimensionMismatch(format!("measures in R^{d} and R^{}", nu.dim())));
    }
    if config.k > d {
        return Err(Error::InvalidParameter(format!("k = {} exceeds the dimension {d}", config.k)));
    }
    let start = Instant::now();
    let scale = cost_matrix(mu, nu)?.max_abs;
    let scale = if scale > T::zero() { scale } else { T::one() };
    let problem = Problem {
        mu,
        nu,
        config,
        scale,
        start,
    };
    let mut best: Option<SolveResult<T>> = None;
    for restart in 0..config.restarts {
        let u0 = random_stiefel(d, config.k, config.seed.wrapping_add(restart as u64))?;
        let mut run = problem.run(u0)?;
        run.restart = restart;
        if best.as_ref().is_none_or(|b| run.prw_sq_value > b.prw_sq_value) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.wall_time = start.elapsed().as_secs_f64();
    Ok(best)
}

fn expect_algorithm(config: &SolverConfig, algorithm: Algorithm) -> Result<()> {
    if config.algorithm != algorithm {
        return Err(Error::InvalidParameter(format!(
            "configuration is for {}, not {algorithm}",
            config.algorithm
        )));
    }
    Ok(())
}

/// Riemannian gradient ascent with Sinkhorn inner solves.
pub fn rgas_solve<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, config: &SolverConfig) -> Result<SolveResult<T>> {
    expect_algorithm(config, Algorithm::Rgas)?;
    solve(mu, nu, config)
}

/// Adaptive Riemannian gradient ascent with Sinkhorn inner solves.
pub fn ragas_solve<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, config: &SolverConfig) -> Result<SolveResult<T>> {
    expect_algorithm(config, Algorithm::Ragas)?;
    solve(mu, nu, config)
}

/// Riemannian supergradient ascent with exact (network simplex) inner solves
/// and step `γ₀/√(t+1)`.
pub fn rsgan_solve<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, config: &SolverConfig) -> Result<SolveResult<T>> {
    expect_algorithm(config, Algorithm::Rsgan)?;
    solve(mu, nu, config)
}

/// Moving averages and running maxima of the RAGAS preconditioner.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState<T: Real> {
    pub p: DVector<T>,
    pub q: DVector<T>,
    pub p_hat: DVector<T>,
    pub q_hat: DVector<T>,
}

impl<T: Real> AdaptiveState<T> {
    /// `p = q = 0`, `p̂ = q̂ = α‖C‖∞²·1`.
    pub fn new(d: usize, k: usize, alpha: T, scale: T) -> Self {
        let floor = alpha * scale * scale;
        Self {
            p: DVector::zeros(d),
            q: DVector::zeros(k),
            p_hat: DVector::from_element(d, floor),
            q_hat: DVector::from_element(k, floor),
        }
    }

    /// Folds in the gradient `G` and returns the preconditioned direction
    /// `P_{T_U St}(Diag(p̂)^{-1/4} G Diag(q̂)^{-1/4})`.
    pub fn precondition(&mut self, u: &StiefelPoint<T>, g: &DMatrix<T>, beta: T) -> Result<TangentVector<T>> {
        let (d, k) = g.shape();
        let keep = T::one() - beta;
        for i in 0..d {
            let row = g.row(i).norm_squared() / T::of_usize(k);
            self.p[i] = beta * self.p[i] + keep * row;
            self.p_hat[i] = self.p_hat[i].max(self.p[i]);
        }
        for j in 0..k {
            let col = g.column(j).norm_squared() / T::of_usize(d);
            self.q[j] = beta * self.q[j] + keep * col;
            self.q_hat[j] = self.q_hat[j].max(self.q[j]);
        }
        let quarter = T::of(-0.25);
        let left = self.p_hat.map(|v| v.powf(quarter));
        let right = self.q_hat.map(|v| v.powf(quarter));
        let scaled = DMatrix::from_fn(d, k, |i, j| left[i] * g[(i, j)] * right[j]);
        tangent_project(u, &scaled)
    }
}

struct Problem<'a, T: Real> {
    mu: &'a DiscreteMeasure<T>,
    nu: &'a DiscreteMeasure<T>,
    config: &'a SolverConfig,
    scale: T,
    start: Instant,
}

/// Inner solution at one iterate.
struct Inner<T: Real> {
    plan: TransportPlan<T>,
    objective: T,
    iterations: usize,
    converged: bool,
}

impl<T: Real> Problem<'_, T> {
    fn run(&self, mut u: StiefelPoint<T>) -> Result<SolveResult<T>> {
        let (mu, nu, cfg) = (self.mu, self.nu, self.config);
        let (d, k) = u.shape();
        let n = mu.len().max(nu.len());
        let (gamma, eta, tol_inner) = cfg.effective(n, self.scale.as_f64());
        let (gamma, eta, tol_inner) = (T::of(gamma), T::of(eta), T::of(tol_inner));
        let beta = T::of(cfg.beta);
        let drift_limit = T::of(1e-8);
        let root_k = T::of_usize(k).sqrt();

        let mut adaptive = AdaptiveState::new(d, k, T::of(cfg.alpha), self.scale);
        let mut warm: Option<SinkhornState<T>> = None;
        let mut exact = match cfg.algorithm {
            Algorithm::Rsgan => Some(ExactOtSolver::new(mu.weights(), nu.weights())?),
            _ => None,
        };

        let mut history = Vec::new();
        let mut best: Option<(T, usize, StiefelPoint<T>, TransportPlan<T>)> = None;
        let mut failures = 0usize;
        let mut reorth = 0usize;
        let mut termination = Termination::MaxIter;

        for t in 0..cfg.max_outer_iter {
            let cost = projected_cost(mu, nu, &u)?;
            let inner = match exact.as_mut() {
                Some(solver) => {
                    let s = solver.solve(&cost)?;
                    Inner {
                        objective: s.value,
                        plan: s.plan,
                        iterations: s.iterations,
                        converged: true,
                    }
                }
                None => {
                    let normalized = &cost / self.scale;
                    let out = sinkhorn_solve_warm(
                        &normalized,
                        mu.weights(),
                        nu.weights(),
                        eta,
                        tol_inner,
                        cfg.max_inner_iter,
                        warm.as_ref(),
                    )?;
                    warm = Some(out.state);
                    let reg = out.plan.linear_cost(&normalized) - eta * entropy(out.plan.matrix());
                    Inner {
                        objective: reg * self.scale,
                        plan: out.plan,
                        iterations: out.iterations,
                        converged: out.converged,
                    }
                }
            };
            if !inner.objective.is_finite() {
                return Err(Error::NonFinite(format!("objective at iteration {t}")));
            }
            failures = if inner.converged { 0 } else { failures + 1 };

            let g = tangent_project(&u, &(correlation_apply(&inner.plan, mu, nu, &u)? * T::of(2.0)))?;
            let stationarity = if cfg.diagnostics {
                Some(stationarity_surrogate(mu, nu, &u)?.as_f64())
            } else {
                None
            };
            let mut record = IterationRecord {
                iteration: t,
                objective: inner.objective.as_f64(),
                grad_norm: g.norm().as_f64(),
                relative_change: 0.0,
                step_size: 0.0,
                inner_iterations: inner.iterations,
                inner_converged: inner.converged,
                stationarity,
                wall_time: 0.0,
            };
            if best.as_ref().is_none_or(|b| inner.objective > b.0) {
                best = Some((inner.objective, t, u.clone(), inner.plan));
            }

            // Every subspace gives the same cost when k = d.
            if k == d {
                record.wall_time = self.start.elapsed().as_secs_f64();
                history.push(record);
                termination = Termination::TolReached;
                break;
            }

            let direction = match cfg.algorithm {
                Algorithm::Ragas => adaptive.precondition(&u, g.matrix(), beta)?,
                _ => g,
            };
            let mut step = match cfg.algorithm {
                Algorithm::Rsgan => gamma / T::of_usize(t + 1).sqrt(),
                _ => gamma,
            };
            let next = loop {
                match retract(&u, &direction.scale(step), cfg.retraction) {
                    Err(Error::SingularCayley) if step > T::of(1e-12) => step *= T::of(0.5),
                    other => break other?,
                }
            };
            let next = if next.orthonormality_error() > drift_limit {
                reorth += 1;
                log::debug!("re-orthonormalized iterate {t}");
                next.reorthonormalize()
            } else {
                next
            };
            let change = (next.matrix() - u.matrix()).norm() / root_k;
            record.relative_change = change.as_f64();
            record.step_size = step.as_f64();
            record.wall_time = self.start.elapsed().as_secs_f64();
            history.push(record);
            u = next;

            if change <= T::of(cfg.tol_outer) {
                termination = Termination::TolReached;
                break;
            }
            if failures > 3 {
                termination = Termination::InnerFailure;
                break;
            }
        }

        let (best_objective, best_iteration, best_u, inner_plan) = best.expect("at least one iteration");
        let cost = projected_cost(mu, nu, &best_u)?;
        let inner_plan_value = inner_plan.linear_cost(&cost);
        let (plan, prw_sq_value) = match (cfg.final_plan, cfg.algorithm) {
            (FinalPlan::Exact, Algorithm::Rgas | Algorithm::Ragas) => {
                let s = exact_ot_solve(&cost, mu.weights(), nu.weights())?;
                (s.plan, s.value)
            }
            _ => (inner_plan, inner_plan_value),
        };
        Ok(SolveResult {
            u: best_u,
            plan,
            prw_sq_value: prw_sq_value.max(T::zero()),
            best_objective,
            inner_plan_value,
            outer_iterations: history.len(),
            history,
            termination,
            best_iteration,
            restart: 0,
            reorthonormalizations: reorth,
            wall_time: self.start.elapsed().as_secs_f64(),
            algorithm: cfg.algorithm,
            k,
        })
    }
}
