use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stiefel::Retraction;

/// Outer solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Riemannian gradient ascent with Sinkhorn inner solves.
    Rgas,
    /// Adaptive (preconditioned) variant of RGAS.
    Ragas,
    /// Riemannian supergradient ascent with exact (network simplex) inner solves.
    Rsgan,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Rgas, Algorithm::Ragas, Algorithm::Rsgan];

    /// Whether the inner problem is entropic (and `eta` matters).
    pub fn is_entropic(self) -> bool {
        !matches!(self, Algorithm::Rsgan)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Rgas => "rgas",
            Algorithm::Ragas => "ragas",
            Algorithm::Rsgan => "rsgan",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgas" => Ok(Algorithm::Rgas),
            "ragas" => Ok(Algorithm::Ragas),
            "rsgan" => Ok(Algorithm::Rsgan),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm `{other}` (expected rgas, ragas or rsgan)"
            ))),
        }
    }
}

/// How the step size (and, in theoretical mode, `η` and the inner tolerance)
/// are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StepRule {
    /// Use `gamma`, `eta` and `tol_inner` as configured.
    Practical,
    /// Derive `γ`, `η` and the inner tolerance from the smoothness constants
    /// `L₁`, `L₂` of the retraction and the Hoffman-type constant `θ̄`.
    /// `γ` and `η` are computed on the normalized cost scale.
    Theoretical { l1: f64, l2: f64, theta_bar: f64 },
}

impl StepRule {
    pub fn theoretical() -> Self {
        StepRule::Theoretical {
            l1: 1.0,
            l2: 1.0,
            theta_bar: 1.0,
        }
    }
}

/// Which plan is reported with the best subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalPlan {
    /// Exact OT plan for the projected cost at the best subspace. The reported
    /// value is then the unregularized projected Wasserstein cost there.
    Exact,
    /// The rounded Sinkhorn plan found at the best subspace.
    Entropic,
}

impl FromStr for FinalPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(FinalPlan::Exact),
            "entropic" => Ok(FinalPlan::Entropic),
            other => Err(Error::InvalidParameter(format!(
                "unknown final plan `{other}` (expected exact or entropic)"
            ))),
        }
    }
}

/// Parameters shared by all outer solvers.
///
/// `eta` and `tol_inner` refer to the cost divided by `‖C‖∞`; `gamma`
/// multiplies the Riemannian gradient in data units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Subspace dimension.
    pub k: usize,
    /// Entropic regularization on the normalized cost (RGAS, RAGAS).
    pub eta: f64,
    /// Step size for RGAS/RAGAS, or `γ₀` for RSGAN. `None` picks 0.01 for
    /// RGAS/RAGAS and `10/(k‖C‖∞)` for RSGAN.
    pub gamma: Option<f64>,
    /// RAGAS moving-average weight.
    pub beta: f64,
    /// RAGAS floor for the preconditioner, relative to `‖C‖∞²`.
    pub alpha: f64,
    pub retraction: Retraction,
    /// Stop when `‖U_{t+1} − U_t‖_F / ‖U_t‖_F` falls to this value.
    pub tol_outer: f64,
    /// Sinkhorn marginal tolerance; `None` means `tol_outer / 10`.
    pub tol_inner: Option<f64>,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    pub seed: u64,
    pub step_rule: StepRule,
    /// Independent random starts; the best final value wins.
    pub restarts: usize,
    pub final_plan: FinalPlan,
    /// Record the exact-plan stationarity surrogate at every iteration.
    pub diagnostics: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, k: usize) -> Self {
        Self {
            algorithm,
            k,
            eta: 0.2,
            gamma: None,
            beta: 0.8,
            alpha: 1e-6,
            retraction: Retraction::Qr,
            tol_outer: 1e-3,
            tol_inner: None,
            max_outer_iter: 1000,
            max_inner_iter: 100_000,
            seed: 0,
            step_rule: StepRule::Practical,
            restarts: 1,
            final_plan: FinalPlan::Exact,
            diagnostics: false,
        }
    }

    /// Checks every parameter range; solvers call this first.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k == 0 {
            return bad("k must be ≥ 1".into());
        }
        if self.algorithm.is_entropic() && !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be > 0", self.eta));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma = {g} must be > 0"));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(self.tol_outer > 0.0) {
            return bad(format!("tol_outer = {} must be > 0", self.tol_outer));
        }
        if let Some(t) = self.tol_inner {
            if !(t > 0.0) {
                return bad(format!("tol_inner = {t} must be > 0"));
            }
        }
        if self.max_outer_iter == 0 || self.max_inner_iter == 0 || self.restarts == 0 {
            return bad("iteration limits and restarts must be ≥ 1".into());
        }
        if let StepRule::Theoretical { l1, l2, theta_bar } = self.step_rule {
            if !(l1 > 0.0 && l2 > 0.0 && theta_bar > 0.0) {
                return bad("L1, L2 and theta_bar must be > 0".into());
            }
        }
        Ok(())
    }

    /// `(γ, η, inner tolerance)` actually used for `n` atoms when the raw cost
    /// has sup-norm `scale`.
    pub(crate) fn effective(&self, n: usize, scale: f64) -> (f64, f64, f64) {
        let eps = self.tol_outer;
        match self.step_rule {
            StepRule::Practical => {
                let gamma = self.gamma.unwrap_or(match self.algorithm {
                    Algorithm::Rsgan => 10.0 / (self.k as f64 * scale),
                    _ => 0.01,
                });
                (gamma, self.eta, self.tol_inner.unwrap_or(eps / 10.0))
            }
            StepRule::Theoretical { l1, l2, theta_bar } => {
                let log_n = (n.max(2) as f64).ln();
                let eta = eps * (1.0f64).min(1.0 / theta_bar) / (40.0 * log_n);
                match self.algorithm {
                    // The normalized-scale step, converted to data units.
                    Algorithm::Rgas => {
                        let gamma = 1.0 / ((8.0 * l1 * l1 + 16.0 * l2) + 16.0 * l1 * l1 / eta);
                        (gamma / scale, eta, eps / 10.0)
                    }
                    // Preconditioned directions do not depend on the cost scale.
                    Algorithm::Ragas => {
                        let a = self.alpha;
                        let gamma = a / (16.0 * l1 * l1 + 32.0 * l2 + 32.0 * l1 * l1 / eta);
                        (gamma, eta, eps * a.sqrt() / 20.0)
                    }
                    Algorithm::Rsgan => (1.0 / (self.k as f64 * scale), eta, eps / 10.0),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for a in Algorithm::ALL {
            let c = SolverConfig::new(a, 2);
            c.validate().unwrap();
            assert_eq!(c.beta, 0.8);
            assert_eq!(c.alpha, 1e-6);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let base = SolverConfig::new(Algorithm::Ragas, 2);
        let cases = [
            SolverConfig { k: 0, ..base.clone() },
            SolverConfig { eta: 0.0, ..base.clone() },
            SolverConfig { gamma: Some(-1.0), ..base.clone() },
            SolverConfig { beta: 1.0, ..base.clone() },
            SolverConfig { alpha: 0.0, ..base.clone() },
            SolverConfig { tol_outer: 0.0, ..base.clone() },
            SolverConfig { tol_inner: Some(0.0), ..base.clone() },
            SolverConfig { restarts: 0, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
        // η is irrelevant for the exact inner solver.
        SolverConfig {
            eta: 0.0,
            ..SolverConfig::new(Algorithm::Rsgan, 2)
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn effective_parameters() {
        let c = SolverConfig::new(Algorithm::Rgas, 2);
        assert_eq!(c.effective(100, 50.0), (0.01, 0.2, 1e-4));
        let c = SolverConfig::new(Algorithm::Rsgan, 4);
        assert_eq!(c.effective(100, 50.0).0, 10.0 / 200.0);
        let c = SolverConfig {
            step_rule: StepRule::theoretical(),
            ..c
        };
        assert_eq!(c.effective(100, 50.0).0, 1.0 / 200.0);

        // ε = 0.04, n = 3, L₁ = L₂ = θ̄ = 1, ‖C‖∞ = 2.
        let c = SolverConfig {
            tol_outer: 0.04,
            step_rule: StepRule::theoretical(),
            ..SolverConfig::new(Algorithm::Rgas, 2)
        };
        let (gamma, eta, tol) = c.effective(3, 2.0);
        let eta_expected = 0.04 / (40.0 * 3f64.ln());
        assert!((eta - eta_expected).abs() < 1e-15);
        let g_expected = 1.0 / (24.0 + 16.0 / eta_expected) / 2.0;
        assert!((gamma - g_expected).abs() < 1e-15);
        assert!((tol - 0.004).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
        assert_eq!("Exact".parse::<FinalPlan>().unwrap(), FinalPlan::Exact);
    }
}
