//! Entropic regularized optimal transport: stabilized Sinkhorn scaling and
//! rounding onto the transportation polytope.
//!
//! The scaling iterates are kept as `B = diag(a) K̃ diag(b)` with
//! `K̃_ij = exp(α⁰_i + β⁰_j − C_ij/η)`. Whenever the residual scalings `a`, `b`
//! leave `[e^{-ABSORB}, e^{ABSORB}]` they are absorbed into the log potentials
//! `α⁰`, `β⁰` and the kernel is rebuilt, so nothing under- or overflows even
//! when `C/η` is in the thousands. Rows or columns whose kernel sums vanish
//! fall back to an exact log-sum-exp update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measures::{squared_distances, DiscreteMeasure};
use crate::scalar::Real;
use crate::stiefel::StiefelPoint;

/// A coupling `π ≥ 0` together with the marginals it is meant to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T: Real> {
    matrix: DMatrix<T>,
    row_marginal: DVector<T>,
    col_marginal: DVector<T>,
}

impl<T: Real> TransportPlan<T> {
    /// Checks nonnegativity and that both marginals hold within `1e-9` in ℓ1.
    pub fn new(matrix: DMatrix<T>, row_marginal: DVector<T>, col_marginal: DVector<T>) -> Result<Self> {
        check_marginal_shapes(&matrix, &row_marginal, &col_marginal)?;
        if matrix.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidParameter("plan entries must be finite and ≥ 0".into()));
        }
        let plan = Self {
            matrix,
            row_marginal,
            col_marginal,
        };
        let err = plan.marginal_error();
        if err > T::tolerance(1e-9, 1e3) {
            return Err(Error::InvalidParameter(format!("plan violates its marginals by {err}")));
        }
        Ok(plan)
    }

    pub(crate) fn from_parts(matrix: DMatrix<T>, row_marginal: DVector<T>, col_marginal: DVector<T>) -> Self {
        Self {
            matrix,
            row_marginal,
            col_marginal,
        }
    }

    /// The independent coupling `r cᵀ`.
    pub fn product(r: &DVector<T>, c: &DVector<T>) -> Self {
        Self {
            matrix: r * c.transpose(),
            row_marginal: r.clone(),
            col_marginal: c.clone(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// Target row marginal `r`.
    pub fn row_marginal(&self) -> &DVector<T> {
        &self.row_marginal
    }

    /// Target column marginal `c`.
    pub fn col_marginal(&self) -> &DVector<T> {
        &self.col_marginal
    }

    /// `π 1`.
    pub fn row_sums(&self) -> DVector<T> {
        row_sums(&self.matrix)
    }

    /// `πᵀ 1`.
    pub fn col_sums(&self) -> DVector<T> {
        self.matrix.row_sum().transpose()
    }

    /// `‖π1 − r‖₁ + ‖πᵀ1 − c‖₁`.
    pub fn marginal_error(&self) -> T {
        l1_dist(&self.row_sums(), &self.row_marginal) + l1_dist(&self.col_sums(), &self.col_marginal)
    }

    /// Largest per-coordinate marginal violation.
    pub fn marginal_error_max(&self) -> T {
        (self.row_sums() - &self.row_marginal)
            .amax()
            .max((self.col_sums() - &self.col_marginal).amax())
    }

    /// `⟨C, π⟩`.
    pub fn linear_cost(&self, cost: &DMatrix<T>) -> T {
        cost.dot(&self.matrix)
    }
}

fn row_sums<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    m.column_sum()
}

fn l1_dist<T: Real>(a: &DVector<T>, b: &DVector<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |s, (x, y)| s + (*x - *y).abs())
}

fn check_marginal_shapes<T: Real>(m: &DMatrix<T>, r: &DVector<T>, c: &DVector<T>) -> Result<()> {
    if m.nrows() != r.len() || m.ncols() != c.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}×{}, marginals have lengths {} and {}",
            m.nrows(),
            m.ncols(),
            r.len(),
            c.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_simplex_pair<T: Real>(r: &DVector<T>, c: &DVector<T>) -> Result<()> {
    for (name, v) in [("row", r), ("column", c)] {
        if v.is_empty() {
            return Err(Error::InvalidParameter(format!("empty {name} marginal")));
        }
        if v.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidParameter(format!("{name} marginal has a negative entry")));
        }
    }
    let (sr, sc) = (r.sum(), c.sum());
    let tol = T::tolerance(1e-9, 1e3);
    if (sr - T::one()).abs() > tol || (sc - T::one()).abs() > tol {
        return Err(Error::InvalidParameter(format!("marginals sum to {sr} and {sc}, expected 1")));
    }
    Ok(())
}

/// `C_ij = ‖Uᵀx_i − Uᵀy_j‖²`, computed from the `k`-dimensional projections.
pub fn projected_cost<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
) -> Result<DMatrix<T>> {
    let d = u.shape().0;
    if mu.dim() != d || nu.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "measures in R^{} and R^{}, projection from R^{d}",
            mu.dim(),
            nu.dim()
        )));
    }
    let xu = mu.points() * u.matrix();
    let yu = nu.points() * u.matrix();
    Ok(squared_distances(&xu, &yu))
}

/// Dual potentials of a Sinkhorn run, `B = diag(e^{log_u}) e^{−C/η} diag(e^{log_v})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState<T: Real> {
    pub log_u: DVector<T>,
    pub log_v: DVector<T>,
    pub eta: T,
}

/// Result of [`sinkhorn_solve`].
#[derive(Debug, Clone)]
pub struct SinkhornOutput<T: Real> {
    /// Rounded, exactly feasible plan.
    pub plan: TransportPlan<T>,
    pub state: SinkhornState<T>,
    pub iterations: usize,
    /// Whether the marginal tolerance was met before `max_iter`.
    pub converged: bool,
    /// `‖r(B) − r‖₁ + ‖c(B) − c‖₁` of the unrounded scaling matrix.
    pub marginal_error: T,
}

const ABSORB: f64 = 50.0;

/// Log-sum-exp over an iterator, stable for very negative inputs.
fn log_sum_exp<T: Real>(values: impl Iterator<Item = T> + Clone) -> T {
    let mut max: Option<T> = None;
    for v in values.clone() {
        max = Some(match max {
            Some(m) if m >= v => m,
            _ => v,
        });
    }
    let Some(max) = max else {
        return T::zero();
    };
    let s = values.fold(T::zero(), |s, v| s + (v - max).exp());
    max + s.ln()
}

/// Alternating row/column scaling for one entropic OT instance.
///
/// [`sinkhorn_solve`] drives this to convergence; the type is public so the
/// iteration can be inspected step by step.
#[derive(Debug, Clone)]
pub struct Sinkhorn<'a, T: Real> {
    neg_cost_over_eta: DMatrix<T>,
    r: &'a DVector<T>,
    c: &'a DVector<T>,
    log_r: DVector<T>,
    log_c: DVector<T>,
    eta: T,
    alpha0: DVector<T>,
    beta0: DVector<T>,
    kernel: DMatrix<T>,
    a: DVector<T>,
    b: DVector<T>,
    iterations: usize,
}

impl<'a, T: Real> Sinkhorn<'a, T> {
    /// Sets up the iteration and performs the first (log-domain) row and
    /// column update. Marginals must be strictly positive; `warm` supplies
    /// column potentials from a previous solve.
    pub fn new(
        cost: &DMatrix<T>,
        r: &'a DVector<T>,
        c: &'a DVector<T>,
        eta: T,
        warm: Option<&SinkhornState<T>>,
    ) -> Result<Self> {
        check_marginal_shapes(cost, r, c)?;
        if !(eta > T::zero()) {
            return Err(Error::InvalidParameter(format!("η = {eta} must be > 0")));
        }
        if cost.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        if r.iter().chain(c.iter()).any(|w| !(*w > T::zero())) {
            return Err(Error::InvalidParameter("Sinkhorn needs strictly positive marginals".into()));
        }
        let (n, m) = cost.shape();
        let beta0 = match warm {
            Some(s) if s.log_v.len() == m && s.log_v.iter().all(|v| v.is_finite()) => {
                // Potentials scale with η; rescale if the regularization changed.
                &s.log_v * (s.eta / eta)
            }
            _ => DVector::zeros(m),
        };
        let mut it = Self {
            neg_cost_over_eta: cost / (-eta),
            r,
            c,
            log_r: r.map(|v| v.ln()),
            log_c: c.map(|v| v.ln()),
            eta,
            alpha0: DVector::zeros(n),
            beta0,
            kernel: DMatrix::zeros(n, m),
            a: DVector::from_element(n, T::one()),
            b: DVector::from_element(m, T::one()),
            iterations: 0,
        };
        it.log_domain_iteration();
        Ok(it)
    }

    fn absorb(&mut self) {
        for (p, s) in self.alpha0.iter_mut().zip(self.a.iter_mut()) {
            *p += s.ln();
            *s = T::one();
        }
        for (p, s) in self.beta0.iter_mut().zip(self.b.iter_mut()) {
            *p += s.ln();
            *s = T::one();
        }
    }

    fn rebuild_kernel(&mut self) {
        let (n, m) = self.kernel.shape();
        for j in 0..m {
            let bj = self.beta0[j];
            let src = self.neg_cost_over_eta.column(j);
            let mut dst = self.kernel.column_mut(j);
            for i in 0..n {
                dst[i] = (self.alpha0[i] + bj + src[i]).exp();
            }
        }
    }

    /// Exact row then column update via log-sum-exp, then a fresh kernel.
    fn log_domain_iteration(&mut self) {
        self.absorb();
        let (n, m) = self.kernel.shape();
        let g = &self.neg_cost_over_eta;
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| self.beta0[j] + g[(i, j)]));
            self.alpha0[i] = self.log_r[i] - lse;
        }
        for j in 0..m {
            let col = g.column(j);
            let lse = log_sum_exp((0..n).map(|i| self.alpha0[i] + col[i]));
            self.beta0[j] = self.log_c[j] - lse;
        }
        self.rebuild_kernel();
        self.iterations += 1;
    }

    /// One row update followed by one column update.
    pub fn step(&mut self) {
        let kb = &self.kernel * &self.b;
        if !self.scale_into(&kb, true) {
            self.log_domain_iteration();
            return;
        }
        let ka = self.kernel.tr_mul(&self.a);
        if !self.scale_into(&ka, false) {
            self.log_domain_iteration();
            return;
        }
        self.iterations += 1;
        let limit = T::of(ABSORB);
        let out_of_range = self
            .a
            .iter()
            .chain(self.b.iter())
            .any(|s| s.ln().abs() > limit);
        if out_of_range {
            self.absorb();
            self.rebuild_kernel();
        }
    }

    /// `scaling = target / sums`; returns false (leaving state untouched) if a
    /// sum underflowed.
    fn scale_into(&mut self, sums: &DVector<T>, rows: bool) -> bool {
        let ok = sums.iter().all(|s| *s > T::zero() && s.is_finite());
        if !ok {
            return false;
        }
        if rows {
            self.a.zip_zip_apply(sums, self.r, |a, s, t| *a = t / s);
        } else {
            self.b.zip_zip_apply(sums, self.c, |b, s, t| *b = t / s);
        }
        true
    }

    /// `‖r(B) − r‖₁ + ‖c(B) − c‖₁` for the current scaling matrix.
    pub fn marginal_error(&self) -> T {
        let rows = (&self.kernel * &self.b).component_mul(&self.a);
        let cols = self.kernel.tr_mul(&self.a).component_mul(&self.b);
        l1_dist(&rows, self.r) + l1_dist(&cols, self.c)
    }

    /// `1ᵀB1 − ⟨log u, r⟩ − ⟨log v, c⟩`, the convex function Sinkhorn minimizes.
    pub fn dual_objective(&self) -> T {
        let state = self.state();
        let mass = self.kernel.tr_mul(&self.a).dot(&self.b);
        mass - state.log_u.dot(self.r) - state.log_v.dot(self.c)
    }

    /// The current unrounded scaling matrix `B`.
    pub fn scaling_matrix(&self) -> DMatrix<T> {
        let mut out = self.kernel.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let bj = self.b[j];
            col.zip_apply(&self.a, |v, a| *v *= a * bj);
        }
        out
    }

    pub fn state(&self) -> SinkhornState<T> {
        SinkhornState {
            log_u: &self.alpha0 + self.a.map(|v| v.ln()),
            log_v: &self.beta0 + self.b.map(|v| v.ln()),
            eta: self.eta,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Solves `min ⟨C, π⟩ − ηH(π)` over `Π(r, c)` by Sinkhorn scaling until
/// `‖r(B) − r‖₁ + ‖c(B) − c‖₁ ≤ tol`, then rounds onto `Π(r, c)`.
///
/// Hitting `max_iter` is not an error: the rounded last iterate is returned
/// with `converged = false`. Zero-weight atoms get zero mass.
pub fn sinkhorn_solve<T: Real>(
    cost: &DMatrix<T>,
    r: &DVector<T>,
    c: &DVector<T>,
    eta: T,
    tol: T,
    max_iter: usize,
) -> Result<SinkhornOutput<T>> {
    sinkhorn_solve_warm(cost, r, c, eta, tol, max_iter, None)
}

/// [`sinkhorn_solve`] starting from the column potentials of a previous run.
pub fn sinkhorn_solve_warm<T: Real>(
    cost: &DMatrix<T>,
    r: &DVector<T>,
    c: &DVector<T>,
    eta: T,
    tol: T,
    max_iter: usize,
    warm: Option<&SinkhornState<T>>,
) -> Result<SinkhornOutput<T>> {
    check_marginal_shapes(cost, r, c)?;
    check_simplex_pair(r, c)?;
    if !(tol > T::zero()) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be > 0")));
    }
    let rows: Vec<usize> = (0..r.len()).filter(|&i| r[i] > T::zero()).collect();
    let cols: Vec<usize> = (0..c.len()).filter(|&j| c[j] > T::zero()).collect();
    if rows.len() == r.len() && cols.len() == c.len() {
        return solve_positive(cost, r, c, eta, tol, max_iter, warm);
    }

    // Restrict to the support and embed the result back.
    let sub_cost = cost.select_rows(&rows).select_columns(&cols);
    let sub_r = r.select_rows(&rows);
    let sub_c = c.select_rows(&cols);
    let sub_warm = warm
        .filter(|s| s.log_v.len() == c.len())
        .map(|s| SinkhornState {
            log_u: s.log_u.select_rows(&rows),
            log_v: s.log_v.select_rows(&cols),
            eta: s.eta,
        });
    let out = solve_positive(&sub_cost, &sub_r, &sub_c, eta, tol, max_iter, sub_warm.as_ref())?;
    let mut matrix = DMatrix::zeros(r.len(), c.len());
    let mut log_u = DVector::zeros(r.len());
    let mut log_v = DVector::zeros(c.len());
    for (si, &i) in rows.iter().enumerate() {
        log_u[i] = out.state.log_u[si];
        for (sj, &j) in cols.iter().enumerate() {
            matrix[(i, j)] = out.plan.matrix()[(si, sj)];
        }
    }
    for (sj, &j) in cols.iter().enumerate() {
        log_v[j] = out.state.log_v[sj];
    }
    Ok(SinkhornOutput {
        plan: TransportPlan::from_parts(matrix, r.clone(), c.clone()),
        state: SinkhornState { log_u, log_v, eta },
        ..out
    })
}

fn solve_positive<T: Real>(
    cost: &DMatrix<T>,
    r: &DVector<T>,
    c: &DVector<T>,
    eta: T,
    tol: T,
    max_iter: usize,
    warm: Option<&SinkhornState<T>>,
) -> Result<SinkhornOutput<T>> {
    let mut it = Sinkhorn::new(cost, r, c, eta, warm)?;
    let mut converged = false;
    let mut err = it.marginal_error();
    while it.iterations() < max_iter.max(1) {
        if err <= tol {
            converged = true;
            break;
        }
        it.step();
        err = it.marginal_error();
    }
    converged |= err <= tol;
    let plan = round_to_polytope(&it.scaling_matrix(), r, c)?;
    Ok(SinkhornOutput {
        plan,
        state: it.state(),
        iterations: it.iterations(),
        converged,
        marginal_error: err,
    })
}

/// Rounds a nonnegative matrix onto `Π(r, c)`: scale rows down to at most `r`,
/// columns down to at most `c`, then add the rank-one correction
/// `e_r e_cᵀ / ‖e_r‖₁` built from the remaining deficits.
///
/// The output differs from `B` by at most `2(‖r(B) − r‖₁ + ‖c(B) − c‖₁)` in ℓ1.
pub fn round_to_polytope<T: Real>(b: &DMatrix<T>, r: &DVector<T>, c: &DVector<T>) -> Result<TransportPlan<T>> {
    check_marginal_shapes(b, r, c)?;
    if b.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::InvalidParameter("matrix to round must be finite and ≥ 0".into()));
    }
    if b.iter().all(|v| *v == T::zero()) {
        return Err(Error::ZeroMatrix);
    }
    let mut x = b.clone();
    let rs = row_sums(&x);
    for i in 0..x.nrows() {
        if rs[i] > r[i] {
            let f = r[i] / rs[i];
            x.row_mut(i).scale_mut(f);
        }
    }
    let cs = x.row_sum();
    for j in 0..x.ncols() {
        if cs[j] > c[j] {
            let f = c[j] / cs[j];
            x.column_mut(j).scale_mut(f);
        }
    }
    let err_r = (r - row_sums(&x)).map(|v| v.max(T::zero()));
    let err_c = (c - x.row_sum().transpose()).map(|v| v.max(T::zero()));
    let mass = err_r.sum();
    if mass > T::zero() {
        x.ger(T::one() / mass, &err_r, &err_c, T::one());
    }
    Ok(TransportPlan::from_parts(x, r.clone(), c.clone()))
}

/// `H(π) = −⟨π, log π − 1⟩` with `0 log 0 = 0` (entries below `1e-300` count as zero).
pub fn entropy<T: Real>(plan: &DMatrix<T>) -> T {
    let floor = T::of(1e-300);
    plan.iter().fold(T::zero(), |h, &p| if p > floor { h + p - p * p.ln() } else { h })
}

/// `⟨C, π⟩ − ηH(π)`.
pub fn entropic_objective<T: Real>(plan: &TransportPlan<T>, cost: &DMatrix<T>, eta: T) -> Result<T> {
    if plan.matrix().shape() != cost.shape() {
        return Err(Error::DimensionMismatch(format!(
            "plan {:?} vs cost {:?}",
            plan.matrix().shape(),
            cost.shape()
        )));
    }
    let linear = plan.linear_cost(cost);
    if eta == T::zero() {
        return Ok(linear);
    }
    Ok(linear - eta * entropy(plan.matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn half() -> DVector<f64> {
        dvector![0.5, 0.5]
    }

    #[test]
    fn singleton_plan() {
        for eta in [1e-4, 1.0] {
            let out = sinkhorn_solve(&dmatrix![3.7], &dvector![1.0], &dvector![1.0], eta, 1e-9, 100).unwrap();
            assert_eq!(out.plan.matrix(), &dmatrix![1.0]);
            assert!(out.converged);
        }
    }

    #[test]
    fn zero_cost_gives_product_coupling() {
        for eta in [0.01, 1.0, 30.0] {
            let out = sinkhorn_solve(&DMatrix::zeros(2, 2), &half(), &half(), eta, 1e-12, 100).unwrap();
            assert!((out.plan.matrix() - DMatrix::from_element(2, 2, 0.25)).amax() < 1e-14);
        }
    }

    /// Textbook linear-domain Sinkhorn, run far past convergence.
    fn plain_sinkhorn(cost: &DMatrix<f64>, r: &DVector<f64>, c: &DVector<f64>, eta: f64) -> DMatrix<f64> {
        let k = cost.map(|v| (-v / eta).exp());
        let mut u = DVector::from_element(r.len(), 1.0);
        let mut v = DVector::from_element(c.len(), 1.0);
        for _ in 0..10_000 {
            u = r.component_div(&(&k * &v));
            v = c.component_div(&k.tr_mul(&u));
        }
        DMatrix::from_fn(r.len(), c.len(), |i, j| u[i] * k[(i, j)] * v[j])
    }

    #[test]
    fn matches_plain_sinkhorn_oracle() {
        let cost = dmatrix![0.0, 1.0; 1.0, 0.0];
        let oracle = plain_sinkhorn(&cost, &half(), &half(), 0.05);
        let out = sinkhorn_solve(&cost, &half(), &half(), 0.05, 1e-4, 10_000).unwrap();
        let l1: f64 = (out.plan.matrix() - &oracle).abs().sum();
        assert!(l1 < 1e-3, "ℓ1 = {l1}");

        let cost = dmatrix![0.2, 0.9, 0.4; 0.7, 0.1, 0.5; 0.3, 0.6, 0.8];
        let r = dvector![0.2, 0.5, 0.3];
        let c = dvector![0.4, 0.4, 0.2];
        let oracle = plain_sinkhorn(&cost, &r, &c, 0.1);
        let out = sinkhorn_solve(&cost, &r, &c, 0.1, 1e-10, 10_000).unwrap();
        assert!((out.plan.matrix() - &oracle).abs().sum() < 1e-8);
    }

    #[test]
    fn tiny_eta_stays_finite() {
        let cost = dmatrix![0.0, 1.0, 0.3; 1.0, 0.0, 0.8; 0.5, 0.2, 0.0];
        let r = dvector![0.3, 0.3, 0.4];
        let out = sinkhorn_solve::<f64>(&cost, &r, &r, 1e-5, 1e-9, 100_000).unwrap();
        assert!(out.converged);
        assert!(out.state.log_u.iter().chain(out.state.log_v.iter()).all(|v| v.is_finite()));
        // The diagonal is the unique zero-cost optimum.
        assert!((out.plan.matrix() - DMatrix::from_diagonal(&r)).amax() < 1e-9);
    }

    #[test]
    fn rectangular_and_zero_weight_atoms() {
        let cost = dmatrix![0.0, 1.0, 4.0; 1.0, 0.0, 1.0];
        let r = dvector![0.5, 0.5];
        let c = dvector![0.5, 0.0, 0.5];
        let out = sinkhorn_solve(&cost, &r, &c, 0.1, 1e-10, 10_000).unwrap();
        assert!(out.plan.marginal_error() < 1e-12);
        assert!(out.plan.matrix().column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let cost = dmatrix![0.0, 1.0; 1.0, 0.0];
        assert!(sinkhorn_solve(&cost, &half(), &half(), 0.0, 1e-6, 10).is_err());
        assert!(sinkhorn_solve(&cost, &half(), &half(), 0.1, 0.0, 10).is_err());
        assert!(sinkhorn_solve(&dmatrix![0.0, f64::NAN; 1.0, 0.0], &half(), &half(), 0.1, 1e-6, 10).is_err());
        assert!(sinkhorn_solve(&cost, &dvector![0.5, 0.6], &half(), 0.1, 1e-6, 10).is_err());
        assert!(sinkhorn_solve(&cost, &dvector![1.0], &half(), 0.1, 1e-6, 10).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cost = dmatrix![0.0, 1.0, 0.3; 1.0, 0.0, 0.8; 0.5, 0.2, 0.0];
        let r = dvector![0.3, 0.3, 0.4];
        let c = dvector![0.6, 0.2, 0.2];
        let out = sinkhorn_solve(&cost, &r, &c, 1e-3, 1e-14, 3).unwrap();
        assert!(!out.converged);
        assert!(out.plan.marginal_error() < 1e-12);
    }

    #[test]
    fn dual_objective_never_increases() {
        let cost = dmatrix![0.1, 0.9, 0.4, 0.3; 0.7, 0.1, 0.5, 0.2; 0.3, 0.6, 0.8, 0.0];
        let r = dvector![0.2, 0.5, 0.3];
        let c = dvector![0.1, 0.4, 0.3, 0.2];
        let mut it = Sinkhorn::new(&cost, &r, &c, 0.02, None).unwrap();
        let mut prev = it.dual_objective();
        for _ in 0..200 {
            it.step();
            let cur = it.dual_objective();
            assert!(cur <= prev + 1e-12, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn scale_equivariance() {
        let cost = dmatrix![0.1, 0.9, 0.4; 0.7, 0.1, 0.5; 0.3, 0.6, 0.8];
        let r = dvector![0.2, 0.5, 0.3];
        let c = dvector![0.4, 0.4, 0.2];
        let tol = 1e-7;
        let a = sinkhorn_solve(&cost, &r, &c, 0.05, tol, 10_000).unwrap();
        let b = sinkhorn_solve(&(&cost * 40.0), &r, &c, 2.0, tol, 10_000).unwrap();
        assert!((a.plan.matrix() - b.plan.matrix()).abs().sum() <= 2.0 * tol);
    }

    #[test]
    fn warm_start_reaches_same_plan_faster() {
        let cost = DMatrix::from_fn(12, 12, |i, j| ((i as f64 - j as f64) / 12.0).powi(2));
        let r = DVector::from_element(12, 1.0 / 12.0);
        let cold = sinkhorn_solve(&cost, &r, &r, 0.005, 1e-9, 100_000).unwrap();
        let warm = sinkhorn_solve_warm(&cost, &r, &r, 0.005, 1e-9, 100_000, Some(&cold.state)).unwrap();
        assert!(warm.iterations < cold.iterations);
        assert!((warm.plan.matrix() - cold.plan.matrix()).abs().sum() < 1e-8);
    }

    #[test]
    fn rounding_feasible_input_unchanged() {
        let b = dmatrix![0.3, 0.2; 0.1, 0.4];
        let out = round_to_polytope(&b, &dvector![0.5, 0.5], &dvector![0.4, 0.6]).unwrap();
        assert!((out.matrix() - &b).amax() < 1e-16);
    }

    #[test]
    fn rounding_singleton_fills_deficit() {
        let out = round_to_polytope(&dmatrix![0.9f64], &dvector![1.0], &dvector![1.0]).unwrap();
        assert!((out.matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rounding_hand_example() {
        // Rows: (1, 0) vs (½, ½): row 0 scaled by ½ → [[¼, ¼], [0, 0]].
        // Columns (¼, ¼) are below (½, ½): untouched.
        // Deficits e_r = (0, ½), e_c = (¼, ¼) → add [[0, 0], [¼, ¼]].
        let b = dmatrix![0.5, 0.5; 0.0, 0.0];
        let r = half();
        let out = round_to_polytope(&b, &r, &r).unwrap();
        assert!((out.matrix() - dmatrix![0.25, 0.25; 0.25, 0.25]).amax() < 1e-16);
        let moved = (out.matrix() - &b).abs().sum();
        let violation = 1.0; // ‖r(B) − r‖₁ = 1, ‖c(B) − c‖₁ = 0
        assert!(moved <= 2.0 * violation);
        assert!(out.marginal_error_max() < 1e-15);
        assert!(matches!(round_to_polytope(&DMatrix::zeros(2, 2), &r, &r), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn entropic_objective_examples() {
        let plan = TransportPlan::new(dmatrix![1.0f64], dvector![1.0], dvector![1.0]).unwrap();
        assert!((entropic_objective(&plan, &dmatrix![5.0], 1.0).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(entropic_objective(&plan, &dmatrix![5.0], 0.0).unwrap(), 5.0);

        let eta = 0.3;
        let uniform = TransportPlan::product(&half(), &half());
        let expected = -eta * (1.0 + 2.0 * 2f64.ln());
        let got = entropic_objective(&uniform, &DMatrix::zeros(2, 2), eta).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!(entropic_objective(&uniform, &DMatrix::zeros(3, 2), eta).is_err());
    }

    #[test]
    fn projected_cost_examples() {
        let mu = DiscreteMeasure::uniform(dmatrix![1.0, 5.0]).unwrap();
        let nu = DiscreteMeasure::uniform(dmatrix![0.0, 7.0]).unwrap();
        let e1 = StiefelPoint::canonical(2, 1).unwrap();
        assert_eq!(projected_cost(&mu, &nu, &e1).unwrap(), dmatrix![1.0]);

        let (mu, nu) = crate::measures::fragmented_hypercube::<f64>(9, 4, 2, 2).unwrap();
        let full = crate::measures::cost_matrix(&mu, &nu).unwrap().cost;
        let q = crate::stiefel::random_stiefel::<f64>(4, 4, 1).unwrap();
        assert!((projected_cost(&mu, &nu, &q).unwrap() - &full).amax() < 1e-10);
        let u = crate::stiefel::random_stiefel::<f64>(4, 2, 1).unwrap();
        let proj = projected_cost(&mu, &nu, &u).unwrap();
        assert!(proj.iter().zip(full.iter()).all(|(p, f)| *p <= *f + 1e-12));
        let wrong = StiefelPoint::<f64>::canonical(3, 1).unwrap();
        assert!(projected_cost(&mu, &nu, &wrong).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(TransportPlan::new(dmatrix![0.5, 0.0; 0.0, 0.5], half(), half()).is_ok());
        assert!(TransportPlan::new(dmatrix![0.5, 0.5; 0.0, 0.0], half(), half()).is_err());
        assert!(TransportPlan::new(dmatrix![0.6, -0.1; -0.1, 0.6], half(), half()).is_err());
    }
}
