//! Exact (unregularized) optimal transport by the network simplex method on
//! the bipartite transportation graph.
//!
//! Rows are supply nodes `0..n`, columns are demand nodes `n..n+m`, and arc
//! `i·m + j` carries mass from row `i` to column `j` at cost `C_ij`. A basis is
//! a spanning tree of `n + m − 1` arcs, kept strongly feasible by the choice
//! of leaving arc. Entering arcs are priced by block search; after a long run
//! of degenerate pivots the solver switches to Bland's rule (lowest-index
//! entering arc) until progress resumes. Runs are deterministic.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::entropic_ot::{check_simplex_pair, round_to_polytope, TransportPlan};
use crate::error::{Error, Result};
use crate::scalar::Real;

const NONE: usize = usize::MAX;

/// An optimal plan together with a dual certificate.
#[derive(Debug, Clone)]
pub struct ExactOtSolution<T: Real> {
    pub plan: TransportPlan<T>,
    /// `⟨C, π⟩`.
    pub value: T,
    /// Number of simplex pivots.
    pub iterations: usize,
    /// Row potentials `φ`.
    pub row_potential: DVector<T>,
    /// Column potentials `ψ`.
    pub col_potential: DVector<T>,
}

impl<T: Real> ExactOtSolution<T> {
    /// `⟨φ, r⟩ + ⟨ψ, c⟩`.
    pub fn dual_value(&self) -> T {
        self.row_potential.dot(self.plan.row_marginal()) + self.col_potential.dot(self.plan.col_marginal())
    }

    /// `max_ij (φ_i + ψ_j − C_ij)⁺`; zero for an exactly feasible dual.
    pub fn dual_violation(&self, cost: &DMatrix<T>) -> T {
        let mut worst = T::zero();
        for (j, col) in cost.column_iter().enumerate() {
            for (i, c) in col.iter().enumerate() {
                worst = worst.max(self.row_potential[i] + self.col_potential[j] - *c);
            }
        }
        worst
    }

    /// `|⟨C, π⟩ − (⟨φ, r⟩ + ⟨ψ, c⟩)|`.
    pub fn duality_gap(&self) -> T {
        (self.value - self.dual_value()).abs()
    }
}

/// Degenerate pivots, per node, tolerated before falling back to Bland's rule.
const DEGENERATE_FACTOR: usize = 4;

/// Reusable network simplex state for fixed marginals.
///
/// The basis of the last solve is kept: flows depend only on `r` and `c`, so
/// it stays primal feasible when the cost changes, which makes re-solving for
/// a slowly moving cost much cheaper than starting over.
#[derive(Debug, Clone)]
pub struct ExactOtSolver<T: Real> {
    n: usize,
    m: usize,
    r: DVector<T>,
    c: DVector<T>,
    /// Arc id held by each basis slot.
    slot_arc: Vec<usize>,
    slot_flow: Vec<T>,
    /// Basis slot of each arc, or `NONE`.
    arc_slot: Vec<usize>,
    /// Basis slots incident to each node.
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_slot: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<T>,
    /// Nodes in DFS preorder from the root.
    order: Vec<usize>,
    stack: Vec<usize>,
    next_block: usize,
}

impl<T: Real> ExactOtSolver<T> {
    pub fn new(r: &DVector<T>, c: &DVector<T>) -> Result<Self> {
        check_simplex_pair(r, c)?;
        let (n, m) = (r.len(), c.len());
        let nodes = n + m;
        let mut solver = Self {
            n,
            m,
            r: r.clone(),
            c: c.clone(),
            slot_arc: Vec::with_capacity(nodes - 1),
            slot_flow: Vec::with_capacity(nodes - 1),
            arc_slot: vec![NONE; n * m],
            adj: vec![Vec::new(); nodes],
            parent: vec![NONE; nodes],
            parent_slot: vec![NONE; nodes],
            depth: vec![0; nodes],
            potential: vec![T::zero(); nodes],
            order: Vec::with_capacity(nodes),
            stack: Vec::new(),
            next_block: 0,
        };
        solver.northwest_corner();
        Ok(solver)
    }

    /// Staircase initial basis: exactly `n + m − 1` arcs, a spanning tree.
    fn northwest_corner(&mut self) {
        let (n, m) = (self.n, self.m);
        let mut supply: Vec<T> = self.r.iter().copied().collect();
        let mut demand: Vec<T> = self.c.iter().copied().collect();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            supply[i] -= x;
            demand[j] -= x;
            self.push_slot(i * m + j, x);
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || supply[i] < demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    fn push_slot(&mut self, arc: usize, flow: T) {
        let s = self.slot_arc.len();
        self.slot_arc.push(arc);
        self.slot_flow.push(flow);
        self.arc_slot[arc] = s;
        let (u, v) = self.endpoints(arc);
        self.adj[u].push(s);
        self.adj[v].push(s);
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        (arc / self.m, self.n + arc % self.m)
    }

    /// Parent pointers, depths, preorder and potentials (`φ_i + ψ_j = C_ij`
    /// on basic arcs, root potential 0).
    fn rebuild_tree(&mut self, cost: &DMatrix<T>) {
        self.order.clear();
        self.parent[0] = NONE;
        self.parent_slot[0] = NONE;
        self.depth[0] = 0;
        self.potential[0] = T::zero();
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            self.order.push(u);
            for k in 0..self.adj[u].len() {
                let s = self.adj[u][k];
                if s == self.parent_slot[u] {
                    continue;
                }
                let arc = self.slot_arc[s];
                let (a, b) = self.endpoints(arc);
                let v = if a == u { b } else { a };
                self.parent[v] = u;
                self.parent_slot[v] = s;
                self.depth[v] = self.depth[u] + 1;
                self.potential[v] = cost[(arc / self.m, arc % self.m)] - self.potential[u];
                stack.push(v);
            }
        }
        debug_assert_eq!(self.order.len(), self.n + self.m);
    }

    fn reduced_cost(&self, cost: &DMatrix<T>, arc: usize) -> T {
        let (i, j) = (arc / self.m, arc % self.m);
        cost[(i, j)] - self.potential[i] - self.potential[self.n + j]
    }

    /// Block search: the most negative reduced cost within the first block
    /// (cyclically from where the last search stopped) that has one.
    fn price_block(&mut self, cost: &DMatrix<T>, tol: T) -> Option<usize> {
        let arcs = self.n * self.m;
        let block = ((arcs as f64).sqrt().ceil() as usize).max(1);
        let mut scanned = 0;
        let mut pos = self.next_block % arcs;
        while scanned < arcs {
            let len = block.min(arcs - scanned);
            let mut best: Option<(usize, T)> = None;
            for _ in 0..len {
                if self.arc_slot[pos] == NONE {
                    let rc = self.reduced_cost(cost, pos);
                    if rc < -tol && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((pos, rc));
                    }
                }
                pos = if pos + 1 == arcs { 0 } else { pos + 1 };
            }
            scanned += len;
            if let Some((arc, _)) = best {
                self.next_block = pos;
                return Some(arc);
            }
        }
        None
    }

    /// Bland's rule: the lowest-index arc with negative reduced cost.
    fn price_bland(&self, cost: &DMatrix<T>, tol: T) -> Option<usize> {
        (0..self.n * self.m).find(|&a| self.arc_slot[a] == NONE && self.reduced_cost(cost, a) < -tol)
    }

    /// Pushes flow around the cycle closed by `entering`, swaps it into the
    /// basis and repairs the tree labels. Returns the amount pushed.
    fn pivot(&mut self, cost: &DMatrix<T>, entering: usize) -> T {
        let (p, q) = self.endpoints(entering);
        // Slots on the cycle: (slot, flow decreases, on the q side).
        let mut cycle: Vec<(usize, bool, bool)> = Vec::new();
        let (mut u, mut w) = (q, p);
        while u != w {
            if self.depth[u] >= self.depth[w] {
                // Column-side walk: stepping from a column node to its parent
                // row traverses the arc backwards.
                cycle.push((self.parent_slot[u], u >= self.n, true));
                u = self.parent[u];
            } else {
                cycle.push((self.parent_slot[w], w < self.n, false));
                w = self.parent[w];
            }
        }
        // Strongly feasible tree rule: among the blocking arcs, take the last
        // one met when walking the cycle from the apex along the entering
        // arc's direction. That is the q-side blocker nearest the apex, or
        // failing that, the p-side blocker nearest p. With the northwest
        // corner start (zero-flow arcs point away from the root) this keeps
        // the tree strongly feasible and rules out cycling.
        let theta = cycle
            .iter()
            .filter(|e| e.1)
            .map(|e| self.slot_flow[e.0])
            .fold(None, |acc: Option<T>, f| Some(acc.map_or(f, |a| a.min(f))))
            .expect("every cycle has a backward arc");
        let blocking = |e: &&(usize, bool, bool)| e.1 && self.slot_flow[e.0] == theta;
        let (leaving, _, q_side) = *cycle
            .iter()
            .rev()
            .find(|e| e.2 && blocking(e))
            .or_else(|| cycle.iter().find(|e| !e.2 && blocking(e)))
            .expect("the minimum is attained");
        debug_assert!(leaving != NONE, "every cycle has a backward arc");
        for &(s, minus, _) in &cycle {
            if minus {
                self.slot_flow[s] -= theta;
            } else {
                self.slot_flow[s] += theta;
            }
        }
        // Reuse the leaving slot for the entering arc.
        let old = self.slot_arc[leaving];
        let (a, b) = self.endpoints(old);
        self.adj[a].retain(|&s| s != leaving);
        self.adj[b].retain(|&s| s != leaving);
        self.arc_slot[old] = NONE;
        self.slot_arc[leaving] = entering;
        self.slot_flow[leaving] = theta;
        self.arc_slot[entering] = leaving;
        self.adj[p].push(leaving);
        self.adj[q].push(leaving);
        // Removing the leaving arc cut off the subtree holding one endpoint of
        // the entering arc; hang it from the other endpoint instead.
        let (root, attach) = if q_side { (q, p) } else { (p, q) };
        self.relabel_subtree(cost, root, attach, leaving);
        theta
    }

    /// Re-roots the subtree at `root` under `attach` via slot `slot`, fixing
    /// parents, depths and potentials. The preorder is left stale.
    fn relabel_subtree(&mut self, cost: &DMatrix<T>, root: usize, attach: usize, slot: usize) {
        let arc = self.slot_arc[slot];
        self.parent[root] = attach;
        self.parent_slot[root] = slot;
        self.depth[root] = self.depth[attach] + 1;
        self.potential[root] = cost[(arc / self.m, arc % self.m)] - self.potential[attach];
        let mut stack = std::mem::take(&mut self.stack);
        stack.clear();
        stack.push(root);
        while let Some(u) = stack.pop() {
            for k in 0..self.adj[u].len() {
                let s = self.adj[u][k];
                if s == self.parent_slot[u] {
                    continue;
                }
                let arc = self.slot_arc[s];
                let (a, b) = self.endpoints(arc);
                let v = if a == u { b } else { a };
                self.parent[v] = u;
                self.parent_slot[v] = s;
                self.depth[v] = self.depth[u] + 1;
                self.potential[v] = cost[(arc / self.m, arc % self.m)] - self.potential[u];
                stack.push(v);
            }
        }
        self.stack = stack;
    }

    /// Exact flows of the current tree from the marginals, leaves first.
    fn tree_flows(&mut self) {
        let mut excess: Vec<T> = self
            .r
            .iter()
            .copied()
            .chain(self.c.iter().map(|v| -*v))
            .collect();
        for k in (1..self.order.len()).rev() {
            let u = self.order[k];
            let e = excess[u];
            let f = if u < self.n { e } else { -e };
            self.slot_flow[self.parent_slot[u]] = f.max(T::zero());
            excess[self.parent[u]] += e;
        }
    }

    /// Solves `min ⟨C, π⟩` over `Π(r, c)`, starting from the current basis.
    pub fn solve(&mut self, cost: &DMatrix<T>) -> Result<ExactOtSolution<T>> {
        let (n, m) = (self.n, self.m);
        if cost.shape() != (n, m) {
            return Err(Error::DimensionMismatch(format!(
                "cost is {}×{}, marginals have lengths {n} and {m}",
                cost.nrows(),
                cost.ncols()
            )));
        }
        if cost.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        let scale = cost.amax().max(T::one());
        let tol = T::machine_epsilon() * T::of(1e3) * scale;
        let max_pivots = 50 * (n + m) * (n + m) + 1000;
        let degenerate_limit = DEGENERATE_FACTOR * (n + m);

        self.rebuild_tree(cost);
        let mut pivots = 0;
        let mut degenerate_run = 0;
        while pivots < max_pivots {
            let entering = if degenerate_run > degenerate_limit {
                self.price_bland(cost, tol)
            } else {
                self.price_block(cost, tol)
            };
            let Some(arc) = entering else { break };
            let theta = self.pivot(cost, arc);
            pivots += 1;
            if theta > T::zero() {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        // Fresh preorder for the flow computation, and potentials free of
        // drift accumulated by incremental updates.
        self.rebuild_tree(cost);
        if pivots == max_pivots {
            log::warn!("network simplex stopped after {pivots} pivots");
        }

        self.tree_flows();
        let mut matrix = DMatrix::zeros(n, m);
        for (s, &arc) in self.slot_arc.iter().enumerate() {
            matrix[(arc / m, arc % m)] = self.slot_flow[s];
        }
        let mut plan = TransportPlan::from_parts(matrix, self.r.clone(), self.c.clone());
        if plan.marginal_error_max() > T::of(1e-12) {
            plan = round_to_polytope(plan.matrix(), &self.r, &self.c)?;
        }
        let value = plan.linear_cost(cost);
        Ok(ExactOtSolution {
            plan,
            value,
            iterations: pivots,
            row_potential: DVector::from_iterator(n, self.potential[..n].iter().copied()),
            col_potential: DVector::from_iterator(m, self.potential[n..].iter().copied()),
        })
    }
}

/// Solves the transportation LP `min ⟨C, π⟩` over `Π(r, c)` exactly.
pub fn exact_ot_solve<T: Real>(cost: &DMatrix<T>, r: &DVector<T>, c: &DVector<T>) -> Result<ExactOtSolution<T>> {
    ExactOtSolver::new(r, c)?.solve(cost)
}

/// Test oracle for uniform marginals: the minimum of `⟨C, P_σ⟩/n` over all
/// permutations `σ` (the optimum sits at a vertex of the Birkhoff polytope).
pub fn brute_force_ot<T: Real>(cost: &DMatrix<T>, r: &DVector<T>, c: &DVector<T>) -> Result<T> {
    let n = cost.nrows();
    if cost.ncols() != n || r.len() != n || c.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "brute force needs a square problem, got {}×{} with marginals {} and {}",
            n,
            cost.ncols(),
            r.len(),
            c.len()
        )));
    }
    if n == 0 || n > 7 {
        return Err(Error::InvalidParameter(format!("brute force supports 1 ≤ n ≤ 7, got {n}")));
    }
    let w = T::one() / T::of_usize(n);
    let tol = T::tolerance(1e-12, 1e2);
    if r.iter().chain(c.iter()).any(|v| (*v - w).abs() > tol) {
        return Err(Error::InvalidParameter("brute force needs uniform marginals".into()));
    }
    let best = (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().fold(T::zero(), |s, (i, &j)| s + cost[(i, j)]))
        .fold(None, |best: Option<T>, v| Some(best.map_or(v, |b| b.min(v))))
        .unwrap_or_else(T::zero);
    Ok(best * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0 / n as f64)
    }

    #[test]
    fn spec_examples() {
        let half = uniform(2);
        let s = exact_ot_solve(&dmatrix![0.0, 1.0; 1.0, 0.0], &half, &half).unwrap();
        assert_eq!(s.value, 0.0);
        assert!((s.plan.matrix() - dmatrix![0.5, 0.0; 0.0, 0.5]).amax() < 1e-15);

        let cost = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert!((exact_ot_solve(&cost, &half, &half).unwrap().value - 2.5).abs() < 1e-15);
        assert!((brute_force_ot(&cost, &half, &half).unwrap() - 2.5).abs() < 1e-15);

        let s = exact_ot_solve(&dmatrix![7.5], &dvector![1.0], &dvector![1.0]).unwrap();
        assert_eq!(s.plan.matrix(), &dmatrix![1.0]);
        assert_eq!(s.value, 7.5);

        let flat = DMatrix::from_element(4, 4, 3.25);
        assert!((brute_force_ot(&flat, &uniform(4), &uniform(4)).unwrap() - 3.25).abs() < 1e-15);
    }

    #[test]
    fn integer_costs_match_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let cost = DMatrix::from_fn(4, 4, |_, _| rng.random_range(0..20) as f64);
            let u = uniform(4);
            let a = exact_ot_solve(&cost, &u, &u).unwrap().value;
            let b = brute_force_ot(&cost, &u, &u).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rectangular_nonuniform_against_hand_solution() {
        // Two sources, three sinks; the cheapest arcs can carry everything.
        let cost = dmatrix![1.0f64, 5.0, 0.0; 4.0, 0.0, 6.0];
        let r = dvector![0.6, 0.4];
        let c = dvector![0.3, 0.4, 0.3];
        let s = exact_ot_solve(&cost, &r, &c).unwrap();
        assert!((s.value - 0.3).abs() < 1e-15);
        assert!(s.plan.marginal_error_max() < 1e-15);
        assert!(s.duality_gap() < 1e-12);
        assert!(s.dual_violation(&cost) < 1e-12);
    }

    #[test]
    fn zero_weight_atoms() {
        let cost = dmatrix![0.0f64, 2.0, 1.0; 3.0, 1.0, 0.0; 1.0, 1.0, 1.0];
        let r = dvector![0.5, 0.5, 0.0];
        let c = dvector![0.0, 0.5, 0.5];
        let s = exact_ot_solve(&cost, &r, &c).unwrap();
        // Row 0 → col 2 (1.0), row 1 → col 1 (1.0) or the swap (2.0 + 0.0): both 1.0.
        assert!((s.value - 1.0).abs() < 1e-15);
        assert!(s.plan.matrix().row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let u = uniform(2);
        assert!(exact_ot_solve(&dmatrix![0.0, f64::INFINITY; 1.0, 0.0], &u, &u).is_err());
        assert!(exact_ot_solve(&DMatrix::zeros(3, 2), &u, &u).is_err());
        assert!(exact_ot_solve(&DMatrix::zeros(2, 2), &dvector![0.7, 0.7], &u).is_err());
        assert!(brute_force_ot(&DMatrix::zeros(8, 8), &uniform(8), &uniform(8)).is_err());
        assert!(brute_force_ot(&DMatrix::zeros(2, 2), &dvector![0.3, 0.7], &u).is_err());
    }

    #[test]
    fn warm_start_reuses_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let base = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
        let bump = DMatrix::from_fn(n, n, |_, _| 1e-3 * rng.random::<f64>());
        let u = uniform(n);
        let mut solver = ExactOtSolver::new(&u, &u).unwrap();
        let first = solver.solve(&base).unwrap();
        let moved = &base + &bump;
        let warm = solver.solve(&moved).unwrap();
        let cold = exact_ot_solve(&moved, &u, &u).unwrap();
        assert!((warm.value - cold.value).abs() < 1e-12);
        assert!(warm.iterations < first.iterations);
    }

    #[test]
    fn degenerate_integer_instance_terminates() {
        // Many ties: all-equal rows force long degenerate runs.
        let n = 12;
        let cost = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 4) as f64);
        let u = uniform(n);
        let s = exact_ot_solve(&cost, &u, &u).unwrap();
        assert!(s.duality_gap() < 1e-12);
        assert!(s.dual_violation(&cost) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transpose_symmetry(seed in 0u64..10_000, n in 1usize..7, m in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
            let mut r = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.05);
            let mut c = DVector::from_fn(m, |_, _| rng.random::<f64>() + 0.05);
            r /= r.sum();
            c /= c.sum();
            let a = exact_ot_solve(&cost, &r, &c).unwrap();
            let b = exact_ot_solve(&cost.transpose(), &c, &r).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert!(a.plan.marginal_error_max() <= 1e-12);
            prop_assert!(a.duality_gap() < 1e-12);
            prop_assert!(a.dual_violation(&cost) < 1e-12);
        }

        #[test]
        fn never_worse_than_product_coupling(seed in 0u64..10_000, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let u = uniform(n);
            let s = exact_ot_solve(&cost, &u, &u).unwrap();
            let product = TransportPlan::product(&u, &u).linear_cost(&cost);
            prop_assert!(s.value <= product + 1e-12);
        }
    }
}
