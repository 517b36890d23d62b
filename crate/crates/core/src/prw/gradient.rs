//! Objective, gradient and diagnostic quantities at a fixed subspace.

use nalgebra::DMatrix;

use crate::entropic_ot::{projected_cost, TransportPlan};
use crate::error::{Error, Result};
use crate::exact_ot::exact_ot_solve;
use crate::measures::DiscreteMeasure;
use crate::scalar::Real;
use crate::stiefel::{tangent_project, StiefelPoint, TangentVector};

fn check_shapes<T: Real>(
    plan: &TransportPlan<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
) -> Result<()> {
    let d = u.shape().0;
    if mu.dim() != d || nu.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "measures in R^{} and R^{}, subspace in R^{d}",
            mu.dim(),
            nu.dim()
        )));
    }
    if plan.matrix().shape() != (mu.len(), nu.len()) {
        return Err(Error::DimensionMismatch(format!(
            "plan is {:?} for {} and {} atoms",
            plan.matrix().shape(),
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// `V_π U` with `V_π = Σ_ij π_ij (x_i − y_j)(x_i − y_j)ᵀ`, never forming `V_π`:
///
/// `V_π U = Xᵀ(diag(π1) XU − π YU) + Yᵀ(diag(πᵀ1) YU − πᵀ XU)`.
pub fn correlation_apply<T: Real>(
    plan: &TransportPlan<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
) -> Result<DMatrix<T>> {
    check_shapes(plan, mu, nu, u)?;
    let pi = plan.matrix();
    let (x, y) = (mu.points(), nu.points());
    let xu = x * u.matrix();
    let yu = y * u.matrix();

    let mut left = &xu * T::one();
    for (i, mut row) in left.row_iter_mut().enumerate() {
        row *= pi.row(i).sum();
    }
    left -= pi * &yu;

    let col_mass = pi.row_sum();
    let mut right = yu;
    for (j, mut row) in right.row_iter_mut().enumerate() {
        row *= col_mass[j];
    }
    right -= pi.tr_mul(&xu);

    Ok(x.tr_mul(&left) + y.tr_mul(&right))
}

/// `P_{T_U St}(2 V_π U)`, the Riemannian gradient of `U ↦ ⟨C_U, π⟩` for fixed `π`.
pub fn riemannian_gradient<T: Real>(
    plan: &TransportPlan<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
) -> Result<TangentVector<T>> {
    let vu = correlation_apply(plan, mu, nu, u)?;
    tangent_project(u, &(vu * T::of(2.0)))
}

/// `⟨C_U, π⟩` in data units, with `C_U` the projected squared distances.
pub fn prw_objective<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
    plan: &TransportPlan<T>,
) -> Result<T> {
    check_shapes(plan, mu, nu, u)?;
    Ok(plan.linear_cost(&projected_cost(mu, nu, u)?))
}

/// `‖P_{T_U St}(2 V_π̂ U)‖_F` with `π̂` an exact OT plan at `U`: the norm of one
/// Riemannian supergradient, an upper estimate of the distance from zero to
/// the Riemannian subdifferential of `U ↦ min_π ⟨C_U, π⟩`.
pub fn stationarity_surrogate<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    u: &StiefelPoint<T>,
) -> Result<T> {
    let cost = projected_cost(mu, nu, u)?;
    let exact = exact_ot_solve(&cost, mu.weights(), nu.weights())?;
    Ok(riemannian_gradient(&exact.plan, mu, nu, u)?.norm())
}

/// `‖UUᵀ − VVᵀ‖_F`, computed as `√(k₁ + k₂ − 2‖UᵀV‖_F²)`.
pub fn subspace_error<T: Real>(u: &StiefelPoint<T>, v: &StiefelPoint<T>) -> Result<T> {
    let ((d1, k1), (d2, k2)) = (u.shape(), v.shape());
    if d1 != d2 {
        return Err(Error::DimensionMismatch(format!("subspaces of R^{d1} and R^{d2}")));
    }
    let cross = u.matrix().tr_mul(v.matrix()).norm_squared();
    let sq = T::of_usize(k1 + k2) - cross * T::of(2.0);
    Ok(sq.max(T::zero()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropic_ot::sinkhorn_solve;
    use crate::measures::{cost_matrix, fragmented_hypercube};
    use crate::stiefel::random_stiefel;
    use nalgebra::{dmatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DiscreteMeasure<f64> {
        let points = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let mut w = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.1);
        w /= w.sum();
        DiscreteMeasure::new(points, w).unwrap()
    }

    fn random_plan(r: &DVector<f64>, c: &DVector<f64>, rng: &mut ChaCha8Rng) -> TransportPlan<f64> {
        let cost = DMatrix::from_fn(r.len(), c.len(), |_, _| rng.random::<f64>());
        sinkhorn_solve(&cost, r, c, 0.3, 1e-12, 10_000).unwrap().plan
    }

    /// `Σ_ij π_ij (x_i − y_j)(x_i − y_j)ᵀ` assembled term by term.
    fn naive_v(plan: &TransportPlan<f64>, mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>) -> DMatrix<f64> {
        let d = mu.dim();
        let mut v = DMatrix::zeros(d, d);
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                let z = (mu.points().row(i) - nu.points().row(j)).transpose();
                v += &z * z.transpose() * plan.matrix()[(i, j)];
            }
        }
        v
    }

    #[test]
    fn single_atom_pair() {
        let mu = DiscreteMeasure::uniform(dmatrix![1.0, 2.0, 0.0]).unwrap();
        let nu = DiscreteMeasure::uniform(dmatrix![0.0, -1.0, 2.0]).unwrap();
        let plan = TransportPlan::product(mu.weights(), nu.weights());
        let u = random_stiefel::<f64>(3, 2, 5).unwrap();
        let z = dmatrix![1.0; 3.0; -2.0];
        let expected = &z * (z.transpose() * u.matrix());
        assert!((correlation_apply(&plan, &mu, &nu, &u).unwrap() - expected).amax() < 1e-14);
    }

    #[test]
    fn matches_naive_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mu = random_measure(8, 6, &mut rng);
            let nu = random_measure(8, 6, &mut rng);
            let plan = random_plan(mu.weights(), nu.weights(), &mut rng);
            let u = random_stiefel::<f64>(6, 2, trial).unwrap();
            let fast = correlation_apply(&plan, &mu, &nu, &u).unwrap();
            let slow = naive_v(&plan, &mu, &nu) * u.matrix();
            assert!((fast - slow).amax() < 1e-10);
        }
    }

    #[test]
    fn product_coupling_of_identical_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = random_measure(7, 5, &mut rng);
        let plan = TransportPlan::product(mu.weights(), mu.weights());
        let v = naive_v(&plan, &mu, &mu);
        assert!((&v - v.transpose()).amax() < 1e-14);
        assert!(v.clone().symmetric_eigenvalues().min() > -1e-12);
        let u = random_stiefel::<f64>(5, 3, 0).unwrap();
        let c = cost_matrix(&mu, &mu).unwrap();
        assert!(correlation_apply(&plan, &mu, &mu, &u).unwrap().norm() <= c.max_abs);
    }

    #[test]
    fn gradient_vanishes_for_identity_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>());
        let mu = DiscreteMeasure::uniform(points).unwrap();
        let plan = TransportPlan::new(DMatrix::from_diagonal(mu.weights()), mu.weights().clone(), mu.weights().clone())
            .unwrap();
        let u = random_stiefel::<f64>(4, 2, 1).unwrap();
        assert!(riemannian_gradient(&plan, &mu, &mu, &u).unwrap().norm() < 1e-15);
        assert_eq!(prw_objective(&mu, &mu, &u, &plan).unwrap(), 0.0);
        assert!(stationarity_surrogate(&mu, &mu, &u).unwrap() < 1e-15);
    }

    #[test]
    fn gradient_and_objective_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let mu = random_measure(9, 5, &mut rng);
            let nu = random_measure(7, 5, &mut rng);
            let c = cost_matrix(&mu, &nu).unwrap().max_abs;
            let plan = random_plan(mu.weights(), nu.weights(), &mut rng);
            let u = random_stiefel::<f64>(5, 2, trial).unwrap();
            assert!(riemannian_gradient(&plan, &mu, &nu, &u).unwrap().norm() <= 2.0 * c);
            assert!(stationarity_surrogate(&mu, &nu, &u).unwrap() <= 2.0 * c);

            let value = prw_objective(&mu, &nu, &u, &plan).unwrap();
            assert!(value <= c);
            let cost = projected_cost(&mu, &nu, &u).unwrap();
            let exact = exact_ot_solve(&cost, mu.weights(), nu.weights()).unwrap();
            assert!(prw_objective(&mu, &nu, &u, &exact.plan).unwrap() <= value + 1e-12);
        }
    }

    #[test]
    fn subspace_error_examples() {
        let u = random_stiefel::<f64>(6, 3, 2).unwrap();
        let q = random_stiefel::<f64>(3, 3, 9).unwrap();
        let rotated = StiefelPoint::new(u.matrix() * q.matrix()).unwrap();
        assert!(subspace_error(&u, &rotated).unwrap() < 1e-7);

        let a = StiefelPoint::new(DMatrix::<f64>::identity(4, 2)).unwrap();
        let b = StiefelPoint::new(dmatrix![0.0, 0.0; 0.0, 0.0; 1.0, 0.0; 0.0, 1.0]).unwrap();
        assert!((subspace_error(&a, &b).unwrap() - 2.0).abs() < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e1 = StiefelPoint::new(dmatrix![1.0; 0.0]).unwrap();
        let diag = StiefelPoint::new(dmatrix![s; s]).unwrap();
        assert!((subspace_error(&e1, &diag).unwrap() - 1.0).abs() < 1e-12);

        // Against the d×d projector difference.
        let v = random_stiefel::<f64>(6, 2, 4).unwrap();
        let direct = (u.matrix() * u.matrix().transpose() - v.matrix() * v.matrix().transpose()).norm();
        assert!((subspace_error(&u, &v).unwrap() - direct).abs() < 1e-12);
        assert!(subspace_error(&u, &random_stiefel::<f64>(5, 2, 0).unwrap()).is_err());
    }

    #[test]
    fn shape_errors() {
        let (mu, nu) = fragmented_hypercube::<f64>(5, 3, 1, 0).unwrap();
        let u = random_stiefel::<f64>(4, 2, 0).unwrap();
        let plan = TransportPlan::product(mu.weights(), nu.weights());
        assert!(correlation_apply(&plan, &mu, &nu, &u).is_err());
        let u = random_stiefel::<f64>(3, 2, 0).unwrap();
        let short = DVector::from_element(4, 0.25);
        let wrong = TransportPlan::product(&short, nu.weights());
        assert!(correlation_apply(&wrong, &mu, &nu, &u).is_err());
    }
}
