//! Discrete probability measures, squared-Euclidean cost matrices, synthetic
//! generators and file ingestion.

mod generators;
mod io;

pub use generators::{add_noise, fragmented_hypercube, hypercube_map, wishart_gaussian_pair, GaussianPair};
pub use io::{load_measure, write_measure, MeasureFormat};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A finitely supported probability measure `Σ_i w_i δ_{x_i}` on `R^d`.
///
/// Points are stored row-wise (`n × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T: Real> {
    points: DMatrix<T>,
    weights: DVector<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    /// Builds a measure, checking that the weights lie on the simplex and
    /// every coordinate is finite.
    pub fn new(points: DMatrix<T>, weights: DVector<T>) -> Result<Self> {
        let (n, d) = points.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidMeasure(format!(
                "need at least one point in at least one dimension, got {n}×{d}"
            )));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {n} points",
                weights.len()
            )));
        }
        if let Some(idx) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "point {} coordinate {}",
                idx % n,
                idx / n
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} = {} is not a nonnegative number",
                weights[i]
            )));
        }
        let total = weights.sum();
        if (total - T::one()).abs() > T::tolerance(1e-12, 1e3) {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/n` on the given atoms.
    pub fn uniform(points: DMatrix<T>) -> Result<Self> {
        let n = points.nrows();
        let w = if n == 0 {
            T::zero()
        } else {
            T::one() / T::of_usize(n)
        };
        Self::new(points, DVector::from_element(n, w))
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn point(&self, i: usize) -> RowDVector<T> {
        self.points.row(i).into_owned()
    }

    /// Same weights, different atoms. Shapes must agree.
    pub fn with_points(&self, points: DMatrix<T>) -> Result<Self> {
        if points.shape() != self.points.shape() {
            return Err(Error::DimensionMismatch(format!(
                "replacement points are {:?}, expected {:?}",
                points.shape(),
                self.points.shape()
            )));
        }
        Self::new(points, self.weights.clone())
    }
}

/// Pairwise squared distances `C_ij = ‖x_i − y_j‖²` and their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct CostContext<T: Real> {
    pub cost: DMatrix<T>,
    pub max_abs: T,
    /// Whether `cost` has already been divided by `max_abs`.
    pub normalized: bool,
}

impl<T: Real> CostContext<T> {
    /// Returns the cost divided by `‖C‖_∞`. A zero cost matrix is returned unchanged.
    pub fn normalize(&self) -> Self {
        if self.normalized || self.max_abs <= T::zero() {
            return Self {
                normalized: true,
                ..self.clone()
            };
        }
        let scale = T::one() / self.max_abs;
        Self {
            cost: &self.cost * scale,
            max_abs: self.max_abs,
            normalized: true,
        }
    }

    /// Scale factor that maps values computed on the stored cost back to data units.
    pub fn unit_scale(&self) -> T {
        if self.normalized && self.max_abs > T::zero() {
            self.max_abs
        } else {
            T::one()
        }
    }
}

/// Squared Euclidean cost between the atoms of `mu` and `nu`.
///
/// Supports different support sizes; the result is `n_mu × n_nu`.
pub fn cost_matrix<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> Result<CostContext<T>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live in R^{} and R^{}",
            mu.dim(),
            nu.dim()
        )));
    }
    let cost = squared_distances(mu.points(), nu.points());
    let max_abs = cost.iter().fold(T::zero(), |m, &v| if v > m { v } else { m });
    Ok(CostContext {
        cost,
        max_abs,
        normalized: false,
    })
}

/// `out[i, j] = ‖a_i − b_j‖²` for row-stored point sets.
///
/// Differences are formed explicitly (not through the Gram expansion) so the
/// result is exactly symmetric under swapping the arguments and exactly zero
/// on shared atoms.
pub(crate) fn squared_distances<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (n, d) = a.shape();
    let m = b.nrows();
    // Column-major copies of the transposes give contiguous per-point access.
    let at = a.transpose();
    let bt = b.transpose();
    DMatrix::from_fn(n, m, |i, j| {
        let x = at.column(i);
        let y = bt.column(j);
        let mut s = T::zero();
        for l in 0..d {
            let diff = x[l] - y[l];
            s += diff * diff;
        }
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn measure(points: DMatrix<f64>) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform(points).unwrap()
    }

    #[test]
    fn three_four_five() {
        let mu = measure(dmatrix![0.0, 0.0]);
        let nu = measure(dmatrix![3.0, 4.0]);
        let ctx = cost_matrix(&mu, &nu).unwrap();
        assert_eq!(ctx.cost, dmatrix![25.0]);
        assert_eq!(ctx.max_abs, 25.0);
        assert!(!ctx.normalized);
    }

    #[test]
    fn one_dimensional_hand_example() {
        let mu = measure(dmatrix![0.0; 1.0]);
        let nu = measure(dmatrix![0.0; 2.0]);
        let ctx = cost_matrix(&mu, &nu).unwrap();
        assert_eq!(ctx.cost, dmatrix![0.0, 4.0; 1.0, 1.0]);
        assert_eq!(ctx.max_abs, 4.0);
    }

    #[test]
    fn identical_measures_have_zero_diagonal() {
        let mu = measure(dmatrix![0.3, -1.0, 2.0; 4.0, 5.5, -0.25; 1.0, 1.0, 1.0]);
        let ctx = cost_matrix(&mu, &mu).unwrap();
        for i in 0..3 {
            assert_eq!(ctx.cost[(i, i)], 0.0);
        }
    }

    #[test]
    fn transpose_is_exact() {
        let mu = measure(dmatrix![0.1, 0.2; 0.7, -3.0; 2.5, 1.0]);
        let nu = measure(dmatrix![1.5, -0.2; 0.0, 9.0]);
        let a = cost_matrix(&mu, &nu).unwrap().cost;
        let b = cost_matrix(&nu, &mu).unwrap().cost;
        assert_eq!(a, b.transpose());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mu = measure(dmatrix![0.0, 0.0]);
        let nu = measure(dmatrix![0.0, 0.0, 0.0]);
        assert!(matches!(cost_matrix(&mu, &nu), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn normalization_bounds_entries() {
        let mu = measure(dmatrix![0.0, 0.0; 1.0, 2.0]);
        let nu = measure(dmatrix![3.0, 1.0; -1.0, 0.5]);
        let ctx = cost_matrix(&mu, &nu).unwrap().normalize();
        assert!(ctx.normalized);
        assert!(ctx.cost.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ctx.cost.max(), 1.0);
        assert_eq!(ctx.unit_scale(), ctx.max_abs);
    }

    #[test]
    fn measure_validation() {
        let pts = dmatrix![0.0; 1.0];
        assert!(DiscreteMeasure::new(pts.clone(), DVector::from_vec(vec![0.5, 0.6])).is_err());
        assert!(DiscreteMeasure::new(pts.clone(), DVector::from_vec(vec![-0.5, 1.5])).is_err());
        assert!(DiscreteMeasure::new(pts.clone(), DVector::from_vec(vec![1.0])).is_err());
        assert!(DiscreteMeasure::new(dmatrix![f64::NAN; 1.0], DVector::from_vec(vec![0.5, 0.5])).is_err());
        assert!(DiscreteMeasure::<f64>::uniform(DMatrix::zeros(0, 2)).is_err());
        let m = DiscreteMeasure::new(pts, DVector::from_vec(vec![0.25, 0.75])).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.dim(), 1);
    }
}
