//! Stiefel manifold `St(d, k) = {U ∈ R^{d×k} : UᵀU = I_k}`: random points,
//! tangent projection and retractions.
//!
//! All retractions cost `O(dk²)`; nothing here forms a `d × d` matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Retraction used to map a tangent step back onto the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retraction {
    /// Geodesic of the canonical metric, via a `2k × 2k` matrix exponential.
    Exponential,
    /// `(U + ξ)(I + ξᵀξ)^{-1/2}`.
    Polar,
    /// Q factor (positive-diagonal convention) of `U + ξ`.
    #[default]
    Qr,
    /// Cayley transform, evaluated through its rank-`2k` Woodbury form.
    Cayley,
}

impl Retraction {
    pub const ALL: [Retraction; 4] = [
        Retraction::Exponential,
        Retraction::Polar,
        Retraction::Qr,
        Retraction::Cayley,
    ];
}

impl fmt::Display for Retraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Retraction::Exponential => "exponential",
            Retraction::Polar => "polar",
            Retraction::Qr => "qr",
            Retraction::Cayley => "cayley",
        })
    }
}

impl FromStr for Retraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Retraction::Exponential),
            "polar" => Ok(Retraction::Polar),
            "qr" => Ok(Retraction::Qr),
            "cayley" => Ok(Retraction::Cayley),
            other => Err(Error::InvalidParameter(format!("unknown retraction `{other}`"))),
        }
    }
}

/// A point `U ∈ St(d, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint<T: Real> {
    matrix: DMatrix<T>,
}

/// `‖UᵀU − I‖_F`.
pub fn orthonormality_error<T: Real>(u: &DMatrix<T>) -> T {
    let mut g = u.tr_mul(u);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g.norm()
}

impl<T: Real> StiefelPoint<T> {
    /// Accepts `matrix` if its columns are orthonormal. Matrices that are off
    /// by at most `1e-6` are re-orthonormalized (QR); anything further is rejected.
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        let (d, k) = matrix.shape();
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!("St({d}, {k}) requires 1 ≤ k ≤ d")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Stiefel point".into()));
        }
        let err = orthonormality_error(&matrix);
        if err <= T::tolerance(1e-12, 1e3) {
            Ok(Self { matrix })
        } else if err <= T::of(1e-6).max(T::machine_epsilon().sqrt() * T::of(10.0)) {
            Ok(Self {
                matrix: qr_positive(matrix),
            })
        } else {
            Err(Error::NotOrthonormal(err.as_f64()))
        }
    }

    /// The identity-like point `[I_k; 0]`.
    pub fn canonical(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!("St({d}, {k}) requires 1 ≤ k ≤ d")));
        }
        Ok(Self {
            matrix: DMatrix::identity(d, k),
        })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// `(d, k)`.
    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    pub fn orthonormality_error(&self) -> T {
        orthonormality_error(&self.matrix)
    }

    /// Re-runs QR orthonormalization to remove accumulated drift.
    pub fn reorthonormalize(&self) -> Self {
        Self {
            matrix: qr_positive(self.matrix.clone()),
        }
    }
}

/// A tangent vector `ξ` with `ξᵀU + Uᵀξ = 0` at some base point `U`.
///
/// The base point is not stored; constructors check tangency against the
/// point they are given and [`retract`] re-checks it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Real> {
    matrix: DMatrix<T>,
}

fn tangency_error<T: Real>(base: &DMatrix<T>, xi: &DMatrix<T>) -> T {
    let s = xi.tr_mul(base);
    (&s + s.transpose()).norm()
}

fn tangency_tolerance<T: Real>(xi: &DMatrix<T>) -> T {
    T::tolerance(1e-10, 1e4) * xi.norm().max(T::one())
}

impl<T: Real> TangentVector<T> {
    /// Wraps `matrix` after checking it is tangent at `base`.
    pub fn new(base: &StiefelPoint<T>, matrix: DMatrix<T>) -> Result<Self> {
        check_shape(base, &matrix)?;
        let err = tangency_error(base.matrix(), &matrix);
        if err > tangency_tolerance(&matrix) {
            return Err(Error::NotTangent(err.as_f64()));
        }
        Ok(Self { matrix })
    }

    pub fn zeros(base: &StiefelPoint<T>) -> Self {
        let (d, k) = base.shape();
        Self {
            matrix: DMatrix::zeros(d, k),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    /// `‖ξ‖_F`.
    pub fn norm(&self) -> T {
        self.matrix.norm()
    }

    /// Frobenius inner product `⟨ξ, ζ⟩`.
    pub fn inner(&self, other: &Self) -> T {
        self.matrix.dot(&other.matrix)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            matrix: &self.matrix * s,
        }
    }
}

fn check_shape<T: Real>(base: &StiefelPoint<T>, m: &DMatrix<T>) -> Result<()> {
    if base.shape() != m.shape() {
        return Err(Error::DimensionMismatch(format!(
            "tangent matrix is {:?}, base point is {:?}",
            m.shape(),
            base.shape()
        )));
    }
    Ok(())
}

/// Haar-distributed point on `St(d, k)`: QR of a standard Gaussian matrix.
pub fn random_stiefel<T: Real>(d: usize, k: usize, rng_seed: u64) -> Result<StiefelPoint<T>> {
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!("St({d}, {k}) requires 1 ≤ k ≤ d")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut g = DMatrix::<T>::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            g[(i, j)] = T::of(z);
        }
    }
    Ok(StiefelPoint {
        matrix: qr_positive(g),
    })
}

/// Orthogonal projection onto the tangent space: `G − U (GᵀU + UᵀG)/2`.
pub fn tangent_project<T: Real>(u: &StiefelPoint<T>, g: &DMatrix<T>) -> Result<TangentVector<T>> {
    check_shape(u, g)?;
    Ok(TangentVector {
        matrix: project_unchecked(u.matrix(), g),
    })
}

pub(crate) fn project_unchecked<T: Real>(u: &DMatrix<T>, g: &DMatrix<T>) -> DMatrix<T> {
    let utg = u.tr_mul(g);
    let sym = (&utg + utg.transpose()) * T::of(0.5);
    g - u * sym
}

/// `Retr_U(ξ)` with the chosen method.
pub fn retract<T: Real>(u: &StiefelPoint<T>, xi: &TangentVector<T>, method: Retraction) -> Result<StiefelPoint<T>> {
    check_shape(u, xi.matrix())?;
    let err = tangency_error(u.matrix(), xi.matrix());
    if err > tangency_tolerance(xi.matrix()) {
        return Err(Error::NotTangent(err.as_f64()));
    }
    let z = u.matrix();
    let xi = xi.matrix();
    let out = match method {
        Retraction::Qr => qr_positive(z + xi),
        Retraction::Polar => polar(z, xi),
        Retraction::Exponential => exponential(z, xi),
        Retraction::Cayley => cayley(z, xi)?,
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{method} retraction")));
    }
    Ok(StiefelPoint { matrix: out })
}

/// Thin QR with the sign of each column chosen so that `R` has a nonnegative diagonal.
pub(crate) fn qr_positive<T: Real>(a: DMatrix<T>) -> DMatrix<T> {
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn inverse_sqrt_spd<T: Real>(s: DMatrix<T>) -> DMatrix<T> {
    let eig = s.symmetric_eigen();
    let scaled = DMatrix::from_fn(eig.eigenvectors.nrows(), eig.eigenvectors.ncols(), |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt()
    });
    &scaled * eig.eigenvectors.transpose()
}

fn polar<T: Real>(z: &DMatrix<T>, xi: &DMatrix<T>) -> DMatrix<T> {
    let k = z.ncols();
    let s = DMatrix::identity(k, k) + xi.tr_mul(xi);
    (z + xi) * inverse_sqrt_spd(s)
}

/// `[Z Q] exp([[Zᵀξ, −Rᵀ], [R, 0]]) [I; 0]` with `QR = (I − ZZᵀ)ξ`.
///
/// `Q` spans only the numerical range of `(I − ZZᵀ)ξ`, which can have rank
/// below `k` (always when `2k > d`), so the exponentiated block is
/// `(k + r) × (k + r)` with `r ≤ k`.
fn exponential<T: Real>(z: &DMatrix<T>, xi: &DMatrix<T>) -> DMatrix<T> {
    let k = z.ncols();
    let ztxi = z.tr_mul(xi);
    let skew = (&ztxi - ztxi.transpose()) * T::of(0.5);
    let normal = xi - z * &ztxi;

    let cutoff = T::tolerance(1e-12, 1e4) * xi.norm();
    let svd = normal.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let r = keep.len();

    let (q, rmat) = if r == 0 {
        (DMatrix::<T>::zeros(z.nrows(), 0), DMatrix::<T>::zeros(0, k))
    } else {
        let q0 = u.select_columns(&keep);
        // Re-project and re-orthonormalize so [Z Q] is orthonormal to rounding.
        let q0 = &q0 - z * z.tr_mul(&q0);
        let q = qr_positive(q0);
        let rmat = q.tr_mul(&normal);
        (q, rmat)
    };

    let mut block = DMatrix::<T>::zeros(k + r, k + r);
    block.view_mut((0, 0), (k, k)).copy_from(&skew);
    block.view_mut((k, 0), (r, k)).copy_from(&rmat);
    block.view_mut((0, k), (k, r)).copy_from(&(-rmat.transpose()));
    let e = block.exp();

    let mut out = z * e.view((0, 0), (k, k));
    if r > 0 {
        out += &q * e.view((k, 0), (r, k));
    }
    out
}

/// `(I − W/2)^{-1}(I + W/2) Z` with `W = PξZᵀ − ZξᵀP`, `P = I − ZZᵀ/2`.
///
/// `W = A Bᵀ` with `A = [Pξ, Z]`, `B = [Z, −Pξ]`, so Woodbury reduces the
/// `d × d` solve to a `2k × 2k` one.
fn cayley<T: Real>(z: &DMatrix<T>, xi: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (d, k) = z.shape();
    let half = T::of(0.5);
    let pxi = xi - z * z.tr_mul(xi) * half;

    let mut a = DMatrix::<T>::zeros(d, 2 * k);
    a.view_mut((0, 0), (d, k)).copy_from(&pxi);
    a.view_mut((0, k), (d, k)).copy_from(z);
    let mut b = DMatrix::<T>::zeros(d, 2 * k);
    b.view_mut((0, 0), (d, k)).copy_from(z);
    b.view_mut((0, k), (d, k)).copy_from(&(-&pxi));

    // M = (I + W/2) Z
    let m = z + &a * b.tr_mul(z) * half;
    let kmat = DMatrix::<T>::identity(2 * k, 2 * k) - b.tr_mul(&a) * half;
    let rhs = b.tr_mul(&m);
    let x = kmat.lu().solve(&rhs).ok_or(Error::SingularCayley)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCayley);
    }
    Ok(m + &a * x * half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn random_tangent(u: &StiefelPoint<f64>, seed: u64) -> TangentVector<f64> {
        let (d, k) = u.shape();
        let g = random_stiefel::<f64>(d.max(k), k, seed).unwrap().into_matrix() * 3.0;
        let g = DMatrix::from_fn(d, k, |i, j| g[(i, j)] + (i as f64 - j as f64) * 0.1);
        tangent_project(u, &g).unwrap()
    }

    #[test]
    fn random_square_is_orthogonal() {
        let u = random_stiefel::<f64>(5, 5, 3).unwrap();
        assert!(u.orthonormality_error() < 1e-10);
        let det = u.matrix().determinant();
        assert!((det.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn random_is_deterministic() {
        assert_eq!(random_stiefel::<f64>(7, 3, 1).unwrap(), random_stiefel::<f64>(7, 3, 1).unwrap());
        assert_ne!(random_stiefel::<f64>(7, 3, 1).unwrap(), random_stiefel::<f64>(7, 3, 2).unwrap());
        assert!(random_stiefel::<f64>(2, 3, 1).is_err());
    }

    #[test]
    fn constructor_policy() {
        assert!(StiefelPoint::new(DMatrix::<f64>::identity(3, 2)).is_ok());
        let mut near = DMatrix::<f64>::identity(3, 2);
        near[(2, 0)] = 1e-8;
        let fixed = StiefelPoint::new(near).unwrap();
        assert!(fixed.orthonormality_error() < 1e-14);
        let mut far = DMatrix::<f64>::identity(3, 2);
        far[(1, 0)] = 1e-3;
        assert!(matches!(StiefelPoint::new(far), Err(Error::NotOrthonormal(_))));
        assert!(StiefelPoint::new(DMatrix::<f64>::identity(2, 3)).is_err());
    }

    #[test]
    fn project_examples() {
        let u = StiefelPoint::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let p = tangent_project(&u, &dmatrix![1.0; 2.0; 3.0]).unwrap();
        assert_eq!(p.matrix(), &dmatrix![0.0; 2.0; 3.0]);

        let u = random_stiefel::<f64>(6, 3, 9).unwrap();
        let p = tangent_project(&u, u.matrix()).unwrap();
        assert!(p.norm() < 1e-14);

        let xi = random_tangent(&u, 4);
        let again = tangent_project(&u, xi.matrix()).unwrap();
        assert!((again.matrix() - xi.matrix()).norm() < 1e-14);
        assert!(tangent_project(&u, &DMatrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn non_tangent_is_rejected() {
        let u = StiefelPoint::<f64>::canonical(3, 1).unwrap();
        assert!(matches!(
            TangentVector::new(&u, dmatrix![1.0; 0.0; 0.0]),
            Err(Error::NotTangent(_))
        ));
        assert!(TangentVector::new(&u, dmatrix![0.0; 1.0; 0.0]).is_ok());
    }

    #[test]
    fn zero_step_returns_base_point() {
        for (d, k) in [(5, 2), (4, 4), (3, 2), (1, 1)] {
            let u = random_stiefel::<f64>(d, k, 17).unwrap();
            for m in Retraction::ALL {
                let r = retract(&u, &TangentVector::zeros(&u), m).unwrap();
                assert!((r.matrix() - u.matrix()).amax() < 1e-12, "{m} d={d} k={k}");
            }
        }
    }

    #[test]
    fn polar_closed_form() {
        let t: f64 = 0.7;
        let u = StiefelPoint::new(dmatrix![1.0; 0.0]).unwrap();
        let xi = TangentVector::new(&u, dmatrix![0.0; t]).unwrap();
        let r = retract(&u, &xi, Retraction::Polar).unwrap();
        let s = (1.0 + t * t).sqrt();
        assert!((r.matrix() - dmatrix![1.0 / s; t / s]).amax() < 1e-15);
    }

    #[test]
    fn exponential_follows_great_circle() {
        // k = 1: the canonical geodesic is cos‖ξ‖ U + sin‖ξ‖ ξ/‖ξ‖.
        let t: f64 = 0.9;
        let u = StiefelPoint::new(dmatrix![1.0; 0.0; 0.0]).unwrap();
        let xi = TangentVector::new(&u, dmatrix![0.0; t; 0.0]).unwrap();
        let r = retract(&u, &xi, Retraction::Exponential).unwrap();
        assert!((r.matrix() - dmatrix![t.cos(); t.sin(); 0.0]).amax() < 1e-14);
    }

    #[test]
    fn all_retractions_land_on_manifold() {
        for (d, k) in [(6, 2), (5, 3), (4, 4), (3, 2), (10, 1)] {
            let u = random_stiefel::<f64>(d, k, 5).unwrap();
            let xi = random_tangent(&u, 6);
            for m in Retraction::ALL {
                let r = retract(&u, &xi, m).unwrap();
                assert!(r.orthonormality_error() < 1e-10, "{m} d={d} k={k}: {}", r.orthonormality_error());
            }
        }
    }

    #[test]
    fn second_order_agreement() {
        let u = random_stiefel::<f64>(7, 3, 21).unwrap();
        let xi = random_tangent(&u, 22);
        let xi = xi.scale(1.0 / xi.norm());
        for m in Retraction::ALL {
            let ratio = |s: f64| {
                let r = retract(&u, &xi.scale(s), m).unwrap();
                (r.matrix() - (u.matrix() + xi.matrix() * s)).norm() / (s * s)
            };
            let (a, b) = (ratio(1e-3), ratio(1e-2));
            assert!(a / b < 2.0 && b / a < 2.0, "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let u = random_stiefel::<f32>(8, 2, 1).unwrap();
        assert!(u.orthonormality_error() < 1e-5);
        let g = DMatrix::<f32>::from_fn(8, 2, |i, j| (i + 2 * j) as f32 * 0.05);
        let xi = tangent_project(&u, &g).unwrap();
        for m in Retraction::ALL {
            let r = retract(&u, &xi, m).unwrap();
            assert!(r.orthonormality_error() < 1e-5, "{m}");
        }
    }
}
