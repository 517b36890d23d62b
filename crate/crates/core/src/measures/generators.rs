//! Synthetic measure pairs for the fragmented-hypercube and Wishart Gaussian
//! experiments. Every generator is a pure function of its parameters and seed
//! (ChaCha8, so streams are identical across platforms).

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_k_star(d: usize, k_star: usize) -> Result<()> {
    if d == 0 || k_star == 0 || k_star > d {
        return Err(Error::InvalidParameter(format!(
            "k_star = {k_star} must lie in 1..={d}"
        )));
    }
    Ok(())
}

/// The map `x ↦ x + 2 sign(x) ⊙ (e_1 + … + e_{k*})`.
pub fn hypercube_map<T: Real>(x: &RowDVector<T>, k_star: usize) -> RowDVector<T> {
    let two = T::of(2.0);
    let mut y = x.clone();
    for v in y.iter_mut().take(k_star) {
        if *v > T::zero() {
            *v += two;
        } else if *v < T::zero() {
            *v -= two;
        }
    }
    y
}

/// Uniform sample of `n` points on `[-1, 1]^d` paired with an independent
/// uniform sample pushed forward by [`hypercube_map`].
///
/// The population pair has `W₂² = 4 k*`, attained in the span of the first
/// `k*` coordinates.
pub fn fragmented_hypercube<T: Real>(
    n: usize,
    d: usize,
    k_star: usize,
    rng_seed: u64,
) -> Result<(DiscreteMeasure<T>, DiscreteMeasure<T>)> {
    check_k_star(d, k_star)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cube = |rng: &mut ChaCha8Rng| -> Vec<RowDVector<T>> {
        (0..n)
            .map(|_| RowDVector::from_iterator(d, (0..d).map(|_| T::of(rng.random_range(-1.0..1.0)))))
            .collect()
    };
    let xs = cube(&mut rng);
    let ys: Vec<_> = cube(&mut rng).iter().map(|y| hypercube_map(y, k_star)).collect();
    let mu = DiscreteMeasure::uniform(DMatrix::from_rows(&xs))?;
    let nu = DiscreteMeasure::uniform(DMatrix::from_rows(&ys))?;
    Ok((mu, nu))
}

/// Two centred Gaussian samples with Wishart-distributed, rank-`k*`
/// covariances `Σ = A Aᵀ`.
#[derive(Debug, Clone)]
pub struct GaussianPair<T: Real> {
    pub mu: DiscreteMeasure<T>,
    pub nu: DiscreteMeasure<T>,
    /// `d × k*` factor `A` of `Σ₁ = A Aᵀ`.
    pub factor_mu: DMatrix<T>,
    /// `d × k*` factor of `Σ₂`.
    pub factor_nu: DMatrix<T>,
}

/// Draws `Σ₁, Σ₂ ~ Wishart(I_d, k*)` and `n` points from each `N(0, Σ)`.
///
/// Points are generated as `A z` with `z ~ N(0, I_{k*})`, so each sample lies
/// exactly in the column space of its factor.
pub fn wishart_gaussian_pair<T: Real>(
    n: usize,
    d: usize,
    k_star: usize,
    rng_seed: u64,
) -> Result<GaussianPair<T>> {
    check_k_star(d, k_star)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut gaussian = |rows: usize, cols: usize| {
        let mut m = DMatrix::<T>::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = T::of(rng.sample::<f64, _>(StandardNormal));
            }
        }
        m
    };
    let factor_mu = gaussian(d, k_star);
    let factor_nu = gaussian(d, k_star);
    let z_mu = gaussian(n, k_star);
    let z_nu = gaussian(n, k_star);
    let mu = DiscreteMeasure::uniform(z_mu * factor_mu.transpose())?;
    let nu = DiscreteMeasure::uniform(z_nu * factor_nu.transpose())?;
    Ok(GaussianPair {
        mu,
        nu,
        factor_mu,
        factor_nu,
    })
}

/// Adds independent `N(0, σ² I_d)` noise to every atom; weights are kept.
pub fn add_noise<T: Real>(measure: &DiscreteMeasure<T>, sigma: f64, rng_seed: u64) -> Result<DiscreteMeasure<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level {sigma} must be ≥ 0")));
    }
    if sigma == 0.0 {
        return Ok(measure.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (n, d) = (measure.len(), measure.dim());
    let mut pts = measure.points().clone();
    // Row-major draw order keeps the stream independent of storage layout.
    for i in 0..n {
        for j in 0..d {
            pts[(i, j)] += T::of(sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    measure.with_points(pts)
}
