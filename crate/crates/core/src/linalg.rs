//! Small dense complex linear-algebra helpers shared by the estimation and
//! moment code.

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Result, SimError};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Condition-number threshold above which an inverse is ridge-regularized.
pub const RIDGE_CONDITION_LIMIT: f64 = 1e8;
/// Ridge weight relative to the average channel gain.
pub const RIDGE_EPSILON: f64 = 1e-10;

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// `||A - B||_F / ||B||_F`, or the absolute error when `B` is zero.
pub fn relative_frobenius(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Eigen-decomposition of a Hermitian matrix. Eigenvalues are returned
/// unsorted together with the unitary eigenvector matrix.
pub fn hermitian_eigen(a: &CMat) -> (DVector<f64>, CMat) {
    let eig = hermitian_part(a).symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

pub fn eigenvalue_bounds(a: &CMat) -> (f64, f64) {
    let (vals, _) = hermitian_eigen(a);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Hermitian PSD square root `S` with `S S^H = A` (and `S = S^H`). Negative
/// eigenvalues are clamped to zero; the returned flag reports whether any were.
pub fn psd_sqrt(a: &CMat) -> (CMat, bool) {
    let (vals, vecs) = hermitian_eigen(a);
    let mut clamped = false;
    let roots: Vec<f64> = vals
        .iter()
        .map(|&v| {
            if v < 0.0 {
                clamped = true;
                0.0
            } else {
                v.sqrt()
            }
        })
        .collect();
    let mut scaled = vecs.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*r);
    }
    (&scaled * vecs.adjoint(), clamped)
}

/// A factor `L` with `L L^H = R`. Cholesky is attempted first; rank-deficient
/// matrices fall back to the clamped eigen square root. On numerically
/// singular input Cholesky can run to completion with a wrong factor, so its
/// result is checked before use.
pub fn covariance_factor(r: &CMat) -> CMat {
    if r.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return CMat::zeros(r.nrows(), r.ncols());
    }
    let chol = Cholesky::new(hermitian_part(r))
        .map(|ch| ch.unpack())
        .filter(|l| relative_frobenius(&(l * l.adjoint()), r) <= 1e-10);
    match chol {
        Some(l) => l,
        None => {
            let (root, clamped) = psd_sqrt(r);
            if clamped {
                debug!("covariance factor: clamped negative eigenvalues to zero");
            }
            root
        }
    }
}

/// Cached Cholesky factorization of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct HermitianSolver {
    chol: Cholesky<C64, Dyn>,
}

impl HermitianSolver {
    pub fn new(a: &CMat) -> Result<Self> {
        Cholesky::new(hermitian_part(a))
            .map(|chol| Self { chol })
            .ok_or_else(|| SimError::Numerical("Cholesky factorization of a non-PD matrix".into()))
    }

    /// `A^{-1} B`.
    pub fn solve(&self, b: &CMat) -> CMat {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        self.chol.solve(b)
    }

    pub fn factor(&self) -> CMat {
        self.chol.l()
    }
}

/// Inverse of a covariance matrix, ridge-regularized as `R + eps*beta*I` when
/// its condition number exceeds [`RIDGE_CONDITION_LIMIT`].
#[derive(Clone, Debug)]
pub struct RegularizedInverse {
    solver: HermitianSolver,
    pub ridged: bool,
    pub condition: f64,
}

impl RegularizedInverse {
    pub fn new(r: &CMat, beta: f64) -> Result<Self> {
        let (min, max) = eigenvalue_bounds(r);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        let ridged = condition > RIDGE_CONDITION_LIMIT;
        let target = if ridged {
            debug!("ridge-regularizing covariance inverse (cond = {condition:.3e})");
            r + CMat::identity(r.nrows(), r.ncols()).scale(RIDGE_EPSILON * beta)
        } else {
            r.clone()
        };
        Ok(Self {
            solver: HermitianSolver::new(&target)?,
            ridged,
            condition,
        })
    }

    /// `R^{-1} B`.
    pub fn solve(&self, b: &CMat) -> CMat {
        self.solver.solve(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_of_numerically_singular_covariance_reproduces_it() {
        // Narrow angular spread at 32 antennas: rank-deficient in floating point.
        for angles in [[0.78, 0.8], [0.89, 0.9], [1.04, 1.05]] {
            let r = crate::scenario::local_scattering_covariance(2.0, &angles, 0.02, 32);
            let l = covariance_factor(&r);
            assert!(relative_frobenius(&(&l * l.adjoint()), &r) < 1e-10);
        }
    }

    fn sample_hermitian(m: usize) -> CMat {
        let a = CMat::from_fn(m, m, |i, j| C64::new((i + 2 * j) as f64 * 0.3 - 1.0, (i as f64 - j as f64) * 0.2));
        &a * a.adjoint() + CMat::identity(m, m)
    }

    #[test]
    fn trace_product_matches_full_product() {
        let a = sample_hermitian(5);
        let b = CMat::from_fn(5, 5, |i, j| C64::new(i as f64, j as f64));
        let direct = trace(&(&a * &b));
        assert!((trace_product(&a, &b) - direct).norm() < 1e-10);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = sample_hermitian(6);
        let (s, clamped) = psd_sqrt(&a);
        assert!(!clamped);
        assert!(relative_frobenius(&(&s * s.adjoint()), &a) < 1e-12);
    }

    #[test]
    fn covariance_factor_handles_rank_one() {
        let v = CVec::from_fn(4, |i, _| C64::new(1.0, i as f64));
        let r = &v * v.adjoint();
        let l = covariance_factor(&r);
        assert!(relative_frobenius(&(&l * l.adjoint()), &r) < 1e-10);
    }

    #[test]
    fn regularized_inverse_is_exact_when_well_conditioned() {
        let a = sample_hermitian(4);
        let inv = RegularizedInverse::new(&a, 1.0).unwrap();
        assert!(!inv.ridged);
        let id = CMat::identity(4, 4);
        assert!(relative_frobenius(&(&a * inv.solve(&id)), &id) < 1e-12);
    }
}
