//! Dense linear-algebra primitives sized for small user counts (K <= 32).
//!
//! Everything here is a thin layer over `nalgebra` factorizations that adds
//! the positive-definiteness pivot floor shared by every solver in the crate.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type RealMatrix = DMatrix<f64>;
pub type ComplexVector = DVector<Complex64>;
pub type RealVector = DVector<f64>;

/// Relative pivot floor: a factorization pivot at or below
/// `EPS_PD * trace(A) / n` is reported as [`Error::NotPositiveDefinite`].
pub const EPS_PD: f64 = 1e-12;

/// Relative residual every solve is expected to meet.
pub const EPS_SOLVE: f64 = 1e-10;

fn check_square<T: nalgebra::Scalar>(a: &DMatrix<T>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::BadDimensions(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_finite<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Result<()> {
    if a.iter().all(|x| x.clone().modulus().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Cholesky factor of a Hermitian (or real symmetric) positive definite
/// matrix.
#[derive(Clone, Debug)]
pub struct PdFactor<T: ComplexField> {
    chol: Cholesky<T, Dyn>,
}

impl<T: ComplexField<RealField = f64>> PdFactor<T> {
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        check_square(a)?;
        check_finite(a)?;
        let n = a.nrows();
        if n == 0 {
            return Err(Error::BadDimensions("empty matrix".into()));
        }
        let trace: f64 = (0..n).map(|i| a[(i, i)].clone().real()).sum();
        let threshold = EPS_PD * trace.abs() / n as f64;
        let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite {
            pivot: 0.0,
            threshold,
        })?;
        let l = chol.l_dirty();
        for i in 0..n {
            let pivot = l[(i, i)].clone().modulus_squared();
            if pivot <= threshold {
                return Err(Error::NotPositiveDefinite { pivot, threshold });
            }
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        self.chol.solve(b)
    }
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub fn hermitian_solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if b.nrows() != a.nrows() {
        return Err(Error::BadDimensions(format!(
            "rhs has {} rows, matrix is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(PdFactor::new(a)?.solve(b))
}

/// Solves `A x = b` for real symmetric positive definite `A`.
pub fn real_solve(a: &RealMatrix, b: &RealVector) -> Result<RealVector> {
    if b.len() != a.nrows() {
        return Err(Error::BadDimensions(format!(
            "rhs has {} entries, matrix is {}x{}",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(PdFactor::new(a)?.solve_vec(b))
}

/// The K x K Gram matrix `H H^H`, made exactly Hermitian.
pub fn gram(h: &ComplexMatrix) -> ComplexMatrix {
    let g = h * h.adjoint();
    (&g + g.adjoint()).map(|z| z * 0.5)
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut RealMatrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Orthogonal factorization `H^H = Q R` of a K x N_t channel (K <= N_t).
///
/// `R^H R = H H^H`, so `R` is a Cholesky factor of the Gram matrix obtained
/// without forming it. Applying `(H H^H)^{-1}` through `R` keeps the error in
/// `H x` proportional to cond(H) instead of cond(H)^2, which matters for the
/// square, poorly conditioned channels of the N_t = K experiments.
#[derive(Clone, Debug)]
pub struct ChannelFactor {
    q: ComplexMatrix,
    r: ComplexMatrix,
}

impl ChannelFactor {
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        let (k, nt) = h.shape();
        if k == 0 || k > nt {
            return Err(Error::BadDimensions(format!(
                "channel must have 1 <= K <= N_t, got K = {k}, N_t = {nt}"
            )));
        }
        check_finite(h)?;
        let qr = h.adjoint().qr();
        let q = qr.q();
        let r = qr.r();
        let trace = h.norm_squared();
        let threshold = EPS_PD * trace / k as f64;
        for i in 0..k {
            let pivot = r[(i, i)].norm_sqr();
            if pivot <= threshold {
                return Err(Error::NotPositiveDefinite { pivot, threshold });
            }
        }
        Ok(Self { q, r })
    }

    pub fn users(&self) -> usize {
        self.r.nrows()
    }

    /// `R^{-H} b`; its squared norm is the quadratic form `b^H (H H^H)^{-1} b`.
    pub fn whiten(&self, b: &ComplexVector) -> ComplexVector {
        self.r
            .ad_solve_upper_triangular(b)
            .expect("pivots checked at construction")
    }

    /// `R^{-H} B` column by column.
    pub fn whiten_matrix(&self, b: &ComplexMatrix) -> ComplexMatrix {
        self.r
            .ad_solve_upper_triangular(b)
            .expect("pivots checked at construction")
    }

    /// `H^H (H H^H)^{-1} b`, evaluated as `Q R^{-H} b`.
    pub fn pinv_apply(&self, b: &ComplexVector) -> ComplexVector {
        &self.q * self.whiten(b)
    }

    /// `(H H^H)^{-1} B`.
    pub fn gram_solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let z = self.whiten_matrix(b);
        self.r
            .solve_upper_triangular(&z)
            .expect("pivots checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::signal::{complex_gaussian, sample_channel};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = ComplexMatrix::identity(2, 2);
        let b = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 2.0), c(-3.0, 0.5), c(0.0, 1.0), c(4.0, -4.0)]);
        let x = hermitian_solve(&a, &b).unwrap();
        assert_relative_eq!((x - b).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_solve() {
        let a = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(2.0, 0.0), c(4.0, 0.0)]));
        let b = ComplexMatrix::from_element(2, 1, c(1.0, 0.0));
        let x = hermitian_solve(&a, &b).unwrap();
        assert_relative_eq!(x[(0, 0)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(x[(1, 0)].re, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn random_gram_solve_multiplies_back() {
        let mut rng = SimRng::new(11);
        let h = sample_channel(3, 3, &mut rng).unwrap();
        let a = gram(h.matrix());
        let id = ComplexMatrix::identity(3, 3);
        let x = hermitian_solve(&a, &id).unwrap();
        assert!((&a * &x - &id).norm() <= 1e-10 * id.norm());
    }

    #[test]
    fn real_solve_examples() {
        let b = RealVector::from_vec(vec![0.3, -2.0, 7.0]);
        let x = real_solve(&RealMatrix::identity(3, 3), &b).unwrap();
        assert_eq!(x, b);
        let a = RealMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let x = real_solve(&a, &RealVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = real_solve(&a, &RealVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(
            PdFactor::new(&a).unwrap_err(),
            Error::NotPositiveDefinite { .. }
        ));
    }

    #[test]
    fn non_square_and_non_finite_inputs() {
        let a = RealMatrix::zeros(2, 3);
        assert!(matches!(PdFactor::new(&a).unwrap_err(), Error::BadDimensions(_)));
        let a = RealMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(PdFactor::new(&a).unwrap_err(), Error::NonFinite);
    }

    #[test]
    fn gram_examples() {
        let id = ComplexMatrix::identity(3, 3);
        assert_eq!(gram(&id), id);
        let h = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 1.0)]);
        let g = gram(&h);
        assert_eq!(g.shape(), (1, 1));
        assert_relative_eq!(g[(0, 0)].re, 2.0);
        assert_eq!(g[(0, 0)].im, 0.0);
    }

    #[test]
    fn gram_is_exactly_hermitian_with_nonnegative_spectrum() {
        let mut rng = SimRng::new(5);
        let h = sample_channel(3, 5, &mut rng).unwrap();
        let g = gram(h.matrix());
        assert_eq!(g, g.adjoint());
        for i in 0..3 {
            assert!(g[(i, i)].re >= 0.0);
            assert_eq!(g[(i, i)].im, 0.0);
        }
        let eig = g.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn channel_factor_matches_gram() {
        let mut rng = SimRng::new(3);
        let h = sample_channel(4, 6, &mut rng).unwrap();
        let f = ChannelFactor::new(h.matrix()).unwrap();
        let id = ComplexMatrix::identity(4, 4);
        let inv = f.gram_solve(&id);
        let direct = hermitian_solve(&gram(h.matrix()), &id).unwrap();
        assert!((inv - direct).norm() <= 1e-10);
        let b = ComplexVector::from_fn(4, |i, _| c(i as f64, 1.0 - i as f64));
        let x = f.pinv_apply(&b);
        assert!((h.matrix() * &x - &b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn channel_factor_rejects_wide_user_count() {
        let h = ComplexMatrix::zeros(3, 2);
        assert!(matches!(
            ChannelFactor::new(&h).unwrap_err(),
            Error::BadDimensions(_)
        ));
        let h = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            ChannelFactor::new(&h).unwrap_err(),
            Error::NotPositiveDefinite { .. }
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn solve_then_multiply_is_identity(seed in any::<u64>(), n in 1usize..6) {
                let mut rng = SimRng::new(seed);
                let h = sample_channel(n, n + 2, &mut rng).unwrap();
                let a = gram(h.matrix());
                let b = ComplexMatrix::from_fn(n, 2, |_, _| complex_gaussian(&mut rng, 1.0));
                let x = hermitian_solve(&a, &b).unwrap();
                prop_assert!((&a * &x - &b).norm() <= 1e-9 * b.norm());
            }
        }
    }
}
