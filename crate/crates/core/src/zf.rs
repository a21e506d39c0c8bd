//! Zero-forcing and regularized zero-forcing baselines with symbol-level
//! power normalization.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{ChannelFactor, ComplexMatrix, ComplexVector, PdFactor};
use crate::signal::{ChannelMatrix, SymbolVector};

/// Symbol-level beamformer `W = x s^H / K`.
///
/// Every precoder in this crate is built for one symbol vector `s`, and the
/// rank-one form keeps `W s = x` with `||W s||^2 = p0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformingMatrix {
    x: ComplexVector,
    s: ComplexVector,
    p0: f64,
}

impl BeamformingMatrix {
    pub fn from_precoded(x: ComplexVector, s: ComplexVector, p0: f64) -> Self {
        Self { x, s, p0 }
    }

    /// The transmitted vector `x = W s`.
    pub fn precoded(&self) -> &ComplexVector {
        &self.x
    }

    pub fn power_budget(&self) -> f64 {
        self.p0
    }

    pub fn antennas(&self) -> usize {
        self.x.len()
    }

    pub fn users(&self) -> usize {
        self.s.len()
    }

    /// Dense N_t x K matrix.
    pub fn matrix(&self) -> ComplexMatrix {
        let k = self.s.len() as f64;
        (&self.x * self.s.adjoint()).map(|z| z / k)
    }

    /// `W s'` for an arbitrary K-vector.
    pub fn apply(&self, s: &ComplexVector) -> ComplexVector {
        let k = self.s.len() as f64;
        let coeff = self.s.dotc(s) / k;
        self.x.map(|z| z * coeff)
    }
}

fn check_inputs(h: &ChannelMatrix, s: &SymbolVector, p0: f64) -> Result<()> {
    if s.len() != h.users() {
        return Err(Error::BadDimensions(format!(
            "{} symbols for {} users",
            s.len(),
            h.users()
        )));
    }
    if !(p0 > 0.0) || !p0.is_finite() {
        return Err(Error::BadParameter(format!("power budget p0 = {p0}")));
    }
    Ok(())
}

/// ZF precoding, `x = H^H (H H^H)^{-1} s / f` with
/// `f = sqrt(s^H (H H^H)^{-1} s / p0)`.
///
/// Returns the beamformer and `f`.
pub fn zf_precode(h: &ChannelMatrix, s: &SymbolVector, p0: f64) -> Result<(BeamformingMatrix, f64)> {
    check_inputs(h, s, p0)?;
    let factor = ChannelFactor::new(h.matrix())?;
    Ok(zf_with_factor(&factor, s, p0))
}

/// ZF from a precomputed channel factorization.
pub fn zf_with_factor(factor: &ChannelFactor, s: &SymbolVector, p0: f64) -> (BeamformingMatrix, f64) {
    // ||R^{-H} s||^2 is the quadratic form s^H (H H^H)^{-1} s.
    let z = factor.whiten(s.values());
    let f = (z.norm_squared() / p0).sqrt();
    let x = factor.pinv_apply(s.values()).map(|v| v / f);
    (BeamformingMatrix::from_precoded(x, s.values().clone(), p0), f)
}

/// RZF precoding with diagonal loading `K / rho`.
///
/// `rho = f64::INFINITY` removes the loading and reproduces ZF.
pub fn rzf_precode(h: &ChannelMatrix, s: &SymbolVector, p0: f64, rho: f64) -> Result<BeamformingMatrix> {
    check_inputs(h, s, p0)?;
    if !(rho > 0.0) {
        return Err(Error::BadParameter(format!("RZF needs rho > 0, got {rho}")));
    }
    if rho.is_infinite() {
        return Ok(zf_precode(h, s, p0)?.0);
    }
    let hm = h.matrix();
    let k = h.users();
    let loading = k as f64 / rho;
    let mut a = hm * hm.adjoint();
    for i in 0..k {
        a[(i, i)] += Complex64::new(loading, 0.0);
    }
    let a = (&a + a.adjoint()).map(|z| z * 0.5);
    let y = PdFactor::new(&a)?.solve_vec(s.values());
    let raw = hm.adjoint() * y;
    let f = raw.norm() / p0.sqrt();
    let x = raw.map(|v| v / f);
    Ok(BeamformingMatrix::from_precoded(x, s.values().clone(), p0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram, hermitian_solve};
    use crate::rng::SimRng;
    use crate::signal::{receive_noiseless, sample_channel, Constellation};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn random_case(seed: u64, k: usize, nt: usize) -> (ChannelMatrix, SymbolVector) {
        let mut rng = SimRng::new(seed);
        let c = Constellation::new(4).unwrap();
        let h = sample_channel(k, nt, &mut rng).unwrap();
        let s = SymbolVector::sample(k, &c, &mut rng);
        (h, s)
    }

    #[test]
    fn identity_channel() {
        let c = Constellation::new(4).unwrap();
        let h = ChannelMatrix::from_matrix(ComplexMatrix::identity(3, 3)).unwrap();
        let s = SymbolVector::from_indices(&c, vec![0, 2, 3]).unwrap();
        let (w, f) = zf_precode(&h, &s, 1.0).unwrap();
        assert_relative_eq!(f, 3f64.sqrt(), epsilon = 1e-14);
        let expected = s.values().map(|z| z / 3f64.sqrt());
        assert!((w.precoded() - expected).norm() < 1e-14);
    }

    #[test]
    fn power_and_noiseless_receive() {
        for seed in 0..50 {
            let (h, s) = random_case(seed, 4, 4 + (seed as usize % 3));
            let p0 = 0.5 + seed as f64 * 0.1;
            let (w, f) = zf_precode(&h, &s, p0).unwrap();
            assert_relative_eq!(w.precoded().norm_squared(), p0, max_relative = 1e-10);
            let r = receive_noiseless(&h, w.precoded()).unwrap();
            let expected = s.values().map(|z| z / f);
            assert!((r - expected).norm() <= 1e-9 * s.values().norm() / f);
        }
    }

    #[test]
    fn f_matches_double_sum_over_inverse_gram() {
        let c = Constellation::new(4).unwrap();
        let h = sample_channel(2, 2, &mut SimRng::new(31)).unwrap();
        // (1+j)/sqrt2 is index 0, (1-j)/sqrt2 is index 3
        let s = SymbolVector::from_indices(&c, vec![0, 3]).unwrap();
        assert!((s.values()[1] - Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2)).norm() < 1e-15);
        let inv = hermitian_solve(&gram(h.matrix()), &ComplexMatrix::identity(2, 2)).unwrap();
        let mut sum = Complex64::new(0.0, 0.0);
        for m in 0..2 {
            for n in 0..2 {
                sum += inv[(m, n)] * s.values()[m].conj() * s.values()[n];
            }
        }
        let p0 = 1.7;
        let (_, f) = zf_precode(&h, &s, p0).unwrap();
        assert_relative_eq!(f * f * p0, sum.re, max_relative = 1e-10);
        assert!(sum.im.abs() < 1e-10 * sum.re);
    }

    #[test]
    fn unnormalized_zf_has_no_interference() {
        let (h, _) = random_case(9, 5, 7);
        let f = ChannelFactor::new(h.matrix()).unwrap();
        let w = h.matrix().adjoint() * f.gram_solve(&ComplexMatrix::identity(5, 5));
        let d = h.matrix() * w;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(d[(i, j)].norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn unit_phase_rotation_rotates_output() {
        let (h, s) = random_case(12, 3, 5);
        let rot = Complex64::from_polar(1.0, 0.7);
        let (w, _) = zf_precode(&h, &s, 1.0).unwrap();
        // rotate s by the same unit phase, bypassing the constellation check
        let factor = ChannelFactor::new(h.matrix()).unwrap();
        let rotated = s.values().map(|z| z * rot);
        let z = factor.whiten(&rotated);
        let f = z.norm();
        let x_rot = factor.pinv_apply(&rotated).map(|v| v / f);
        assert!((x_rot - w.precoded().map(|v| v * rot)).norm() < 1e-12);
    }

    #[test]
    fn rzf_power_and_limits() {
        for seed in 0..30 {
            let (h, s) = random_case(100 + seed, 4, 6);
            let w = rzf_precode(&h, &s, 2.0, 3.0).unwrap();
            assert_relative_eq!(w.precoded().norm_squared(), 2.0, max_relative = 1e-10);
            let inf = rzf_precode(&h, &s, 2.0, f64::INFINITY).unwrap();
            let (zf, _) = zf_precode(&h, &s, 2.0).unwrap();
            assert!((inf.precoded() - zf.precoded()).norm() < 1e-12);
            let huge = rzf_precode(&h, &s, 2.0, 1e14).unwrap();
            assert!((huge.precoded() - zf.precoded()).norm() < 1e-6);
        }
    }

    #[test]
    fn rzf_identity_channel_absorbs_regularizer() {
        let c = Constellation::new(4).unwrap();
        let h = ChannelMatrix::from_matrix(ComplexMatrix::identity(2, 2)).unwrap();
        let s = SymbolVector::from_indices(&c, vec![1, 2]).unwrap();
        let w = rzf_precode(&h, &s, 1.0, 2.0).unwrap();
        let expected = s.values().map(|z| z / 2f64.sqrt());
        assert!((w.precoded() - expected).norm() < 1e-14);
    }

    #[test]
    fn rzf_rejects_nonpositive_rho() {
        let (h, s) = random_case(1, 2, 2);
        for rho in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                rzf_precode(&h, &s, 1.0, rho).unwrap_err(),
                Error::BadParameter(_)
            ));
        }
    }

    #[test]
    fn rank_one_matrix_reproduces_precoded_vector() {
        let (h, s) = random_case(4, 3, 4);
        let (w, _) = zf_precode(&h, &s, 1.0).unwrap();
        let dense = w.matrix();
        assert_eq!(dense.shape(), (4, 3));
        assert!((&dense * s.values() - w.precoded()).norm() < 1e-14);
        assert!((w.apply(s.values()) - w.precoded()).norm() < 1e-14);
    }
}
