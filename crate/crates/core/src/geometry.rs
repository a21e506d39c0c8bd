//! Per-symbol constructive-interference quantities and closed-form
//! beamformer reconstruction from a dual (simplex) point.
//!
//! For strict phase rotation the dual problem is
//! `min u^T V^{-1} u` over the probability simplex in K dimensions, with
//! `T = diag(s^H) (H H^H)^{-1} diag(s)` and `V = Re(T)`. The non-strict case
//! has the same shape in 2K dimensions with `V^ = S^{-T} T^ S^{-1}`, where `T^`
//! is the real block form of `T` and `S` encodes the two sector-edge
//! constraints per user.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    symmetrize, ChannelFactor, ComplexMatrix, ComplexVector, PdFactor, RealMatrix, RealVector,
};
use crate::signal::{ChannelMatrix, SymbolVector};
use crate::zf::BeamformingMatrix;

/// Tolerance on `1^T u = 1` for points handed to [`CiKernel::beamformer_from_dual`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Smallest admissible `u^T V^{-1} u`.
pub const DEGENERATE_OBJECTIVE: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rotation {
    Strict,
    /// Received signals may rotate within the sector of half-angle
    /// `threshold_angle` (pi / M for M-PSK).
    NonStrict {
        threshold_angle: f64,
    },
}

impl Rotation {
    pub fn is_strict(&self) -> bool {
        matches!(self, Rotation::Strict)
    }
}

/// The simplex QP data shared by both rotation modes: an SPD matrix `V`
/// (the dual objective is `u^T V^{-1} u`), its row sums `a`, their total `c`,
/// and the centred matrix `G = V - a a^T / c`.
#[derive(Clone, Debug)]
pub struct SimplexForm {
    v: RealMatrix,
    factor: PdFactor<f64>,
    a: RealVector,
    c: f64,
    g: RealMatrix,
}

impl SimplexForm {
    /// Builds the form from a symmetric positive definite `V`.
    pub fn from_v(mut v: RealMatrix) -> Result<Self> {
        symmetrize(&mut v);
        let factor = PdFactor::new(&v)?;
        let n = v.nrows();
        let a = RealVector::from_iterator(n, v.row_iter().map(|r| r.sum()));
        let c = a.sum();
        if !(c > 0.0) {
            // 1^T V 1 > 0 for any PD V; only reachable through round-off.
            return Err(Error::NotPositiveDefinite {
                pivot: c,
                threshold: 0.0,
            });
        }
        let mut g = &v - (&a * a.transpose()) / c;
        symmetrize(&mut g);
        Ok(Self { v, factor, a, c, g })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn v(&self) -> &RealMatrix {
        &self.v
    }

    pub fn a(&self) -> &RealVector {
        &self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn g(&self) -> &RealMatrix {
        &self.g
    }

    /// `V^{-1} x` through the Cholesky factor of `V`.
    pub fn v_inv_apply(&self, x: &RealVector) -> RealVector {
        self.factor.solve_vec(x)
    }

    /// `u^T V^{-1} u`.
    pub fn objective(&self, u: &RealVector) -> f64 {
        u.dot(&self.v_inv_apply(u))
    }

    /// The ZF dual point `a / c`.
    pub fn zf_point(&self) -> RealVector {
        &self.a / self.c
    }
}

impl AsRef<SimplexForm> for SimplexForm {
    fn as_ref(&self) -> &SimplexForm {
        self
    }
}

#[derive(Clone, Debug)]
struct NonStrictParts {
    tan_threshold: f64,
    t_hat: RealMatrix,
    s: RealMatrix,
    s_inv: RealMatrix,
}

/// Everything needed to turn a dual point into a beamformer for one
/// `(H, s)` pair.
#[derive(Clone, Debug)]
pub struct CiKernel {
    rotation: Rotation,
    p0: f64,
    channel: ChannelFactor,
    symbols: ComplexVector,
    t: ComplexMatrix,
    form: SimplexForm,
    non_strict: Option<NonStrictParts>,
}

/// Dual point together with the beamformer quantities it induces.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    /// Point with `1^T u = 1`, length K (strict) or 2K (non-strict).
    pub u: RealVector,
    /// Multipliers of `u >= 0`, `q = 2 (V^{-1} u - min(V^{-1} u))`.
    pub q: RealVector,
    /// `sqrt(u^T V^{-1} u / (4 p0))`.
    pub alpha0: f64,
    /// Per-user received amplitudes, `H W s = diag(lambda) s`.
    pub lambda: ComplexVector,
    /// Smallest constructive margin over users.
    pub t_star: f64,
    /// `u^T V^{-1} u`.
    pub objective: f64,
}

fn real_block(re: &RealMatrix, im: &RealMatrix) -> RealMatrix {
    let k = re.nrows();
    let mut out = RealMatrix::zeros(2 * k, 2 * k);
    out.view_mut((0, 0), (k, k)).copy_from(re);
    out.view_mut((0, k), (k, k)).copy_from(&(-im));
    out.view_mut((k, 0), (k, k)).copy_from(im);
    out.view_mut((k, k), (k, k)).copy_from(re);
    out
}

/// `S = [I, -I/tan; I, I/tan]`.
pub fn sector_matrix(k: usize, tan_threshold: f64) -> RealMatrix {
    let id = RealMatrix::identity(k, k);
    let mut s = RealMatrix::zeros(2 * k, 2 * k);
    s.view_mut((0, 0), (k, k)).copy_from(&id);
    s.view_mut((0, k), (k, k))
        .copy_from(&(&id * (-1.0 / tan_threshold)));
    s.view_mut((k, 0), (k, k)).copy_from(&id);
    s.view_mut((k, k), (k, k)).copy_from(&(&id / tan_threshold));
    s
}

/// Closed-form `S^{-1} = 1/2 [I, I; -tan I, tan I]`.
fn sector_matrix_inverse(k: usize, tan_threshold: f64) -> RealMatrix {
    let half = RealMatrix::identity(k, k) * 0.5;
    let mut s = RealMatrix::zeros(2 * k, 2 * k);
    s.view_mut((0, 0), (k, k)).copy_from(&half);
    s.view_mut((0, k), (k, k)).copy_from(&half);
    s.view_mut((k, 0), (k, k)).copy_from(&(&half * -tan_threshold));
    s.view_mut((k, k), (k, k)).copy_from(&(&half * tan_threshold));
    s
}

impl CiKernel {
    pub fn build(h: &ChannelMatrix, s: &SymbolVector, p0: f64, rotation: Rotation) -> Result<Self> {
        let k = h.users();
        if s.len() != k {
            return Err(Error::BadDimensions(format!("{} symbols for {k} users", s.len())));
        }
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::BadParameter(format!("power budget p0 = {p0}")));
        }
        if s.values().iter().any(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::BadParameter("symbols must have unit modulus".into()));
        }
        if let Rotation::NonStrict { threshold_angle } = rotation {
            if !(threshold_angle > 0.0 && threshold_angle < std::f64::consts::FRAC_PI_2 - 1e-12) {
                return Err(Error::UnsupportedModulation(threshold_angle));
            }
        }

        let channel = ChannelFactor::new(h.matrix())?;
        let symbols = s.values().clone();
        // T = Z^H Z with Z = R^{-H} diag(s), since (H H^H)^{-1} = R^{-1} R^{-H}.
        let z = channel.whiten_matrix(&ComplexMatrix::from_diagonal(&symbols));
        let t = z.adjoint() * &z;
        let t = (&t + t.adjoint()).map(|x| x * 0.5);
        let re = t.map(|x| x.re);

        let (v, non_strict) = match rotation {
            Rotation::Strict => (re, None),
            Rotation::NonStrict { threshold_angle } => {
                let tan_threshold = threshold_angle.tan();
                let im = t.map(|x| x.im);
                let t_hat = real_block(&re, &im);
                let s_inv = sector_matrix_inverse(k, tan_threshold);
                let v_hat = s_inv.transpose() * &t_hat * &s_inv;
                let parts = NonStrictParts {
                    tan_threshold,
                    t_hat,
                    s: sector_matrix(k, tan_threshold),
                    s_inv,
                };
                (v_hat, Some(parts))
            }
        };
        let form = SimplexForm::from_v(v)?;
        Ok(Self {
            rotation,
            p0,
            channel,
            symbols,
            t,
            form,
            non_strict,
        })
    }

    /// Kernel for strict phase rotation (dimension K).
    pub fn strict(h: &ChannelMatrix, s: &SymbolVector, p0: f64) -> Result<Self> {
        Self::build(h, s, p0, Rotation::Strict)
    }

    /// Kernel for non-strict phase rotation (dimension 2K).
    pub fn non_strict(h: &ChannelMatrix, s: &SymbolVector, p0: f64, threshold_angle: f64) -> Result<Self> {
        Self::build(h, s, p0, Rotation::NonStrict { threshold_angle })
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn power_budget(&self) -> f64 {
        self.p0
    }

    pub fn users(&self) -> usize {
        self.symbols.len()
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    pub fn form(&self) -> &SimplexForm {
        &self.form
    }

    pub fn channel(&self) -> &ChannelFactor {
        &self.channel
    }

    pub fn t(&self) -> &ComplexMatrix {
        &self.t
    }

    pub fn v(&self) -> &RealMatrix {
        self.form.v()
    }

    pub fn a(&self) -> &RealVector {
        self.form.a()
    }

    pub fn c(&self) -> f64 {
        self.form.c()
    }

    pub fn g(&self) -> &RealMatrix {
        self.form.g()
    }

    /// Real block form of `T` (non-strict only).
    pub fn t_hat(&self) -> Option<&RealMatrix> {
        self.non_strict.as_ref().map(|p| &p.t_hat)
    }

    /// Sector constraint matrix `S` (non-strict only).
    pub fn sector(&self) -> Option<&RealMatrix> {
        self.non_strict.as_ref().map(|p| &p.s)
    }

    /// Maps a dual point to the optimal-structure beamformer.
    ///
    /// Strict: `lambda = sqrt(p0 / u^T V^{-1} u) V^{-1} u`. Non-strict: the
    /// stacked real/imaginary amplitudes are `sqrt(p0 / u^T V^-1 u) T^-1 S^T u`,
    /// evaluated as `S^{-1} V^{-1} u`. The beamformer is
    /// `W = H^H (H H^H)^{-1} diag(lambda) s s^H / K`.
    ///
    /// `u` must satisfy `1^T u = 1`. Negative entries are accepted so that
    /// truncated iterates of the active-set scheme, which are still valid
    /// beamformers, can be evaluated.
    pub fn beamformer_from_dual(&self, u: &RealVector) -> Result<(BeamformingMatrix, DualSolution)> {
        let n = self.dim();
        if u.len() != n {
            return Err(Error::BadDimensions(format!(
                "dual point has {} entries, kernel dimension is {n}",
                u.len()
            )));
        }
        let total = u.sum();
        if !((total - 1.0).abs() <= SIMPLEX_TOL) {
            return Err(Error::BadParameter(format!("1^T u = {total}, expected 1")));
        }
        let y = self.form.v_inv_apply(u);
        let objective = u.dot(&y);
        if !(objective > DEGENERATE_OBJECTIVE) {
            return Err(Error::DegenerateDual(objective));
        }
        let k = self.users();
        let direction: ComplexVector = match &self.non_strict {
            None => y.map(|v| Complex64::new(v, 0.0)),
            Some(parts) => {
                let stacked = &parts.s_inv * &y;
                ComplexVector::from_fn(k, |i, _| Complex64::new(stacked[i], stacked[k + i]))
            }
        };
        // ||R^{-H} (lambda o s)||^2 = lambda^H T lambda, the transmit power.
        let weighted = direction.component_mul(&self.symbols);
        let whitened = self.channel.whiten(&weighted);
        let scale = (self.p0 / whitened.norm_squared()).sqrt();
        let lambda = direction.map(|z| z * scale);
        let x = self.channel.pinv_apply(&weighted).map(|z| z * scale);

        let t_star = match &self.non_strict {
            None => lambda.iter().map(|z| z.re).fold(f64::INFINITY, f64::min),
            Some(parts) => lambda
                .iter()
                .map(|z| z.re - z.im.abs() / parts.tan_threshold)
                .fold(f64::INFINITY, f64::min),
        };
        let y_min = y.min();
        let q = y.map(|v| 2.0 * (v - y_min));
        let alpha0 = (objective / (4.0 * self.p0)).sqrt();

        let w = BeamformingMatrix::from_precoded(x, self.symbols.clone(), self.p0);
        Ok((
            w,
            DualSolution {
                u: u.clone(),
                q,
                alpha0,
                lambda,
                t_star,
                objective,
            },
        ))
    }
}

impl AsRef<SimplexForm> for CiKernel {
    fn as_ref(&self) -> &SimplexForm {
        &self.form
    }
}
