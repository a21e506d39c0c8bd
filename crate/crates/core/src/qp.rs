//! Reference solvers for `min u^T V^{-1} u` over the probability simplex.
//!
//! [`solve_active_set_enum`] is exact: it visits every support and keeps the
//! candidate that satisfies the KKT conditions. [`solve_projected_gradient`]
//! scales to any dimension and serves as the generic QP baseline.

use crate::error::{Error, Result};
use crate::geometry::SimplexForm;
use crate::linalg::{symmetrize, RealMatrix, RealVector};

/// Largest dimension accepted by the enumeration oracle (2^20 - 1 supports).
pub const MAX_ENUMERATION_DIM: usize = 20;

pub const DEFAULT_PG_TOL: f64 = 1e-10;
pub const DEFAULT_PG_MAX_ITER: usize = 100_000;

/// `min u^T V^{-1} u` s.t. `1^T u = 1`, `u >= 0`.
#[derive(Clone, Copy, Debug)]
pub struct SimplexQp<'a> {
    form: &'a SimplexForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSolution {
    pub u: RealVector,
    pub objective: f64,
    /// Supports visited (enumeration) or gradient steps taken.
    pub iterations: usize,
    /// Final relative projected-gradient norm; zero for enumeration.
    pub residual: f64,
}

impl<'a> SimplexQp<'a> {
    pub fn new(form: &'a SimplexForm) -> Self {
        Self { form }
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    pub fn objective(&self, u: &RealVector) -> f64 {
        self.form.objective(u)
    }

    pub fn solve_enumeration(&self) -> Result<SimplexSolution> {
        solve_active_set_enum(self.form)
    }

    pub fn solve_projected_gradient(&self, tol: f64, max_iter: usize) -> Result<SimplexSolution> {
        solve_projected_gradient(self.form, tol, max_iter)
    }
}

struct Enumerator {
    n: usize,
    a: Vec<f64>,
    // lower Cholesky factor of A[F, F], row-major with stride n
    l: Vec<f64>,
    members: Vec<usize>,
    z: Vec<f64>,
    visited: usize,
    kkt_best: Option<(f64, Vec<(usize, f64)>)>,
    primal_best: Option<(f64, Vec<(usize, f64)>)>,
}

impl Enumerator {
    fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// Appends `j` to the support, extending the Cholesky factor by one row.
    fn push(&mut self, j: usize) -> bool {
        let m = self.members.len();
        let n = self.n;
        let mut diag = self.a(j, j);
        for p in 0..m {
            let mut v = self.a(j, self.members[p]);
            for q in 0..p {
                v -= self.l[m * n + q] * self.l[p * n + q];
            }
            v /= self.l[p * n + p];
            self.l[m * n + p] = v;
            diag -= v * v;
        }
        if !(diag > 0.0) {
            return false;
        }
        self.l[m * n + m] = diag.sqrt();
        self.members.push(j);
        true
    }

    /// Solves the equality-constrained problem on the current support and
    /// records it if feasible.
    fn evaluate(&mut self) {
        let m = self.members.len();
        let n = self.n;
        // L L^T z = 1
        for i in 0..m {
            let mut v = 1.0;
            for p in 0..i {
                v -= self.l[i * n + p] * self.z[p];
            }
            self.z[i] = v / self.l[i * n + i];
        }
        for i in (0..m).rev() {
            let mut v = self.z[i];
            for p in (i + 1)..m {
                v -= self.l[p * n + i] * self.z[p];
            }
            self.z[i] = v / self.l[i * n + i];
        }
        let total: f64 = self.z[..m].iter().sum();
        if !(total > 0.0) {
            return;
        }
        // On the support A u = nu 1 with nu = 1 / (1^T A_FF^{-1} 1); the
        // objective u^T A u equals nu.
        let nu = 1.0 / total;
        if self.z[..m].iter().any(|&zi| zi * nu < -1e-12) {
            return;
        }
        let support: Vec<(usize, f64)> = self
            .members
            .iter()
            .zip(&self.z[..m])
            .map(|(&i, &zi)| (i, zi * nu))
            .collect();
        if self.primal_best.as_ref().is_none_or(|(best, _)| nu < *best) {
            self.primal_best = Some((nu, support.clone()));
        }
        // off-support multipliers q_k = 2 ((A u)_k - nu) must be >= 0
        let dual_ok = (0..n).filter(|k| !self.members.contains(k)).all(|k| {
            let au: f64 = support.iter().map(|&(i, ui)| self.a(k, i) * ui).sum();
            au - nu >= -1e-9 * nu
        });
        if dual_ok && self.kkt_best.as_ref().is_none_or(|(best, _)| nu < *best) {
            self.kkt_best = Some((nu, support));
        }
    }

    fn walk(&mut self, start: usize) {
        for j in start..self.n {
            if !self.push(j) {
                continue;
            }
            self.visited += 1;
            self.evaluate();
            self.walk(j + 1);
            self.members.pop();
        }
    }
}

/// Exhaustive support enumeration.
///
/// For every nonempty support `F` the problem restricted to `F` is solved in
/// closed form, `u_F = A_FF^{-1} 1 / (1^T A_FF^{-1} 1)` with `A = V^{-1}`. The
/// candidate that is primal feasible and has nonnegative off-support
/// multipliers is the global optimum by convexity; ties are resolved by the
/// lower objective, then by visiting order.
pub fn solve_active_set_enum(form: &SimplexForm) -> Result<SimplexSolution> {
    let n = form.dim();
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_DIM,
        });
    }
    // Explicit A = V^{-1}: the oracle deliberately avoids the G-matrix route
    // used by the iterative solver.
    let mut a = RealMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = RealVector::zeros(n);
        e[j] = 1.0;
        a.set_column(j, &form.v_inv_apply(&e));
    }
    symmetrize(&mut a);
    let mut en = Enumerator {
        n,
        a: a.transpose().as_slice().to_vec(),
        l: vec![0.0; n * n],
        members: Vec::with_capacity(n),
        z: vec![0.0; n],
        visited: 0,
        kkt_best: None,
        primal_best: None,
    };
    en.walk(0);
    let visited = en.visited;
    let (objective, support) = en.kkt_best.or(en.primal_best).ok_or(Error::NotConverged {
        iterations: visited,
        residual: f64::INFINITY,
    })?;
    let mut u = RealVector::zeros(n);
    for (i, ui) in support {
        u[i] = ui.max(0.0);
    }
    u /= u.sum();
    Ok(SimplexSolution {
        u,
        objective,
        iterations: visited,
        residual: 0.0,
    })
}

/// Euclidean projection onto `{u >= 0, 1^T u = 1}` by sort-and-threshold.
pub fn project_to_simplex(v: &RealVector) -> RealVector {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        cumulative += v[i];
        let candidate = (cumulative - 1.0) / (rank + 1) as f64;
        if v[i] - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Accelerated projected gradient with adaptive restart.
///
/// The gradient `2 V^{-1} u` is applied through the factor of `V`; the step is
/// `1 / L` with `L = 2 / lambda_min(V)`. Iteration stops once the projected
/// gradient norm, relative to the gradient norm, drops to `tol`.
pub fn solve_projected_gradient(form: &SimplexForm, tol: f64, max_iter: usize) -> Result<SimplexSolution> {
    let (sol, converged) = run_projected_gradient(form, tol, max_iter)?;
    if converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged {
            iterations: sol.iterations,
            residual: sol.residual,
        })
    }
}

/// Like [`solve_projected_gradient`] but hands back the last iterate when the
/// iteration budget runs out; the flag reports convergence.
pub fn solve_projected_gradient_lenient(
    form: &SimplexForm,
    tol: f64,
    max_iter: usize,
) -> Result<(SimplexSolution, bool)> {
    run_projected_gradient(form, tol, max_iter)
}

fn run_projected_gradient(form: &SimplexForm, tol: f64, max_iter: usize) -> Result<(SimplexSolution, bool)> {
    if !(tol > 0.0) {
        return Err(Error::BadParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let lambda_min = form.v().clone().symmetric_eigenvalues().min();
    if !(lambda_min > 0.0) {
        return Err(Error::NotPositiveDefinite {
            pivot: lambda_min,
            threshold: 0.0,
        });
    }
    let lipschitz = 2.0 / lambda_min;
    let step = 1.0 / lipschitz;

    let mut x = project_to_simplex(&form.zf_point());
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let grad = form.v_inv_apply(&y) * 2.0;
        let x_next = project_to_simplex(&(&y - &grad * step));
        residual = (&y - &x_next).norm() * lipschitz / grad.norm().max(f64::MIN_POSITIVE);
        if residual <= tol {
            x = x_next;
            converged = true;
            break;
        }
        // restart when the momentum direction opposes the gradient step
        if (&y - &x_next).dot(&(&x_next - &x)) > 0.0 {
            momentum = 1.0;
            y = x_next.clone();
            x = x_next;
            continue;
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &x_next + (&x_next - &x) * ((momentum - 1.0) / next_momentum);
        momentum = next_momentum;
        x = x_next;
    }
    let objective = form.objective(&x);
    Ok((
        SimplexSolution {
            u: x,
            objective,
            iterations,
            residual,
        },
        converged,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CiKernel, Rotation};
    use crate::rng::SimRng;
    use crate::signal::{sample_channel, Constellation, SymbolVector};
    use approx::assert_relative_eq;

    fn kernel(seed: u64, k: usize, nt: usize, strict: bool) -> CiKernel {
        let mut rng = SimRng::new(seed);
        let c = Constellation::new(4).unwrap();
        let h = sample_channel(k, nt, &mut rng).unwrap();
        let s = SymbolVector::sample(k, &c, &mut rng);
        let rotation = if strict {
            Rotation::Strict
        } else {
            Rotation::NonStrict {
                threshold_angle: c.threshold_angle(),
            }
        };
        CiKernel::build(&h, &s, 1.0, rotation).unwrap()
    }

    /// Exists nu with (2 A u)_k = nu on the support and >= nu elsewhere.
    fn assert_kkt(form: &SimplexForm, u: &RealVector, tol: f64) {
        assert!((u.sum() - 1.0).abs() <= 1e-10);
        assert!(u.min() >= -1e-12);
        let grad = form.v_inv_apply(u) * 2.0;
        let support: Vec<usize> = (0..u.len()).filter(|&k| u[k] > 1e-9).collect();
        let nu = support.iter().map(|&k| grad[k]).sum::<f64>() / support.len() as f64;
        for k in 0..u.len() {
            if u[k] > 1e-9 {
                assert!(
                    (grad[k] - nu).abs() <= tol * nu.abs(),
                    "k={k} grad={} nu={nu}",
                    grad[k]
                );
            } else {
                assert!(grad[k] >= nu - tol * nu.abs());
            }
        }
    }

    #[test]
    fn identity_gives_uniform_point() {
        let form = SimplexForm::from_v(RealMatrix::identity(5, 5)).unwrap();
        let sol = solve_active_set_enum(&form).unwrap();
        for k in 0..5 {
            assert_relative_eq!(sol.u[k], 0.2, epsilon = 1e-14);
        }
        assert_relative_eq!(sol.objective, 0.2, epsilon = 1e-14);
        let pg = solve_projected_gradient(&form, DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER).unwrap();
        assert!((pg.u - sol.u).amax() < 1e-10);
    }

    #[test]
    fn two_dimensional_closed_form() {
        // A = diag(1, 4) means V = diag(1, 1/4)
        let form =
            SimplexForm::from_v(RealMatrix::from_diagonal(&RealVector::from_vec(vec![1.0, 0.25]))).unwrap();
        let sol = solve_active_set_enum(&form).unwrap();
        assert_relative_eq!(sol.u[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(sol.u[1], 0.2, epsilon = 1e-14);
        assert_relative_eq!(sol.objective, 0.8, epsilon = 1e-14);
    }

    #[test]
    fn nonnegative_row_sums_give_zf_point() {
        let mut hits = 0;
        for seed in 0..200 {
            let kern = kernel(seed, 3, 6, true);
            if kern.a().min() < 0.0 {
                continue;
            }
            hits += 1;
            let sol = solve_active_set_enum(kern.form()).unwrap();
            assert!((sol.u - kern.form().zf_point()).amax() < 1e-12);
        }
        assert!(hits > 20);
    }

    #[test]
    fn enumeration_rejects_large_problems() {
        let form = SimplexForm::from_v(RealMatrix::identity(21, 21)).unwrap();
        assert_eq!(
            solve_active_set_enum(&form).unwrap_err(),
            Error::TooLarge { n: 21, max: 20 }
        );
    }

    #[test]
    fn enumeration_satisfies_kkt_and_dual_value() {
        for seed in 0..100 {
            let kern = kernel(seed, 4, 4, seed % 2 == 0);
            let sol = solve_active_set_enum(kern.form()).unwrap();
            assert_kkt(kern.form(), &sol.u, 1e-8);
            assert_relative_eq!(sol.objective, kern.form().objective(&sol.u), max_relative = 1e-10);
            // t* = sqrt(p0 u^T V^-1 u) is the strong-duality value
            let (_, dual) = kern.beamformer_from_dual(&sol.u).unwrap();
            assert_relative_eq!(dual.t_star, sol.objective.sqrt(), max_relative = 1e-8);
            assert_relative_eq!(2.0 * dual.alpha0, sol.objective.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn projected_gradient_matches_enumeration_strict() {
        for seed in 0..100 {
            let kern = kernel(1000 + seed, 4, 5, true);
            let exact = solve_active_set_enum(kern.form()).unwrap();
            let pg = solve_projected_gradient(kern.form(), DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER).unwrap();
            assert_relative_eq!(pg.objective, exact.objective, max_relative = 1e-8);
            assert!((pg.u.sum() - 1.0).abs() <= 1e-10);
            assert!(pg.u.min() >= -1e-12);
        }
    }

    #[test]
    fn projected_gradient_matches_enumeration_non_strict() {
        for seed in 0..20 {
            let kern = kernel(2000 + seed, 8, 10, false);
            assert_eq!(kern.dim(), 16);
            let exact = solve_active_set_enum(kern.form()).unwrap();
            let pg = solve_projected_gradient(kern.form(), DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER).unwrap();
            assert_relative_eq!(pg.objective, exact.objective, max_relative = 1e-8);
        }
    }

    #[test]
    fn projected_gradient_reports_budget_exhaustion() {
        let kern = kernel(7, 6, 6, false);
        match solve_projected_gradient(kern.form(), 1e-15, 3) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
        let (sol, converged) = solve_projected_gradient_lenient(kern.form(), 1e-15, 3).unwrap();
        assert!(!converged);
        assert!((sol.u.sum() - 1.0).abs() < 1e-12);
        assert!(solve_projected_gradient(kern.form(), 0.0, 10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_lands_on_simplex_and_is_nearest(
                v in proptest::collection::vec(-3.0f64..3.0, 1..12),
                w in proptest::collection::vec(0.0f64..1.0, 12),
            ) {
                let v = RealVector::from_vec(v);
                let p = project_to_simplex(&v);
                prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(p.min() >= 0.0);
                let again = project_to_simplex(&p);
                prop_assert!((&again - &p).amax() <= 1e-12);
                // any other simplex point is no closer
                let mut z = RealVector::from_iterator(v.len(), w.iter().take(v.len()).map(|x| x + 1e-3));
                z /= z.sum();
                prop_assert!((&v - &p).norm() <= (&v - &z).norm() + 1e-12);
            }
        }
    }
}
