//! Iterative closed-form active-set scheme with retraction.
//!
//! The simplex QP `min u^T V^{-1} u` is solved through its KKT system in the
//! parameterisation `u = G q / 2 + a / c`, where `q >= 0` are the multipliers
//! of `u >= 0`. Starting from the ZF point `q = 0`, the scheme repeatedly
//! forces the most negative entry of `u` to zero by activating its
//! multiplier, solving `Z q~ = -(2/c) a~` on the active set (`Z = G[I, I]`).
//! When a multiplier turns negative the active set is cut back to just before
//! the offending index and the next-ranked candidate is tried, tracked by a
//! stack of per-position rank counters.
//!
//! Each accepted state satisfies stationarity, `1^T u = 1`, `q >= 0` and
//! complementary slackness, so the first accepted state with `u >= 0` is
//! optimal.

use crate::error::{Error, Result};
use crate::geometry::SimplexForm;
use crate::linalg::{PdFactor, RealMatrix, RealVector};
use crate::qp::{solve_projected_gradient_lenient, DEFAULT_PG_MAX_ITER, DEFAULT_PG_TOL};

/// Feasibility slack for both `min(u)` and multiplier sign tests.
pub const EPS_FEAS: f64 = 1e-9;

/// Slack on `a >= 0` when classifying a kernel.
pub const EPS_CLASSIFY: f64 = 1e-12;

/// Iteration guard applied when no budget is given, as a multiple of the
/// problem dimension.
pub const UNLIMITED_GUARD_PER_DIM: usize = 1000;

/// Production iteration budget, `10 n`.
pub fn default_n_max(n: usize) -> usize {
    10 * n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    /// `a >= 0`: the ZF point `a / c` is already optimal.
    EmptyS,
    /// Some `a_k < 0`.
    NonEmptyS,
}

pub fn classify(form: &SimplexForm) -> Classification {
    if form.a().iter().all(|&x| x >= -EPS_CLASSIFY) {
        Classification::EmptyS
    } else {
        Classification::NonEmptyS
    }
}

/// Why the solver handed over to the projected-gradient oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FallbackReason {
    /// The rank selector ran past the available candidates.
    SelectorExhausted,
    /// `Z` failed the positive-definiteness test.
    SingularActiveSet,
    /// The safety guard of an unlimited run was reached.
    IterationGuard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Active set after the step.
    pub active: Vec<usize>,
    pub accepted: bool,
    pub min_u: f64,
    /// `u^T V^{-1} u` of the state after the step.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterativeResult {
    pub u: RealVector,
    /// Full-length multipliers, nonzero only on `active`.
    pub q: RealVector,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub fallback: Option<FallbackReason>,
    pub objective: f64,
    pub trace: Option<Vec<IterationRecord>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IterativeSolver {
    /// `None` runs until convergence.
    pub n_max: Option<usize>,
    pub record_trace: bool,
}

/// Multipliers and dual point for one active set.
struct ActiveState {
    active: Vec<usize>,
    q: RealVector,
    u: RealVector,
    /// `u^T V^{-1} u`, which equals `(1 - a_I^T q~ / 2) / c` here.
    objective: f64,
}

fn evaluate(form: &SimplexForm, active: &[usize]) -> Result<(RealVector, ActiveState)> {
    let a = form.a();
    let c = form.c();
    let g = form.g();
    let m = active.len();
    let q_tilde = if m == 0 {
        RealVector::zeros(0)
    } else {
        let z = RealMatrix::from_fn(m, m, |i, j| g[(active[i], active[j])]);
        let rhs = RealVector::from_fn(m, |i, _| -2.0 / c * a[active[i]]);
        PdFactor::new(&z)?.solve_vec(&rhs)
    };
    let mut u = a / c;
    let mut q = RealVector::zeros(a.len());
    for (p, &k) in active.iter().enumerate() {
        u.axpy(0.5 * q_tilde[p], &g.column(k), 1.0);
        q[k] = q_tilde[p];
    }
    let a_dot_q: f64 = active.iter().enumerate().map(|(p, &k)| a[k] * q_tilde[p]).sum();
    let objective = (1.0 - 0.5 * a_dot_q) / c;
    Ok((
        q_tilde,
        ActiveState {
            active: active.to_vec(),
            q,
            u,
            objective,
        },
    ))
}

impl IterativeSolver {
    pub fn new(n_max: Option<usize>) -> Self {
        Self {
            n_max,
            record_trace: false,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    /// Runs the scheme. Never fails: on budget exhaustion the best accepted
    /// iterate is returned with `converged = false`; if the scheme itself
    /// breaks down the projected-gradient oracle supplies the point and
    /// `fallback` says why.
    pub fn solve(&self, form: &SimplexForm) -> IterativeResult {
        let n = form.dim();
        let zf = form.zf_point();
        let mut trace = self.record_trace.then(Vec::new);

        let mut state = ActiveState {
            active: Vec::new(),
            q: RealVector::zeros(n),
            objective: 1.0 / form.c(),
            u: zf,
        };
        if classify(form) == Classification::EmptyS {
            return self.finish(form, state, 0, true, None, trace);
        }

        let cap = self.n_max.unwrap_or(UNLIMITED_GUARD_PER_DIM * n);
        let mut in_set = vec![false; n];
        let mut counters: Vec<usize> = vec![1];
        let mut rank = 1usize;
        let mut iterations = 0usize;
        let mut best: Option<ActiveState> = None;
        let mut failure = None;

        while state.u.min() < -EPS_FEAS && iterations < cap {
            let mut candidates: Vec<usize> = (0..n).filter(|&k| !in_set[k]).collect();
            candidates.sort_by(|&i, &j| state.u[i].total_cmp(&state.u[j]).then(i.cmp(&j)));
            let Some(&next) = candidates.get(rank - 1) else {
                failure = Some(FallbackReason::SelectorExhausted);
                break;
            };
            counters.push(1);
            let mut active = state.active.clone();
            active.push(next);

            let Ok((q_tilde, candidate)) = evaluate(form, &active) else {
                failure = Some(FallbackReason::SingularActiveSet);
                break;
            };
            iterations += 1;

            let accepted = q_tilde.min() >= -EPS_FEAS;
            if accepted {
                in_set[next] = true;
                rank = 1;
                state = candidate;
            } else {
                // retract to just before the most negative multiplier
                let pos = q_tilde.imin();
                active.truncate(pos);
                for k in state.active.iter().skip(pos) {
                    in_set[*k] = false;
                }
                let Ok((_, retracted)) = evaluate(form, &active) else {
                    failure = Some(FallbackReason::SingularActiveSet);
                    break;
                };
                state = retracted;
                counters.truncate(pos + 1);
                counters[pos] += 1;
                rank = counters[pos];
            }
            if accepted && best.as_ref().is_none_or(|b| state.objective > b.objective) {
                best = Some(ActiveState {
                    active: state.active.clone(),
                    q: state.q.clone(),
                    u: state.u.clone(),
                    objective: state.objective,
                });
            }
            debug_assert_eq!(counters.len(), state.active.len() + 1);
            if let Some(t) = trace.as_mut() {
                t.push(IterationRecord {
                    iteration: iterations,
                    active: state.active.clone(),
                    accepted,
                    min_u: state.u.min(),
                    objective: state.objective,
                });
            }
        }

        if state.u.min() >= -EPS_FEAS {
            return self.finish(form, state, iterations, true, None, trace);
        }
        if failure.is_none() && self.n_max.is_none() {
            failure = Some(FallbackReason::IterationGuard);
        }
        if let Some(reason) = failure {
            log::debug!("active-set scheme fell back to projected gradient: {reason:?}");
            return match solve_projected_gradient_lenient(form, DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER) {
                Ok((sol, converged)) => {
                    let y = form.v_inv_apply(&sol.u);
                    let y_min = y.min();
                    let fallback_state = ActiveState {
                        active: (0..n).filter(|&k| sol.u[k] <= EPS_FEAS).collect(),
                        q: y.map(|v| 2.0 * (v - y_min)),
                        objective: sol.objective,
                        u: sol.u,
                    };
                    self.finish(form, fallback_state, iterations, converged, Some(reason), trace)
                }
                Err(_) => {
                    let state = best.unwrap_or(state);
                    self.finish(form, state, iterations, false, Some(reason), trace)
                }
            };
        }
        // budget exhausted: best accepted iterate so far (the ZF point if none)
        let state = match best {
            Some(b) if b.objective > 1.0 / form.c() => b,
            _ => ActiveState {
                active: Vec::new(),
                q: RealVector::zeros(n),
                objective: 1.0 / form.c(),
                u: form.zf_point(),
            },
        };
        self.finish(form, state, iterations, false, None, trace)
    }

    fn finish(
        &self,
        form: &SimplexForm,
        state: ActiveState,
        iterations: usize,
        converged: bool,
        fallback: Option<FallbackReason>,
        trace: Option<Vec<IterationRecord>>,
    ) -> IterativeResult {
        let objective = form.objective(&state.u);
        IterativeResult {
            u: state.u,
            q: state.q,
            active: state.active,
            iterations,
            converged,
            fallback,
            objective,
            trace,
        }
    }
}

/// Runs to convergence (or `n_max`), reporting a missed budget as an error.
pub fn solve_iterative(form: &impl AsRef<SimplexForm>, n_max: Option<usize>) -> Result<IterativeResult> {
    let form = form.as_ref();
    let result = IterativeSolver::new(n_max).solve(form);
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NotConverged {
            iterations: result.iterations,
            residual: -result.u.min(),
        })
    }
}

/// Budget-limited run; `n_max = Some(0)` returns the ZF point.
pub fn solve_with_budget(form: &impl AsRef<SimplexForm>, n_max: Option<usize>) -> IterativeResult {
    IterativeSolver::new(n_max).solve(form.as_ref())
}
