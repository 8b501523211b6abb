//! Damped Newton solver for the barrier-composite inner problem.
//!
//! Minimizes `F(z; α) + μ Φ(z)` with the log-barrier
//! `Φ(z) = −Σ ln z_i − Σ ln(u_max − u_r(z))` at a fixed barrier weight μ,
//! using exact Hessians, Armijo backtracking and the Newton decrement as
//! the stopping rule. The composite is strongly convex (the `{4}` floor
//! plus the barrier), so the minimizer is unique and multi-start solves
//! agree to solver precision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, SymMatrix};
use crate::real::Real;

use super::{objective, RelaxedInstance, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<R: Real> {
    /// Fixed weight μ of the log-barrier.
    pub barrier_weight: R,
    /// Newton-decrement termination threshold.
    pub tol: R,
    /// Iteration cap; exceeding it is a hard error.
    pub max_iterations: usize,
}

impl<R: Real> Default for SolverOptions<R> {
    fn default() -> Self {
        SolverOptions {
            barrier_weight: R::c(1e-2),
            tol: R::c(1e-8),
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerSolution<R: Real> {
    pub z: Vec<R>,
    /// `F(z*; α)` without the barrier term.
    pub objective: R,
    pub iterations: usize,
}

struct CompositeEval<R: Real> {
    value: R,
    gradient: Vec<R>,
    hessian: SymMatrix<R>,
    objective_value: R,
}

/// Value-only evaluation for line search; `None` when infeasible.
fn composite_value<R: Real>(
    z: &[R],
    alpha: &WeightVector<R>,
    inst: &RelaxedInstance<R>,
    mu: R,
) -> Option<R> {
    if z.iter().any(|&x| x <= R::zero() || !x.is_finite()) {
        return None;
    }
    let u = inst.load_map.apply(z);
    let cap = inst.guard_cap();
    let mut barrier = R::zero();
    for &x in z {
        barrier = barrier - x.ln();
    }
    for &ur in &u {
        let slack = inst.u_max - ur;
        if ur >= cap || slack <= R::zero() {
            return None;
        }
        barrier = barrier - slack.ln();
    }
    let obj = objective(z, alpha, inst).ok()?;
    Some(obj.value + mu * barrier)
}

fn composite_full<R: Real>(
    z: &[R],
    alpha: &WeightVector<R>,
    inst: &RelaxedInstance<R>,
    mu: R,
) -> Result<CompositeEval<R>> {
    let obj = objective(z, alpha, inst)?;
    let mut value = obj.value;
    let mut gradient = obj.gradient;
    let mut hessian = obj.hessian;

    for (i, &x) in z.iter().enumerate() {
        if x <= R::zero() {
            return Err(Error::Domain(format!("wait {i} left the positive orthant")));
        }
        value = value - mu * x.ln();
        gradient[i] = gradient[i] - mu / x;
        hessian.add(i, i, mu / (x * x));
    }

    let u = inst.load_map.apply(z);
    let mut inv_slack = vec![R::zero(); u.len()];
    let mut inv_slack_sq = vec![R::zero(); u.len()];
    for (r, &ur) in u.iter().enumerate() {
        let slack = inst.u_max - ur;
        if slack <= R::zero() {
            return Err(Error::Domain(format!("utilization row {r} at the cap")));
        }
        value = value - mu * slack.ln();
        inv_slack[r] = mu / slack;
        inv_slack_sq[r] = mu / (slack * slack);
    }
    let bar_grad = inst.load_map.apply_transpose(&inv_slack, inst.n);
    for (g, b) in gradient.iter_mut().zip(bar_grad) {
        *g = *g + b;
    }
    inst.load_map.add_quadratic(&mut hessian, &inv_slack_sq);

    Ok(CompositeEval {
        value,
        gradient,
        hessian,
        objective_value: obj.value,
    })
}

/// Solves the inner problem for the given weights. Starts from the
/// instance's interior point unless `start` is supplied (multi-start
/// agreement checks pass different strictly feasible starts).
pub fn solve_inner<R: Real>(
    alpha: &WeightVector<R>,
    inst: &RelaxedInstance<R>,
    options: &SolverOptions<R>,
    start: Option<&[R]>,
) -> Result<InnerSolution<R>> {
    alpha.validate()?;
    inst.validate()?;
    let mu = options.barrier_weight;
    let mut z: Vec<R> = match start {
        Some(s) => {
            if s.len() != inst.n {
                return Err(Error::Argument("start point has the wrong dimension".into()));
            }
            if composite_value(s, alpha, inst, mu).is_none() {
                return Err(Error::Infeasible("start point is not strictly feasible".into()));
            }
            s.to_vec()
        }
        None => inst.interior_start()?,
    };

    let mut eval = composite_full(&z, alpha, inst, mu)?;
    for iteration in 0..options.max_iterations {
        // Newton direction with escalating ridge on factorization failure
        let neg_grad: Vec<R> = eval.gradient.iter().map(|&g| -g).collect();
        let mut ridge = R::zero();
        let step = loop {
            let mut h = eval.hessian.clone();
            if ridge > R::zero() {
                h.add_diag(ridge);
            }
            match h.cholesky_solve(&neg_grad) {
                Some(s) => break s,
                None => {
                    ridge = if ridge == R::zero() { R::c(1e-12) } else { ridge * R::c(100.0) };
                    if ridge > R::c(1e6) {
                        return Err(Error::NonConvergence { iterations: iteration });
                    }
                }
            }
        };

        let decrement_sq = -dot(&eval.gradient, &step);
        let lambda = decrement_sq.max(R::zero()).sqrt();

        // Armijo backtracking on the composite, rejecting infeasible trials
        let g_dot_step = dot(&eval.gradient, &step);
        let mut t = R::one();
        let trial = loop {
            let cand: Vec<R> = z.iter().zip(&step).map(|(&zi, &si)| zi + t * si).collect();
            if let Some(v) = composite_value(&cand, alpha, inst, mu) {
                if v <= eval.value + R::c(0.25) * t * g_dot_step {
                    break Some(cand);
                }
            }
            t = t * R::c(0.5);
            if t < R::c(1e-14) {
                break None;
            }
        };
        let Some(next) = trial else {
            // stalled line search at solver precision
            return Ok(InnerSolution {
                z,
                objective: eval.objective_value,
                iterations: iteration,
            });
        };
        z = next;
        eval = composite_full(&z, alpha, inst, mu)?;

        if lambda < options.tol {
            return Ok(InnerSolution {
                z,
                objective: eval.objective_value,
                iterations: iteration + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
    })
}
