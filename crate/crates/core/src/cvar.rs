//! Conditional value-at-risk kernels.
//!
//! Two routes to the same tail statistic: the exact sorted-tail mean used by
//! the reporting side, and a softplus-smoothed Rockafellar–Uryasev form that
//! stays twice differentiable for the Newton solver.

use crate::real::Real;

/// Exact CVaR_beta: mean of the worst `ceil((1 - beta) * n)` samples.
///
/// Panics on an empty slice; callers validate emptiness at their boundary.
pub fn cvar_sorted_tail<R: Real>(samples: &[R], beta: R) -> R {
    assert!(!samples.is_empty(), "cvar of empty sample");
    let n = samples.len();
    let tail = tail_count(n, beta);
    let mut sorted: Vec<R> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let sum: R = sorted[n - tail..].iter().copied().sum();
    sum / R::from_usize(tail)
}

/// Number of samples in the `(1 - beta)` tail, at least one. Fractions
/// within 1e-9 of an integer snap to it so that e.g. `(1 - 0.95) * 100`
/// counts as exactly 5 despite float rounding.
pub fn tail_count<R: Real>(n: usize, beta: R) -> usize {
    let frac = ((R::one() - beta) * R::from_usize(n)).as_f64();
    let nearest = frac.round();
    let k = if (frac - nearest).abs() < 1e-9 * (1.0 + frac.abs()) {
        nearest as usize
    } else {
        frac.ceil() as usize
    };
    k.clamp(1, n)
}

/// Empirical quantile at level `q`: smallest sample covering a `q` fraction.
/// Exposed for diagnostics next to the CVaR tail.
pub fn quantile<R: Real>(samples: &[R], q: R) -> R {
    assert!(!samples.is_empty(), "quantile of empty sample");
    let n = samples.len();
    let mut sorted: Vec<R> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let idx = (q * R::from_usize(n)).ceil().as_f64() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// `w * ln(1 + exp(x / w))`, overflow-safe.
pub fn softplus<R: Real>(x: R, w: R) -> R {
    let t = x / w;
    let hinge = if t > R::zero() { x } else { R::zero() };
    hinge + w * (-t.abs()).exp().ln_1p()
}

/// Logistic sigmoid of `x / w`, overflow-safe.
pub fn sigmoid<R: Real>(x: R, w: R) -> R {
    let t = x / w;
    if t >= R::zero() {
        R::one() / (R::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (R::one() + e)
    }
}

/// Smoothed CVaR evaluated at its optimal threshold.
#[derive(Debug, Clone)]
pub struct SmoothedCvar<R: Real> {
    /// min over nu of the smoothed Rockafellar–Uryasev objective.
    pub value: R,
    /// The minimizing threshold nu*.
    pub nu: R,
    /// Per-sample sigmoid weights at nu*; the envelope gradient is
    /// `weights / ((1 - beta) * n)`.
    pub weights: Vec<R>,
}

/// Smoothed CVaR_beta with hinge width `w`:
/// `min_nu  nu + (1 / ((1-beta) n)) * sum softplus_w(x_i - nu)`.
///
/// The inner minimization is a monotone 1-D root find
/// (`sum sigmoid((x_i - nu)/w) = (1-beta) n`), solved by bisection to
/// machine precision so the envelope derivatives are consistent.
pub fn smoothed_cvar<R: Real>(samples: &[R], beta: R, w: R) -> SmoothedCvar<R> {
    assert!(!samples.is_empty(), "cvar of empty sample");
    assert!(w > R::zero(), "smoothing width must be positive");
    let n = samples.len();
    let m = (R::one() - beta) * R::from_usize(n);
    let sig_sum = |nu: R| -> R { samples.iter().map(|&x| sigmoid(x - nu, w)).sum() };

    let mut lo = samples.iter().copied().fold(R::infinity(), R::min);
    let mut hi = samples.iter().copied().fold(R::neg_infinity(), R::max);
    let pad = w * R::c(50.0) + R::c(1.0);
    lo = lo - pad;
    hi = hi + pad;
    for _ in 0..200 {
        let mid = (lo + hi) * R::c(0.5);
        if sig_sum(mid) > m {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= R::c(1e-16) * (R::one() + lo.abs()) {
            break;
        }
    }
    let nu = (lo + hi) * R::c(0.5);

    let inv_m = R::one() / m;
    let mut value = nu;
    let mut weights = Vec::with_capacity(n);
    for &x in samples {
        value = value + inv_m * softplus(x - nu, w);
        weights.push(sigmoid(x - nu, w));
    }
    SmoothedCvar { value, nu, weights }
}
