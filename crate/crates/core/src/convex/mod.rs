//! Strongly convex relaxed scheduling objective.
//!
//! Over a continuous wait vector `z`, four convex cost atoms are aggregated
//! by temperature-τ log-sum-exp over every nonempty subset of
//! `{g1, g2, g3, g4}`, and the objective is the convex combination
//! `F(z; α) = Σ_S α_S · LSE_τ({g_i : i ∈ S})` with 15 weights on the
//! simplex and a floor `α_{4} ≥ η` on the strongly convex utilization
//! atom, so F admits a unique minimizer.
//!
//! Atoms:
//! * `g1` — mean wait;
//! * `g2` — ε-smoothed centered dispersion `sqrt(‖Pz‖² + ε²)/√n`;
//! * `g3` — softplus-smoothed CVaR_0.95 of the waits;
//! * `g4` — `Σ w_r φ(u_r(z))` with `φ(u) = u²/(1−u)` over the affine
//!   utilization map `u = A z + b`.

mod solve;

pub use solve::{solve_inner, InnerSolution, SolverOptions};

use serde::{Deserialize, Serialize};

use crate::cvar;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::real::Real;
use crate::scenario::Scenario;

/// Number of interaction weights: nonempty subsets of the four atoms.
pub const WEIGHT_DIM: usize = 15;

/// Index of the `{4}` singleton weight (subset masks are `index + 1`).
pub const IDX_G4: usize = 7;

/// Atom subset encoded by `mask = index + 1`; bit `i` set means atom `i+1`
/// belongs to the subset.
pub fn subset_atoms(index: usize) -> impl Iterator<Item = usize> {
    let mask = index + 1;
    (0..4).filter(move |i| mask & (1 << i) != 0)
}

pub fn subset_label(index: usize) -> String {
    let atoms: Vec<String> = subset_atoms(index).map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", atoms.join(","))
}

/// `τ · ln Σ exp(g_i / τ)`, max-shifted so the result never drops below the
/// maximum and never exceeds it by more than `τ ln |S|`.
pub fn lse_aggregate<R: Real>(values: &[R], tau: R) -> R {
    assert!(!values.is_empty(), "LSE of an empty subset");
    assert!(tau > R::zero(), "LSE temperature must be positive");
    let max = values.iter().copied().fold(R::neg_infinity(), R::max);
    let sum: R = values.iter().map(|&g| ((g - max) / tau).exp()).sum();
    max + tau * sum.ln()
}

/// Softmax weights of a subset's atom values at temperature τ.
fn lse_softmax<R: Real>(values: &[R], tau: R) -> Vec<R> {
    let max = values.iter().copied().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = values.iter().map(|&g| ((g - max) / tau).exp()).collect();
    let sum: R = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Point on the 15-dimensional simplex with the η floor on `α_{4}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<R: Real> {
    pub alpha: Vec<R>,
    pub eta: R,
}

impl<R: Real> WeightVector<R> {
    pub fn new(alpha: Vec<R>, eta: R) -> Result<Self> {
        let w = WeightVector { alpha, eta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != WEIGHT_DIM {
            return Err(Error::validation("alpha", format!("must have {WEIGHT_DIM} components")));
        }
        if self.eta <= R::zero() {
            return Err(Error::validation("eta", "must be positive"));
        }
        if self.alpha.iter().any(|a| *a < R::zero() || !a.is_finite()) {
            return Err(Error::validation("alpha", "components must be finite and nonnegative"));
        }
        let sum: R = self.alpha.iter().copied().sum();
        if (sum - R::one()).abs() > R::c(1e-12) {
            return Err(Error::validation("alpha", format!("must sum to 1, got {sum}")));
        }
        if self.alpha[IDX_G4] < self.eta - R::c(1e-12) {
            return Err(Error::validation(
                "alpha",
                format!("weight of {{4}} is {} below the floor {}", self.alpha[IDX_G4], self.eta),
            ));
        }
        Ok(())
    }

    /// All mass on one subset, then floored: `η e_{4} + (1−η) e_subset`.
    pub fn concentrated(subset_index: usize, eta: R) -> Self {
        let mut alpha = vec![R::zero(); WEIGHT_DIM];
        alpha[subset_index] = R::one() - eta;
        alpha[IDX_G4] = alpha[IDX_G4] + eta;
        WeightVector { alpha, eta }
    }
}

/// Sparse nonnegative affine map from waits to per-(pad, bin) utilization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadMap<R: Real> {
    /// One sparse row per (pad class, time bin): `(column, coefficient)`.
    pub rows: Vec<Vec<(usize, R)>>,
    /// Base utilization per row at zero waits.
    pub base: Vec<R>,
}

impl<R: Real> LoadMap<R> {
    pub fn apply(&self, z: &[R]) -> Vec<R> {
        self.rows
            .iter()
            .zip(&self.base)
            .map(|(row, &b)| row.iter().fold(b, |acc, &(j, c)| acc + c * z[j]))
            .collect()
    }

    /// `Aᵀ v` for a per-row vector `v`.
    fn apply_transpose(&self, v: &[R], n: usize) -> Vec<R> {
        let mut out = vec![R::zero(); n];
        for (row, &vr) in self.rows.iter().zip(v) {
            for &(j, c) in row {
                out[j] = out[j] + c * vr;
            }
        }
        out
    }

    /// Adds `Aᵀ diag(d) A` into the matrix.
    fn add_quadratic(&self, mat: &mut SymMatrix<R>, d: &[R]) {
        for (row, &dr) in self.rows.iter().zip(d) {
            if dr == R::zero() {
                continue;
            }
            for (a, &(j, cj)) in row.iter().enumerate() {
                for &(k, ck) in &row[a..] {
                    mat.add(j, k, dr * cj * ck);
                }
            }
        }
    }
}

/// The relaxed inner problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedInstance<R: Real> {
    pub n: usize,
    /// Release times, kept for interpretation and reporting.
    pub release: Vec<R>,
    pub load_map: LoadMap<R>,
    /// Utilization cap in (0, 1].
    pub u_max: R,
    /// `w_k(t)` per load-map row.
    pub pad_bin_weights: Vec<R>,
    /// LSE temperature.
    pub tau: R,
    /// ε for the dispersion atom.
    pub smooth_eps: R,
    /// Softplus width for the smoothed CVaR atom.
    pub cvar_width: R,
}

impl<R: Real> RelaxedInstance<R> {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("n", "instance needs at least one request"));
        }
        if self.release.len() != self.n {
            return Err(Error::validation("release", "length must equal n"));
        }
        if self.load_map.rows.len() != self.load_map.base.len()
            || self.load_map.rows.len() != self.pad_bin_weights.len()
        {
            return Err(Error::validation("load_map", "rows, base and weights must align"));
        }
        if !(self.u_max > R::zero() && self.u_max <= R::one()) {
            return Err(Error::validation("u_max", "must lie in (0, 1]"));
        }
        for row in &self.load_map.rows {
            for &(j, c) in row {
                if j >= self.n || c < R::zero() || !c.is_finite() {
                    return Err(Error::validation("load_map", "coefficients must be nonnegative and in range"));
                }
            }
        }
        for &b in &self.load_map.base {
            if b < R::zero() || b >= self.u_max {
                return Err(Error::validation("load_map.base", "base loads must lie in [0, u_max)"));
            }
        }
        if self.pad_bin_weights.iter().any(|w| *w < R::zero() || !w.is_finite()) {
            return Err(Error::validation("pad_bin_weights", "must be finite and nonnegative"));
        }
        if self.tau <= R::zero() {
            return Err(Error::validation("tau", "must be positive"));
        }
        if self.smooth_eps <= R::zero() || self.cvar_width <= R::zero() {
            return Err(Error::validation("smoothing", "smooth_eps and cvar_width must be positive"));
        }
        Ok(())
    }

    /// Effective barrier cap: φ's domain guard sits just inside `u_max`.
    pub fn guard_cap(&self) -> R {
        self.u_max * (R::one() - R::c(1e-9))
    }

    /// A strictly feasible interior start: a small positive constant wait
    /// keeping every utilization well below the cap.
    pub fn interior_start(&self) -> Result<Vec<R>> {
        let cap = self.guard_cap();
        let mut delta = R::one();
        for (row, &b) in self.load_map.rows.iter().zip(&self.load_map.base) {
            let slack = cap - b;
            if slack <= R::zero() {
                return Err(Error::Infeasible(format!(
                    "base load {b} at or above the utilization cap {cap}"
                )));
            }
            let rowsum: R = row.iter().map(|&(_, c)| c).sum();
            if rowsum > R::zero() {
                let d = slack * R::c(0.25) / rowsum;
                if d < delta {
                    delta = d;
                }
            }
        }
        if delta <= R::zero() {
            return Err(Error::Infeasible("no strictly feasible start".into()));
        }
        Ok(vec![delta; self.n])
    }
}

/// Builds a relaxed instance from a scenario. Utilization rows aggregate a
/// class's pad pool per time bin: the base load is the zero-wait service
/// load of the requests released in that bin, and each second of wait for
/// such a request adds `1 / (pad_count * bin_width)` occupancy to its row.
/// Errors with `Infeasible` when a bin is overloaded before any waiting.
pub fn instance_from_scenario<R: Real>(scenario: &Scenario, options: &InstanceOptions<R>) -> Result<RelaxedInstance<R>> {
    let n = scenario.requests.len();
    if n == 0 {
        return Err(Error::Argument("scenario has no requests".into()));
    }
    let bin_width = scenario.pad_weights.bin_width;
    let bins = scenario.pad_weights.bins();
    let mut rows: Vec<Vec<(usize, R)>> = Vec::new();
    let mut base: Vec<R> = Vec::new();
    let mut weights: Vec<R> = Vec::new();
    for (ci, class) in scenario.classes.iter().enumerate() {
        let denom = R::from_usize(class.pad_count as usize) * R::from_usize(bin_width as usize);
        for bin in 0..bins {
            let mut row: Vec<(usize, R)> = Vec::new();
            let mut b = R::zero();
            for (i, req) in scenario.requests.iter().enumerate() {
                if req.class_id != class.class_id {
                    continue;
                }
                if (req.release_time / bin_width) as usize != bin {
                    continue;
                }
                row.push((i, R::one() / denom));
                b = b + R::from_usize(req.service_demand as usize) / denom;
            }
            if row.is_empty() {
                continue;
            }
            if b >= options.u_max {
                return Err(Error::Infeasible(format!(
                    "class {} bin {} carries base load {} >= u_max {}",
                    class.class_id, bin, b, options.u_max
                )));
            }
            rows.push(row);
            base.push(b);
            weights.push(R::c(scenario.pad_weights.weights[ci][bin]));
        }
    }
    let inst = RelaxedInstance {
        n,
        release: scenario.requests.iter().map(|r| R::from_usize(r.release_time as usize)).collect(),
        load_map: LoadMap { rows, base },
        u_max: options.u_max,
        pad_bin_weights: weights,
        tau: options.tau,
        smooth_eps: options.smooth_eps,
        cvar_width: options.cvar_width,
    };
    inst.validate()?;
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceOptions<R: Real> {
    pub u_max: R,
    pub tau: R,
    pub smooth_eps: R,
    pub cvar_width: R,
}

impl<R: Real> Default for InstanceOptions<R> {
    fn default() -> Self {
        InstanceOptions {
            u_max: R::c(0.95),
            tau: R::c(0.25),
            smooth_eps: R::c(1e-6),
            cvar_width: R::c(0.1),
        }
    }
}

/// Barrier penalty `φ(u) = u² / (1 − u)` and derivatives.
pub fn phi<R: Real>(u: R) -> R {
    u * u / (R::one() - u)
}

fn phi_d1<R: Real>(u: R) -> R {
    let d = R::one() - u;
    (R::c(2.0) * u - u * u) / (d * d)
}

fn phi_d2<R: Real>(u: R) -> R {
    let d = R::one() - u;
    R::c(2.0) / (d * d * d)
}

/// Structured Hessian of one atom, added into a dense matrix on demand.
enum AtomHess<R: Real> {
    Zero,
    /// `(P − r rᵀ / s²) / (√n s)` for the smoothed dispersion atom.
    Dispersion { r: Vec<R>, s: R },
    /// `diag(d) − d dᵀ / Σd` for the smoothed CVaR atom.
    Cvar { d: Vec<R> },
    /// `Aᵀ diag(d) A` for the utilization atom.
    Load { d: Vec<R> },
}

impl<R: Real> AtomHess<R> {
    fn add_scaled(&self, mat: &mut SymMatrix<R>, scale: R, inst: &RelaxedInstance<R>) {
        if scale == R::zero() {
            return;
        }
        match self {
            AtomHess::Zero => {}
            AtomHess::Dispersion { r, s } => {
                let n = r.len();
                let sqrt_n = R::from_usize(n).sqrt();
                let c = scale / (sqrt_n * *s);
                // P = I − 𝟙𝟙ᵀ/n
                mat.add_diag(c);
                mat.add_outer(-c / R::from_usize(n), &vec![R::one(); n]);
                mat.add_outer(-c / (*s * *s), r);
            }
            AtomHess::Cvar { d } => {
                let sum: R = d.iter().copied().sum();
                for (i, &di) in d.iter().enumerate() {
                    mat.add(i, i, scale * di);
                }
                if sum > R::zero() {
                    mat.add_outer(-scale / sum, d);
                }
            }
            AtomHess::Load { d } => {
                let scaled: Vec<R> = d.iter().map(|&x| x * scale).collect();
                inst.load_map.add_quadratic(mat, &scaled);
            }
        }
    }
}

/// Values, gradients and Hessians of the four atoms at `z`.
pub struct AtomsEval<R: Real> {
    pub values: [R; 4],
    grads: [Vec<R>; 4],
    hess: [AtomHess<R>; 4],
}

impl<R: Real> AtomsEval<R> {
    pub fn gradient(&self, atom: usize) -> &[R] {
        &self.grads[atom]
    }
}

/// Evaluates the four atoms; errors when any utilization reaches the guard
/// cap (the barrier penalty blows up there).
pub fn atoms<R: Real>(z: &[R], inst: &RelaxedInstance<R>) -> Result<AtomsEval<R>> {
    let n = inst.n;
    assert_eq!(z.len(), n, "wait vector must match instance size");
    let nf = R::from_usize(n);

    // g1: mean wait
    let mean = z.iter().copied().sum::<R>() / nf;
    let g1_grad = vec![R::one() / nf; n];

    // g2: smoothed centered dispersion
    let r: Vec<R> = z.iter().map(|&x| x - mean).collect();
    let q: R = r.iter().map(|&x| x * x).sum();
    let s = (q + inst.smooth_eps * inst.smooth_eps).sqrt();
    let g2 = s / nf.sqrt();
    let g2_grad: Vec<R> = r.iter().map(|&x| x / (nf.sqrt() * s)).collect();

    // g3: smoothed CVaR_0.95 (envelope derivatives at the optimal threshold)
    let beta = R::c(0.95);
    let smoothed = cvar::smoothed_cvar(z, beta, inst.cvar_width);
    let m = (R::one() - beta) * nf;
    let g3_grad: Vec<R> = smoothed.weights.iter().map(|&s| s / m).collect();
    let g3_curv: Vec<R> = smoothed
        .weights
        .iter()
        .map(|&s| s * (R::one() - s) / (m * inst.cvar_width))
        .collect();

    // g4: weighted utilization penalty
    let u = inst.load_map.apply(z);
    let cap = inst.guard_cap();
    let mut g4 = R::zero();
    let mut phi1 = vec![R::zero(); u.len()];
    let mut phi2 = vec![R::zero(); u.len()];
    for (r_idx, (&ur, &wr)) in u.iter().zip(&inst.pad_bin_weights).enumerate() {
        if !ur.is_finite() || ur >= cap {
            return Err(Error::Domain(format!(
                "utilization {ur} in row {r_idx} at or above the cap {cap}"
            )));
        }
        g4 = g4 + wr * phi(ur);
        phi1[r_idx] = wr * phi_d1(ur);
        phi2[r_idx] = wr * phi_d2(ur);
    }
    let g4_grad = inst.load_map.apply_transpose(&phi1, n);

    Ok(AtomsEval {
        values: [mean, g2, smoothed.value, g4],
        grads: [g1_grad, g2_grad, g3_grad, g4_grad],
        hess: [
            AtomHess::Zero,
            AtomHess::Dispersion { r, s },
            AtomHess::Cvar { d: g3_curv },
            AtomHess::Load { d: phi2 },
        ],
    })
}

/// Full objective evaluation: value, exact gradient and exact Hessian of
/// `F(z; α) = Σ_S α_S LSE_τ({g_i}_{i∈S})`.
pub struct Objective<R: Real> {
    pub value: R,
    pub gradient: Vec<R>,
    pub hessian: SymMatrix<R>,
    pub atom_values: [R; 4],
}

pub fn objective<R: Real>(z: &[R], alpha: &WeightVector<R>, inst: &RelaxedInstance<R>) -> Result<Objective<R>> {
    alpha.validate()?;
    let ev = atoms(z, inst)?;
    let n = inst.n;
    let tau = inst.tau;

    let mut value = R::zero();
    let mut gradient = vec![R::zero(); n];
    let mut hessian = SymMatrix::zeros(n);
    // per-atom accumulators: Hessian-of-atom coefficient and rank-one weight
    let mut coef_hess = [R::zero(); 4];
    let mut coef_outer = [R::zero(); 4];

    for s_idx in 0..WEIGHT_DIM {
        let a = alpha.alpha[s_idx];
        if a == R::zero() {
            continue;
        }
        let members: Vec<usize> = subset_atoms(s_idx).collect();
        let vals: Vec<R> = members.iter().map(|&i| ev.values[i]).collect();
        value = value + a * lse_aggregate(&vals, tau);
        let sm = lse_softmax(&vals, tau);

        let mut mix = vec![R::zero(); n];
        for (&atom, &w) in members.iter().zip(&sm) {
            coef_hess[atom] = coef_hess[atom] + a * w;
            coef_outer[atom] = coef_outer[atom] + a * w / tau;
            for (g, &d) in mix.iter_mut().zip(ev.gradient(atom)) {
                *g = *g + w * d;
            }
        }
        for (g, &m) in gradient.iter_mut().zip(&mix) {
            *g = *g + a * m;
        }
        // −(α_S/τ) m_S m_Sᵀ
        hessian.add_outer(-a / tau, &mix);
    }

    for atom in 0..4 {
        ev.hess[atom].add_scaled(&mut hessian, coef_hess[atom], inst);
        if coef_outer[atom] != R::zero() {
            hessian.add_outer(coef_outer[atom], ev.gradient(atom));
        }
    }

    Ok(Objective {
        value,
        gradient,
        hessian,
        atom_values: ev.values,
    })
}

/// JSON diagnostic dump of a solved instance: z*, atom values and F.
pub fn solution_dump<R: Real>(alpha: &WeightVector<R>, inst: &RelaxedInstance<R>, z: &[R]) -> Result<String> {
    let obj = objective(z, alpha, inst)?;
    let doc = serde_json::json!({
        "z": z.iter().map(|&x| x.as_f64()).collect::<Vec<f64>>(),
        "atoms": {
            "g1": obj.atom_values[0].as_f64(),
            "g2": obj.atom_values[1].as_f64(),
            "g3": obj.atom_values[2].as_f64(),
            "g4": obj.atom_values[3].as_f64(),
        },
        "objective": obj.value.as_f64(),
    });
    Ok(serde_json::to_string_pretty(&doc).expect("valid json"))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A small dense-ish instance for derivative tests.
    pub(crate) fn test_instance(n: usize) -> RelaxedInstance<f64> {
        let mut rows = Vec::new();
        let mut base = Vec::new();
        let mut weights = Vec::new();
        for r in 0..n.div_ceil(2) {
            let mut row = Vec::new();
            for j in 0..n {
                if (j + r) % 2 == 0 {
                    row.push((j, 0.002 + 0.001 * ((j + r) % 3) as f64));
                }
            }
            rows.push(row);
            base.push(0.2 + 0.05 * (r % 4) as f64);
            weights.push(1.0 + (r % 3) as f64);
        }
        RelaxedInstance {
            n,
            release: (0..n).map(|i| i as f64 * 10.0).collect(),
            load_map: LoadMap { rows, base },
            u_max: 0.95,
            tau: 0.25,
            smooth_eps: 1e-6,
            cvar_width: 0.1,
            pad_bin_weights: weights,
        }
    }

    pub(crate) fn spread_weights(eta: f64) -> WeightVector<f64> {
        // uneven but valid: mass on a few subsets plus the η floor
        let raw = [
            0.12, 0.05, 0.08, 0.10, 0.07, 0.06, 0.05, 0.04, 0.09, 0.03, 0.06, 0.05, 0.08, 0.07, 0.05,
        ];
        let sum: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let t = x / sum * (1.0 - eta);
                if i == IDX_G4 {
                    t + eta
                } else {
                    t
                }
            })
            .collect();
        WeightVector::new(alpha, eta).unwrap()
    }

    #[test]
    fn lse_of_singleton_is_identity() {
        assert_eq!(lse_aggregate(&[3.25f64], 0.1), 3.25);
    }

    #[test]
    fn lse_of_two_zeros_is_tau_ln2() {
        let v = lse_aggregate(&[0.0f64, 0.0], 1.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn lse_envelope_bounds_hold() {
        let vals = [1.0f64, -2.0, 0.5, 0.9];
        for tau in [0.05f64, 0.5, 2.0] {
            for k in 1..=4 {
                let sub = &vals[..k];
                let max = sub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let h = lse_aggregate(sub, tau);
                assert!(h >= max);
                assert!(h <= max + tau * (k as f64).ln() + 1e-12);
            }
        }
    }

    #[test]
    fn weight_vector_validation() {
        let w = WeightVector::concentrated(0, 0.05);
        assert!(w.validate().is_ok());
        assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.alpha[IDX_G4] >= 0.05);

        let mut bad = w.clone();
        bad.alpha[0] += 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn atoms_at_constant_z() {
        let inst = test_instance(8);
        let c = 3.0;
        let z = vec![c; 8];
        let ev = atoms(&z, &inst).unwrap();
        assert!((ev.values[0] - c).abs() < 1e-12);
        // centering kills variation: g2 = ε/√n
        assert!((ev.values[1] - inst.smooth_eps / (8.0f64).sqrt()).abs() < 1e-12);
        // CVaR of a constant is the constant (up to smoothing width bias)
        assert!((ev.values[2] - c).abs() < 20.0 * inst.cvar_width);
    }

    #[test]
    fn atoms_match_direct_recomputation() {
        // n divisible by 20 so the exact tail and the RU form coincide
        let inst = test_instance(40);
        let z: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 * 0.25 + 0.1).collect();
        let ev = atoms(&z, &inst).unwrap();

        let mean = z.iter().sum::<f64>() / 40.0;
        assert!((ev.values[0] - mean).abs() < 1e-12);

        let q: f64 = z.iter().map(|x| (x - mean) * (x - mean)).sum();
        let g2 = (q + inst.smooth_eps * inst.smooth_eps).sqrt() / (40.0f64).sqrt();
        assert!((ev.values[1] - g2).abs() < 1e-10);

        let g4: f64 = inst
            .load_map
            .apply(&z)
            .iter()
            .zip(&inst.pad_bin_weights)
            .map(|(&u, &w)| w * u * u / (1.0 - u))
            .sum();
        assert!((ev.values[3] - g4).abs() < 1e-10);

        // softplus dominates the hinge, so the smoothed CVaR sits in
        // [exact, exact + (n/m) w ln2]
        let exact = crate::cvar::cvar_sorted_tail(&z, 0.95);
        assert!(ev.values[2] >= exact - 1e-9);
        assert!(ev.values[2] <= exact + 20.0 * inst.cvar_width * std::f64::consts::LN_2 + 1e-9);
    }

    #[test]
    fn domain_error_at_capacity() {
        let inst = test_instance(8);
        // push waits high enough to overload some row
        let z = vec![1e6; 8];
        assert!(matches!(atoms(&z, &inst), Err(Error::Domain(_))));
    }

    #[test]
    fn pure_g4_objective_reduces_to_atom() {
        let inst = test_instance(10);
        let alpha = WeightVector::concentrated(IDX_G4, 0.05);
        let z = vec![2.0; 10];
        let obj = objective(&z, &alpha, &inst).unwrap();
        let ev = atoms(&z, &inst).unwrap();
        // α puts all mass on {4}: F = g4 exactly
        assert!((obj.value - ev.values[3]).abs() < 1e-12);
        assert!(obj.hessian.max_asymmetry() < 1e-12);
    }

    #[test]
    fn instance_from_scenario_builds_rows() {
        let mut spec = crate::scenario::tests::three_class_spec(1800, 3, [0.02, 0.01, 0.005]);
        for c in &mut spec.classes {
            c.service_demand = 10; // keep every bin clearly under the cap
        }
        let scenario = crate::scenario::generate_scenario(&spec).unwrap();
        let inst = instance_from_scenario::<f64>(&scenario, &InstanceOptions::default()).unwrap();
        assert_eq!(inst.n, scenario.requests.len());
        assert!(inst.validate().is_ok());
        let z0 = inst.interior_start().unwrap();
        assert!(atoms(&z0, &inst).is_ok());
    }
}
