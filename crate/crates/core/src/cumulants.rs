//! Scaled cumulants of a channel's jump count from the steady-state
//! hierarchy of derivatives of the normalized tilted state.
//!
//! With `ρₛ` the normalized tilted state and `ρ⁽ⁿ⁾ = ∂ₛⁿρₛ|₀`, each order
//! obeys `∂ₜρ⁽ⁿ⁾ = W[ρ⁽ⁿ⁾] + Sₙ` with a source built from lower orders only,
//! so the stationary values follow from one singular linear solve per order.

use faer::c64;
use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::hilbert::{expectation, DensityMatrix, Operator};
use crate::liouville::{
    build_liouvillian, null_space, steady_states_from, unvectorize, vectorize, LindbladModel, NullSpace,
    Superoperator, NULLSPACE_TOL,
};
use crate::linalg::{binomial, column_to_vec, czero};

/// Highest supported cumulant order; beyond it factorial growth swamps double precision.
pub const MAX_ORDER: usize = 20;

/// Accepted solve residual, relative to `max(1, ‖Sₙ‖)`.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// One stationary order `ρ⁽ⁿ⁾` of the hierarchy.
#[derive(Clone, Debug)]
pub struct HierarchyOrder {
    pub order: usize,
    pub matrix: Operator,
    /// `‖W[ρ⁽ⁿ⁾] + Sₙ‖` (Frobenius).
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct CumulantResult {
    /// `κ₁ … κ_nmax`.
    pub values: Vec<f64>,
    pub channel_index: usize,
    pub fixed_point_index: usize,
    pub hierarchy: Vec<HierarchyOrder>,
}

impl CumulantResult {
    pub fn kappa(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    pub fn fano_paper(&self) -> Result<f64> {
        fano_paper(self.kappa(1).unwrap_or(0.0), self.kappa(2).ok_or(Error::MissingOrders { needed: 2, available: self.values.len() })?)
    }

    pub fn fano_standard(&self) -> Result<f64> {
        fano_standard(self.kappa(1).unwrap_or(0.0), self.kappa(2).ok_or(Error::MissingOrders { needed: 2, available: self.values.len() })?)
    }
}

/// Cumulants of every extremal fixed point of a possibly multistable model.
#[derive(Clone, Debug)]
pub struct FixedPointCumulants {
    pub results: Vec<CumulantResult>,
    pub fixed_points: Vec<DensityMatrix>,
    /// Distinct mean currents across fixed points: a kink of θ at `s = 0`.
    pub first_order_transition: bool,
}

/// `L⁽ᵐ⁾[ρ] = γ Σ_{k<m} C(m,k)(−1)^{m−k} L ρ⁽ᵏ⁾ L†`.
fn bias_derivative(l: &Operator, rate: f64, m: usize, lower: &[HierarchyOrder]) -> Operator {
    let ladj = l.adjoint();
    let mut acc = Operator::zeros(l.layout());
    for (k, ord) in lower.iter().enumerate().take(m) {
        let sign = if (m - k) % 2 == 0 { 1.0 } else { -1.0 };
        let term = &(l * &ord.matrix) * &ladj;
        acc = &acc + &term.scale_real(rate * sign * binomial(m, k));
    }
    acc
}

/// Inhomogeneous term `Sₙ = L⁽ⁿ⁾[ρ] − Σ_{j<n} C(n,j) ρ⁽ʲ⁾ Tr L⁽ⁿ⁻ʲ⁾[ρ]`.
pub fn hierarchy_source(
    model: &LindbladModel,
    channel_index: usize,
    n: usize,
    lower: &[HierarchyOrder],
) -> Result<Operator> {
    if n == 0 {
        return Err(Error::InvalidParameter("source is defined for orders n >= 1".into()));
    }
    if lower.len() < n {
        return Err(Error::MissingOrders { needed: n, available: lower.len() });
    }
    let ch = model.channel(channel_index)?;
    let (l, rate) = (ch.l_op(), ch.rate());
    let mut src = bias_derivative(l, rate, n, lower);
    for j in 0..n {
        let tr = bias_derivative(l, rate, n - j, lower).trace();
        let term = lower[j].matrix.scale(tr * binomial(n, j));
        src = &src - &term;
    }
    Ok(src)
}

/// Augmented least-squares system `[W; c·Λᴴ] x = [−S; 0]` where the rows `Λᴴ`
/// pin the component of `x` along the kernel of `W` to zero.
struct GaugedSolver {
    w: Superoperator,
    qr: faer::linalg::solvers::Qr<c64>,
    extra_rows: usize,
}

impl GaugedSolver {
    fn new(w: &Superoperator, ns: &NullSpace) -> Self {
        let m = w.dim();
        let k = ns.dim();
        let scale = w.matrix().norm_max().max(1.0);
        let left = ns.left();
        let aug = Mat::from_fn(m + k, m, |i, j| {
            if i < m {
                w.matrix()[(i, j)]
            } else {
                left[(j, i - m)].conj() * scale
            }
        });
        Self { w: w.clone(), qr: aug.qr(), extra_rows: k }
    }

    fn solve(&self, source: &Operator) -> Result<(Operator, f64)> {
        let m = self.w.dim();
        let s = vectorize(source);
        let rhs = Mat::from_fn(m + self.extra_rows, 1, |i, _| if i < m { -s[i] } else { czero() });
        let x = self.qr.solve_lstsq(&rhs);
        let x = unvectorize(self.w.layout(), &column_to_vec(&x))?.hermitian_part();
        let residual = (&self.w.apply(&x)? + source).norm();
        Ok((x, residual))
    }
}

/// Stationary orders `ρ⁽⁰⁾ … ρ^{(n_max)}` around a given fixed point.
pub fn solve_hierarchy(
    model: &LindbladModel,
    channel_index: usize,
    n_max: usize,
    fixed_point: &DensityMatrix,
) -> Result<Vec<HierarchyOrder>> {
    let w = build_liouvillian(model);
    let ns = null_space(&w, NULLSPACE_TOL)?;
    solve_hierarchy_with(model, &w, &ns, channel_index, n_max, fixed_point)
}

/// As [`solve_hierarchy`] with a precomputed generator and kernel.
pub fn solve_hierarchy_with(
    model: &LindbladModel,
    w: &Superoperator,
    ns: &NullSpace,
    channel_index: usize,
    n_max: usize,
    fixed_point: &DensityMatrix,
) -> Result<Vec<HierarchyOrder>> {
    model.channel(channel_index)?;
    if n_max > MAX_ORDER {
        return Err(Error::OrderTooHigh { order: n_max, max: MAX_ORDER });
    }
    let rho = fixed_point.operator().clone();
    let r0 = w.apply(&rho)?.norm();
    if r0 > 1e-8 {
        return Err(Error::InvalidState(format!("not a fixed point (‖W[ρ]‖ = {r0:e})")));
    }
    let mut orders = vec![HierarchyOrder { order: 0, matrix: rho, residual: r0 }];
    if n_max == 0 {
        return Ok(orders);
    }
    let solver = GaugedSolver::new(w, ns);
    for n in 1..=n_max {
        let src = hierarchy_source(model, channel_index, n, &orders)?;
        let (x, residual) = solver.solve(&src)?;
        if !(residual <= RESIDUAL_TOL * src.norm().max(1.0)) {
            return Err(Error::NonConvergent { order: n, residual });
        }
        orders.push(HierarchyOrder { order: n, matrix: x, residual });
    }
    Ok(orders)
}

/// `κₙ = γ Σ_{j<n} C(n,j)(−1)ʲ Tr(L†L ρ⁽ʲ⁾)`.
pub fn cumulant(model: &LindbladModel, channel_index: usize, n: usize, hierarchy: &[HierarchyOrder]) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("cumulant order starts at 1".into()));
    }
    if n > MAX_ORDER {
        return Err(Error::OrderTooHigh { order: n, max: MAX_ORDER });
    }
    if hierarchy.len() < n {
        return Err(Error::MissingOrders { needed: n, available: hierarchy.len() });
    }
    let ch = model.channel(channel_index)?;
    let nop = ch.number_operator();
    let mut acc = 0.0;
    for (j, ord) in hierarchy.iter().enumerate().take(n) {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binomial(n, j) * expectation(&nop, &ord.matrix)?.re;
    }
    Ok(ch.rate() * acc)
}

fn assemble(
    model: &LindbladModel,
    channel_index: usize,
    n_max: usize,
    fixed_point_index: usize,
    hierarchy: Vec<HierarchyOrder>,
) -> Result<CumulantResult> {
    let values = (1..=n_max)
        .map(|n| cumulant(model, channel_index, n, &hierarchy))
        .collect::<Result<Vec<_>>>()?;
    Ok(CumulantResult { values, channel_index, fixed_point_index, hierarchy })
}

/// Cumulants `κ₁ … κ_nmax` for a model with a unique steady state.
pub fn cumulants(model: &LindbladModel, channel_index: usize, n_max: usize) -> Result<CumulantResult> {
    if n_max == 0 || n_max > MAX_ORDER {
        return Err(Error::OrderTooHigh { order: n_max, max: MAX_ORDER });
    }
    let w = build_liouvillian(model);
    let ns = null_space(&w, NULLSPACE_TOL)?;
    let fixed = steady_states_from(&ns)?;
    if fixed.len() != 1 {
        return Err(Error::DegenerateSteadyState { count: fixed.len() });
    }
    let hierarchy = solve_hierarchy_with(model, &w, &ns, channel_index, n_max, &fixed[0])?;
    assemble(model, channel_index, n_max, 0, hierarchy)
}

/// One [`CumulantResult`] per extremal fixed point.
pub fn cumulants_per_fixed_point(model: &LindbladModel, channel_index: usize, n_max: usize) -> Result<FixedPointCumulants> {
    if n_max == 0 || n_max > MAX_ORDER {
        return Err(Error::OrderTooHigh { order: n_max, max: MAX_ORDER });
    }
    let w = build_liouvillian(model);
    let ns = null_space(&w, NULLSPACE_TOL)?;
    let fixed_points = steady_states_from(&ns)?;
    let mut results = Vec::with_capacity(fixed_points.len());
    for (idx, fp) in fixed_points.iter().enumerate() {
        let hierarchy = solve_hierarchy_with(model, &w, &ns, channel_index, n_max, fp)?;
        results.push(assemble(model, channel_index, n_max, idx, hierarchy)?);
    }
    let first_order_transition = has_distinct_currents(&results);
    Ok(FixedPointCumulants { results, fixed_points, first_order_transition })
}

fn has_distinct_currents(results: &[CumulantResult]) -> bool {
    let k1: Vec<f64> = results.iter().filter_map(|r| r.kappa(1)).collect();
    let max = k1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (lo, hi) = k1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    max > 0.0 && hi - lo > 1e-6 * max
}

/// `(κ₂ + κ₁²)/κ₁`, the form written in the source analysis.
pub fn fano_paper(kappa1: f64, kappa2: f64) -> Result<f64> {
    if kappa1.abs() <= 1e-14 {
        return Err(Error::QuietPhase);
    }
    Ok((kappa2 + kappa1 * kappa1) / kappa1)
}

/// `κ₂/κ₁`, variance rate over mean rate.
pub fn fano_standard(kappa1: f64, kappa2: f64) -> Result<f64> {
    if kappa1.abs() <= 1e-14 {
        return Err(Error::QuietPhase);
    }
    Ok(kappa2 / kappa1)
}

/// `(κ₂ + κ₁²)/κ₁` computed from the hierarchy of a uniquely stationary model.
pub fn fano(model: &LindbladModel, channel_index: usize) -> Result<f64> {
    let r = cumulants(model, channel_index, 2)?;
    fano_paper(r.values[0], r.values[1])
}

pub fn fano_standard_of(model: &LindbladModel, channel_index: usize) -> Result<f64> {
    let r = cumulants(model, channel_index, 2)?;
    fano_standard(r.values[0], r.values[1])
}

/// Mean current reached from `rho0`: `γ Tr(L†L P₀[ρ₀])` with `P₀` the
/// long-time projector, so it selects the attractor the initial state feeds.
pub fn kappa1_from_initial_state(model: &LindbladModel, channel_index: usize, rho0: &DensityMatrix) -> Result<f64> {
    let ch = model.channel(channel_index)?;
    let w = build_liouvillian(model);
    let ns = null_space(&w, NULLSPACE_TOL)?;
    let limit = ns.project(rho0.operator())?;
    Ok(ch.rate() * expectation(&ch.number_operator(), &limit)?.re)
}
