//! Vectorized Lindblad generators, steady states and time propagation.
//!
//! Density matrices are column-stacked: `vec(X)[i + N·j] = X[i, j]`, so
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use faer::c64;
use faer::Mat;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Operator, SpaceLayout};
use crate::linalg::{column, column_to_vec, creal, czero, lstsq, lu_solve};

/// Relative singular-value threshold separating the exact zero modes of `W`.
pub const NULLSPACE_TOL: f64 = 1e-9;

/// A dissipation channel `γ (L•L† − ½{L†L, •})`.
#[derive(Clone, Debug)]
pub struct Channel {
    l_op: Operator,
    rate: f64,
}

impl Channel {
    pub fn new(l_op: Operator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("channel rate {rate} must be finite and >= 0")));
        }
        Ok(Self { l_op, rate })
    }

    pub fn l_op(&self) -> &Operator {
        &self.l_op
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `L†L`.
    pub fn number_operator(&self) -> Operator {
        &self.l_op.adjoint() * &self.l_op
    }
}

/// Hamiltonian plus dissipation channels on one layout.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: Operator,
    channels: Vec<Channel>,
    layout: SpaceLayout,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, channels: Vec<Channel>) -> Result<Self> {
        let layout = hamiltonian.layout().clone();
        let herr = hamiltonian.hermiticity_error();
        if herr > 1e-10 {
            return Err(Error::InvalidParameter(format!("Hamiltonian not Hermitian (error {herr:e})")));
        }
        for ch in &channels {
            if ch.l_op.layout() != &layout {
                return Err(Error::DimensionMismatch {
                    expected: layout.total_dim(),
                    found: ch.l_op.dim(),
                });
            }
        }
        Ok(Self { hamiltonian, channels, layout })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> Result<&Channel> {
        self.channels
            .get(index)
            .ok_or(Error::InvalidChannel { index, count: self.channels.len() })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn liouville_dim(&self) -> usize {
        self.dim() * self.dim()
    }
}

/// Matrix acting on column-stacked density matrices.
#[derive(Clone, Debug)]
pub struct Superoperator {
    matrix: Mat<c64>,
    layout: SpaceLayout,
}

impl Superoperator {
    pub fn from_matrix(layout: SpaceLayout, matrix: Mat<c64>) -> Result<Self> {
        let n = layout.total_dim() * layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        Ok(Self { matrix, layout })
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    /// Liouville-space dimension `N²`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &Operator) -> Result<Operator> {
        if x.layout() != &self.layout {
            return Err(Error::DimensionMismatch { expected: self.layout.total_dim(), found: x.dim() });
        }
        let v = &self.matrix * column(&vectorize(x));
        unvectorize(&self.layout, &column_to_vec(&v))
    }

    /// Spectral norm, i.e. the largest singular value.
    pub fn norm(&self) -> f64 {
        self.matrix
            .singular_values()
            .ok()
            .and_then(|s| s.first().copied())
            .unwrap_or(f64::NAN)
    }

    /// `‖vec(I)ᴴ W‖`: zero for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let n = self.layout.total_dim();
        let mut worst = 0.0f64;
        for col in 0..self.dim() {
            let mut acc = czero();
            for k in 0..n {
                acc += self.matrix[(k + n * k, col)];
            }
            worst = worst.max(acc.norm());
        }
        worst
    }

    pub fn eigenvalues(&self) -> Result<Vec<c64>> {
        self.matrix
            .eigenvalues()
            .map_err(|e| Error::Singular(format!("eigenvalue solver failed: {e:?}")))
    }
}

pub fn vectorize(x: &Operator) -> Vec<c64> {
    let n = x.dim();
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(x.get(i, j));
        }
    }
    out
}

pub fn unvectorize(layout: &SpaceLayout, v: &[c64]) -> Result<Operator> {
    let n = layout.total_dim();
    if v.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: v.len() });
    }
    Ok(Operator::from_fn(layout.clone(), |i, j| v[i + n * j]))
}

/// `A • B` as a Liouville-space matrix: `Bᵀ ⊗ A`.
fn sandwich(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    b.transpose().kron(a)
}

/// `L • L†` as a Liouville-space matrix: `conj(L) ⊗ L`.
fn jump_term(l: &Mat<c64>) -> Mat<c64> {
    l.conjugate().kron(l)
}

/// Unbiased generator `W[ρ] = −i[H, ρ] + Σ γ (LρL† − ½{L†L, ρ})`.
pub fn build_liouvillian(model: &LindbladModel) -> Superoperator {
    let n = model.dim();
    let id: Mat<c64> = Mat::identity(n, n);
    let h = model.hamiltonian().matrix();
    let minus_i = c64::new(0.0, -1.0);

    let mut w = &sandwich(h, &id) - &sandwich(&id, h);
    w = Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * minus_i);

    for ch in model.channels() {
        if ch.rate == 0.0 {
            continue;
        }
        let l = ch.l_op.matrix();
        let ldl = ch.number_operator().into_matrix();
        let term = &jump_term(l) - &(&sandwich(&ldl, &id) + &sandwich(&id, &ldl)).scale_half();
        let g = creal(ch.rate);
        w = Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] + term[(i, j)] * g);
    }
    Superoperator { matrix: w, layout: model.layout().clone() }
}

trait ScaleHalf {
    fn scale_half(&self) -> Mat<c64>;
}

impl ScaleHalf for Mat<c64> {
    fn scale_half(&self) -> Mat<c64> {
        Mat::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * 0.5)
    }
}

/// `γᵢ Lᵢ • Lᵢ†` of the counted channel, as a Liouville-space matrix.
pub fn jump_superoperator(model: &LindbladModel, channel_index: usize) -> Result<Superoperator> {
    let ch = model.channel(channel_index)?;
    let j = jump_term(ch.l_op.matrix());
    let g = creal(ch.rate);
    Ok(Superoperator {
        matrix: Mat::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)] * g),
        layout: model.layout().clone(),
    })
}

/// Tilted generator `W + γᵢ(e^{−s} − 1) Lᵢ • Lᵢ†`.
pub fn biased_liouvillian(model: &LindbladModel, channel_index: usize, s: f64) -> Result<Superoperator> {
    let jump = jump_superoperator(model, channel_index)?;
    let w = build_liouvillian(model);
    Ok(add_scaled(&w, &jump, (-s).exp_m1()))
}

/// `a + factor · b`.
pub fn add_scaled(a: &Superoperator, b: &Superoperator, factor: f64) -> Superoperator {
    let f = creal(factor);
    Superoperator {
        matrix: Mat::from_fn(a.dim(), a.dim(), |i, j| a.matrix[(i, j)] + b.matrix[(i, j)] * f),
        layout: a.layout.clone(),
    }
}

/// Right and left zero modes of a generator together with the spectral
/// projector onto its kernel along the remaining spectrum.
#[derive(Clone, Debug)]
pub struct NullSpace {
    right: Mat<c64>,
    left: Mat<c64>,
    /// `(Lᴴ R)⁻¹ Lᴴ`, so that `P₀ = R · coords`.
    coords: Mat<c64>,
    layout: SpaceLayout,
}

impl NullSpace {
    pub fn dim(&self) -> usize {
        self.right.ncols()
    }

    /// Columns spanning the left kernel (conserved quantities, `vec(I)` among them).
    pub fn left(&self) -> &Mat<c64> {
        &self.left
    }

    pub fn right(&self) -> &Mat<c64> {
        &self.right
    }

    /// Long-time (Cesàro) limit of `e^{Wt}` applied to `x`.
    pub fn project(&self, x: &Operator) -> Result<Operator> {
        let v = column(&vectorize(x));
        let p = &self.right * (&self.coords * &v);
        unvectorize(&self.layout, &column_to_vec(&p))
    }
}

/// Numerical kernel of `W` from its SVD (singular values below `tol · σ_max`).
pub fn null_space(w: &Superoperator, tol: f64) -> Result<NullSpace> {
    let svd = w
        .matrix
        .svd()
        .map_err(|e| Error::Singular(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let n = w.dim();
    let smax = if n > 0 { s[0].re } else { 0.0 };
    let zero_modes: Vec<usize> = (0..n).filter(|&k| s[k].re <= tol * smax.max(f64::MIN_POSITIVE)).collect();
    if zero_modes.is_empty() {
        return Err(Error::EmptyNullspace);
    }
    let k = zero_modes.len();
    let right = Mat::from_fn(n, k, |i, c| svd.V()[(i, zero_modes[c])]);
    let left = Mat::from_fn(n, k, |i, c| svd.U()[(i, zero_modes[c])]);
    let lr = left.adjoint() * &right;
    let coords = lu_solve(&lr, &left.adjoint().to_owned());
    if !crate::linalg::all_finite(&coords) {
        return Err(Error::Singular("zero eigenvalue is not semisimple".into()));
    }
    Ok(NullSpace { right, left, coords, layout: w.layout.clone() })
}

/// Extremal stationary states of `W`.
///
/// Each computational-basis state is sent to its long-time limit with the
/// kernel projector; duplicates and states that are convex mixtures of the
/// others are discarded. A unique steady state yields a one-element list.
pub fn steady_states(w: &Superoperator) -> Result<Vec<DensityMatrix>> {
    let ns = null_space(w, NULLSPACE_TOL)?;
    steady_states_from(&ns)
}

pub fn steady_states_from(ns: &NullSpace) -> Result<Vec<DensityMatrix>> {
    let layout = &ns.layout;
    let n = layout.total_dim();
    let mut candidates: Vec<Operator> = Vec::new();
    for k in 0..n {
        let seed = Operator::from_fn(layout.clone(), |i, j| if i == k && j == k { creal(1.0) } else { czero() });
        let limit = ns.project(&seed)?.hermitian_part();
        let tr = limit.trace().re;
        if tr.abs() < 1e-12 {
            continue;
        }
        let limit = limit.scale_real(1.0 / tr);
        if !candidates.iter().any(|c| (c - &limit).norm() < 1e-8) {
            candidates.push(limit);
        }
        if ns.dim() == 1 {
            break;
        }
    }
    if candidates.is_empty() {
        return Err(Error::EmptyNullspace);
    }

    // Drop convex mixtures one at a time until every survivor is extremal.
    'outer: loop {
        if candidates.len() <= 1 {
            break;
        }
        for idx in 0..candidates.len() {
            if is_mixture_of_others(&candidates, idx) {
                candidates.remove(idx);
                continue 'outer;
            }
        }
        break;
    }

    candidates.into_iter().map(DensityMatrix::new).collect()
}

fn is_mixture_of_others(candidates: &[Operator], idx: usize) -> bool {
    let others: Vec<Vec<c64>> = candidates
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != idx)
        .map(|(_, c)| vectorize(c))
        .collect();
    let target = vectorize(&candidates[idx]);
    let rows = target.len();
    let a = Mat::from_fn(rows, others.len(), |i, j| others[j][i]);
    let b = column(&target);
    let weights = lstsq(&a, &b);
    let fit = &a * &weights;
    let residual = (0..rows).map(|i| (fit[(i, 0)] - b[(i, 0)]).norm_sqr()).sum::<f64>().sqrt();
    residual < 1e-8 && (0..weights.nrows()).all(|i| weights[(i, 0)].re >= -1e-8)
}

/// Options of the adaptive Dormand–Prince integrator.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorTolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorTolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12 }
    }
}

const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the autonomous system `y' = f(y)` from 0 to `t_final`
/// with embedded 5(4) Dormand–Prince steps no longer than `max_step`.
fn integrate_linear(
    f: impl Fn(&Mat<c64>) -> Mat<c64>,
    y0: Mat<c64>,
    t_final: f64,
    max_step: f64,
    tol: IntegratorTolerances,
) -> Result<Mat<c64>> {
    let mut y = y0;
    let mut t = 0.0;
    let mut h = max_step.min(t_final);
    let rows = y.nrows();
    while t < t_final {
        if t + h > t_final {
            h = t_final - t;
        }
        let mut k: Vec<Mat<c64>> = Vec::with_capacity(7);
        for stage in 0..7 {
            let mut arg = y.clone();
            for (prev, &a) in k.iter().zip(DP_A[stage].iter()) {
                if a != 0.0 {
                    let ha = h * a;
                    for i in 0..rows {
                        arg[(i, 0)] += prev[(i, 0)] * ha;
                    }
                }
            }
            k.push(f(&arg));
        }
        let mut y5 = y.clone();
        let mut err = 0.0f64;
        for i in 0..rows {
            let mut d5 = czero();
            let mut d4 = czero();
            for s in 0..7 {
                d5 += k[s][(i, 0)] * (h * DP_B5[s]);
                d4 += k[s][(i, 0)] * (h * DP_B4[s]);
            }
            y5[(i, 0)] += d5;
            let scale = tol.atol + tol.rtol * y[(i, 0)].norm().max(y5[(i, 0)].norm());
            err = err.max((d5 - d4).norm() / scale);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(max_step);
        if t < t_final && h < 1e-14 * t.max(1.0) {
            return Err(Error::StepSizeUnderflow { time: t });
        }
    }
    Ok(y)
}

/// Propagates `rho0` to `t_final` under `W` with adaptive Runge–Kutta steps
/// no longer than `dt`.
pub fn evolve(w: &Superoperator, rho0: &DensityMatrix, t_final: f64, dt: f64) -> Result<DensityMatrix> {
    let op = evolve_operator(w, rho0.operator(), t_final, dt)?;
    DensityMatrix::new(op.hermitian_part())
}

/// Same as [`evolve`] for an arbitrary (not necessarily physical) operator.
pub fn evolve_operator(w: &Superoperator, x0: &Operator, t_final: f64, dt: f64) -> Result<Operator> {
    check_times(t_final, dt)?;
    if t_final == 0.0 {
        return Ok(x0.clone());
    }
    let y0 = column(&vectorize(x0));
    let y = integrate_linear(|y| w.matrix() * y, y0, t_final, dt, IntegratorTolerances::default())?;
    unvectorize(w.layout(), &column_to_vec(&y))
}

fn check_times(t_final: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} must be > 0")));
    }
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidParameter(format!("final time {t_final} must be >= 0")));
    }
    Ok(())
}

/// Average jump rate `γ Tr(L†L ρ(t))` of a channel over `[t_start, t_end]`.
///
/// The state is first propagated to `t_start`; the rate is then integrated
/// alongside the state as one extra linear component.
pub fn time_averaged_rate(
    model: &LindbladModel,
    channel_index: usize,
    rho0: &DensityMatrix,
    t_start: f64,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    if !(t_end > t_start) {
        return Err(Error::InvalidParameter("averaging window must have t_end > t_start".into()));
    }
    let ch = model.channel(channel_index)?;
    let w = build_liouvillian(model);
    let start = evolve_operator(&w, rho0.operator(), t_start, dt)?;

    // Rate functional c·vec(ρ) = γ Σ_ij (L†L)_{ji} ρ_{ij}.
    let nop = ch.number_operator();
    let n = model.dim();
    let rate_row: Vec<c64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            nop.get(j, i) * ch.rate
        })
        .collect();

    let mut y0 = vectorize(&start);
    y0.push(czero());
    let m = n * n;
    let wm = w.matrix();
    let rhs = |y: &Mat<c64>| {
        let rho = y.as_ref().subrows(0, m);
        let d = wm * rho;
        let mut out = Mat::zeros(m + 1, 1);
        for i in 0..m {
            out[(i, 0)] = d[(i, 0)];
        }
        let mut acc = czero();
        for i in 0..m {
            acc += rate_row[i] * y[(i, 0)];
        }
        out[(m, 0)] = acc;
        out
    };
    let y = integrate_linear(rhs, column(&y0), t_end - t_start, dt, IntegratorTolerances::default())?;
    Ok(y[(m, 0)].re / (t_end - t_start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{local_pauli, pauli, PauliAxis};

    fn decaying_qubit(gamma: f64) -> LindbladModel {
        let l = SpaceLayout::qubits(1);
        LindbladModel::new(
            Operator::zeros(&l),
            vec![Channel::new(local_pauli(PauliAxis::Minus), gamma).unwrap()],
        )
        .unwrap()
    }

    fn sample_model() -> LindbladModel {
        let l = SpaceLayout::qubits(2);
        let h = &(&pauli(PauliAxis::X, 0, &l).unwrap() * &pauli(PauliAxis::X, 1, &l).unwrap())
            + &pauli(PauliAxis::Z, 0, &l).unwrap().scale_real(0.3);
        LindbladModel::new(
            h,
            vec![
                Channel::new(pauli(PauliAxis::Plus, 0, &l).unwrap(), 0.7).unwrap(),
                Channel::new(pauli(PauliAxis::Minus, 1, &l).unwrap(), 1.3).unwrap(),
            ],
        )
        .unwrap()
    }

    fn random_hermitian(layout: &SpaceLayout, seed: u64) -> Operator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Operator::from_fn(layout.clone(), |_, _| c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        x.hermitian_part()
    }

    #[test]
    fn vectorization_round_trip_and_convention() {
        let l = SpaceLayout::qubits(2);
        let x = random_hermitian(&l, 3);
        assert_eq!(unvectorize(&l, &vectorize(&x)).unwrap(), x);

        let a = random_hermitian(&l, 4);
        let b = random_hermitian(&l, 5);
        let lhs = vectorize(&(&(&a * &x) * &b));
        let rhs = &sandwich(a.matrix(), b.matrix()) * column(&vectorize(&x));
        for (i, v) in lhs.iter().enumerate() {
            assert!((*v - rhs[(i, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_decay_generator() {
        let w = build_liouvillian(&decaying_qubit(1.0));
        let rho = Operator::local_real(2, &[1.0, 0.0, 0.0, 0.0]);
        let out = w.apply(&rho).unwrap();
        let expect = Operator::local_real(2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!((&out - &expect).norm() < 1e-15);
    }

    #[test]
    fn trace_preserved_for_random_inputs() {
        let model = sample_model();
        let w = build_liouvillian(&model);
        assert!(w.trace_defect() <= 1e-10 * w.norm());
        for seed in 0..100 {
            let rho = random_hermitian(model.layout(), seed);
            let tr = w.apply(&rho).unwrap().trace();
            assert!(tr.norm() < 1e-10);
        }
    }

    #[test]
    fn generator_matches_direct_commutator_form() {
        let model = sample_model();
        let w = build_liouvillian(&model);
        let rho = random_hermitian(model.layout(), 11);
        let h = model.hamiltonian();
        let mut direct = h.commutator(&rho).scale(c64::new(0.0, -1.0));
        for ch in model.channels() {
            let l = ch.l_op();
            let ldl = ch.number_operator();
            let jump = &(l * &rho) * &l.adjoint();
            let anti = &(&ldl * &rho) + &(&rho * &ldl);
            direct = &direct + &(&jump - &anti.scale_real(0.5)).scale_real(ch.rate());
        }
        assert!((&w.apply(&rho).unwrap() - &direct).norm() < 1e-12);
    }

    #[test]
    fn biased_generator_limits() {
        let model = sample_model();
        let w = build_liouvillian(&model);
        let w0 = biased_liouvillian(&model, 0, 0.0).unwrap();
        assert_eq!(w0.matrix(), w.matrix());
        assert!(matches!(biased_liouvillian(&model, 2, 0.1), Err(Error::InvalidChannel { .. })));

        // s → +∞: the added term tends to −γ L•L†.
        let big = biased_liouvillian(&model, 0, 60.0).unwrap();
        let jump = jump_superoperator(&model, 0).unwrap();
        let diff = add_scaled(&add_scaled(&big, &w, -1.0), &jump, 1.0);
        assert!(diff.matrix().norm_l2() < 1e-12);
    }

    #[test]
    fn biased_decaying_qubit_by_hand() {
        // Column-stacked basis (ρ00, ρ10, ρ01, ρ11), L = σ⁻, γ = 1, s = ln 2:
        // recycling ρ00 → ρ11 entry becomes e^{−s} = 1/2.
        let model = decaying_qubit(1.0);
        let ws = biased_liouvillian(&model, 0, std::f64::consts::LN_2).unwrap();
        let expect = [
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, -0.5, 0.0, 0.0],
            [0.0, 0.0, -0.5, 0.0],
            [0.5, 0.0, 0.0, 0.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((ws.matrix()[(i, j)] - creal(expect[i][j])).norm() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn decaying_qubit_relaxes_to_ground_state() {
        let w = build_liouvillian(&decaying_qubit(1.0));
        let states = steady_states(&w).unwrap();
        assert_eq!(states.len(), 1);
        assert!((states[0].population(1) - 1.0).abs() < 1e-12);

        let l = SpaceLayout::qubits(1);
        let pumped = LindbladModel::new(
            Operator::zeros(&l),
            vec![Channel::new(local_pauli(PauliAxis::Plus), 1.0).unwrap()],
        )
        .unwrap();
        let states = steady_states(&build_liouvillian(&pumped)).unwrap();
        assert!((states[0].population(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_invariants() {
        let model = sample_model();
        let w = build_liouvillian(&model);
        let states = steady_states(&w).unwrap();
        assert_eq!(states.len(), 1);
        let r = w.apply(states[0].operator()).unwrap();
        assert!(r.norm() <= 1e-8);
        assert!((states[0].operator().trace().re - 1.0).abs() < 1e-10);
        for ev in w.eigenvalues().unwrap() {
            assert!(ev.re <= 1e-9);
        }
    }

    #[test]
    fn kernel_vectors_are_annihilated() {
        for model in [sample_model(), decaying_qubit(0.4)] {
            let w = build_liouvillian(&model);
            let ns = null_space(&w, NULLSPACE_TOL).unwrap();
            assert!((w.matrix() * ns.right()).norm_l2() < 1e-10);
            assert!((w.matrix().adjoint() * ns.left()).norm_l2() < 1e-10);
            // vec(I) lies in the left kernel.
            let n = model.dim();
            let id = column(&vectorize(&Operator::identity(model.layout())));
            let coef = ns.left().adjoint() * &id;
            let back = ns.left() * &coef;
            assert!((&back - &id).norm_l2() < 1e-10 * (n as f64));
        }
    }

    #[test]
    fn evolve_exponential_decay() {
        let w = build_liouvillian(&decaying_qubit(1.0));
        let up = DensityMatrix::basis_state(&SpaceLayout::qubits(1), 0).unwrap();
        assert_eq!(evolve(&w, &up, 0.0, 0.1).unwrap(), up);
        let out = evolve(&w, &up, 1.0, 0.1).unwrap();
        assert!((out.population(0) - (-1.0f64).exp()).abs() < 1e-6);
        assert!(evolve(&w, &up, 1.0, 0.0).is_err());
    }

    #[test]
    fn evolve_preserves_trace_and_hermiticity() {
        let model = sample_model();
        let w = build_liouvillian(&model);
        let rho0 = DensityMatrix::basis_state(model.layout(), 1).unwrap();
        let out = evolve_operator(&w, rho0.operator(), 25.0, 0.2).unwrap();
        assert!((out.trace().re - 1.0).abs() < 1e-8);
        assert!(out.hermiticity_error() < 1e-9);
    }

    #[test]
    fn averaged_rate_of_decay_is_total_emission() {
        // From |↑⟩ one emission in total: average over [0, T] tends to 1/T.
        let model = decaying_qubit(1.0);
        let up = DensityMatrix::basis_state(model.layout(), 0).unwrap();
        let rate = time_averaged_rate(&model, 0, &up, 0.0, 40.0, 0.5).unwrap();
        assert!((rate * 40.0 - (1.0 - (-40.0f64).exp())).abs() < 1e-8);
    }
}
