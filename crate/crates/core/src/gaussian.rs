//! Covariance-matrix backend for linear bosonic networks.
//!
//! Quadratures are ordered `(x_1, p_1, x_2, p_2, ...)` and normalized so the
//! vacuum covariance is the identity. The unbiased dynamics is
//! `dΣ/dt = -(AΣ + ΣAᵀ) + 2D`, and counting on one mode tilts it through the
//! diagonal bias matrices `F±` acting on that mode's 2×2 block.

use faer::prelude::*;
use faer::{Mat, Side};

use crate::linalg::binomial;
use crate::{Error, Result};

/// Relative residual accepted from a Lyapunov solve.
pub const LYAPUNOV_TOL: f64 = 1e-10;

const NEWTON_MAX_ITER: usize = 60;
const NEWTON_TOL: f64 = 1e-12;

/// Counted exchange with a bath on one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianChannel {
    pub mode: usize,
    /// Rate of quanta leaving the mode into the bath.
    pub emission: f64,
    /// Rate of quanta absorbed from the bath (`emission * n̄` for a thermal bath).
    pub absorption: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianModel {
    n_modes: usize,
    drift: Mat<f64>,
    diffusion: Mat<f64>,
    channels: Vec<GaussianChannel>,
}

impl GaussianModel {
    pub fn new(
        n_modes: usize,
        drift: Mat<f64>,
        diffusion: Mat<f64>,
        channels: Vec<GaussianChannel>,
    ) -> Result<Self> {
        let dim = 2 * n_modes;
        for m in [&drift, &diffusion] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.nrows().max(m.ncols()) });
            }
        }
        let scale = 1.0 + diffusion.norm_l2();
        if asymmetry(&diffusion) > 1e-12 * scale {
            return Err(Error::InvalidParameter("diffusion matrix is not symmetric".into()));
        }
        let eig = diffusion
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Singular(format!("{e:?}")))?;
        if eig.iter().any(|&l| l < -1e-12 * scale) {
            return Err(Error::InvalidParameter("diffusion matrix is not positive semidefinite".into()));
        }
        for ch in &channels {
            if ch.mode >= n_modes {
                return Err(Error::InvalidParameter(format!("channel mode {} out of range", ch.mode)));
            }
            if !(ch.emission >= 0.0 && ch.absorption >= 0.0) {
                return Err(Error::InvalidParameter("channel rates must be non-negative".into()));
            }
        }
        Ok(Self { n_modes, drift, diffusion, channels })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn drift(&self) -> &Mat<f64> {
        &self.drift
    }

    pub fn diffusion(&self) -> &Mat<f64> {
        &self.diffusion
    }

    pub fn channels(&self) -> &[GaussianChannel] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> Result<&GaussianChannel> {
        self.channels
            .get(index)
            .ok_or(Error::InvalidChannel { index, count: self.channels.len() })
    }

    /// Every eigenvalue of the drift has a strictly positive real part, so the
    /// covariance relaxes to a unique steady state.
    pub fn check_stable(&self) -> Result<()> {
        check_stable(&self.drift)
    }
}

fn check_stable(a: &Mat<f64>) -> Result<()> {
    let eig = a.eigenvalues().map_err(|e| Error::Singular(format!("{e:?}")))?;
    match eig.iter().map(|l| l.re).fold(f64::INFINITY, f64::min) {
        m if m > 0.0 => Ok(()),
        m => Err(Error::Unstable(format!("drift eigenvalue with real part {m:e}"))),
    }
}

fn asymmetry(m: &Mat<f64>) -> f64 {
    (m - m.transpose()).norm_l2()
}

fn symmetrize(m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn trace(m: &Mat<f64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// Solves `A X + X Aᵀ + Q = 0` for symmetric `Q` with a stable `A`.
pub fn lyapunov_solve(a: &Mat<f64>, q: &Mat<f64>) -> Result<Mat<f64>> {
    check_stable(a)?;
    if asymmetry(q) > 1e-10 * (1.0 + q.norm_l2()) {
        return Err(Error::InvalidParameter("Lyapunov source is not symmetric".into()));
    }
    lyapunov_kron(a, q)
}

// Plain Kronecker solve; the Newton steps reuse it without the stability check
// since their closed-loop matrix changes every iteration.
fn lyapunov_kron(a: &Mat<f64>, q: &Mat<f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    let eye = Mat::<f64>::identity(n, n);
    let op = eye.kron(a) + a.kron(&eye);
    let rhs = Mat::from_fn(n * n, 1, |k, _| -q[(k % n, k / n)]);
    let v = op.partial_piv_lu().solve(&rhs);
    let x = Mat::from_fn(n, n, |i, j| v[(i + j * n, 0)]);
    if !(0..n).all(|i| (0..n).all(|j| x[(i, j)].is_finite())) {
        return Err(Error::Singular("Kronecker Lyapunov system".into()));
    }
    let x = symmetrize(&x);
    let residual = (a * &x + &x * a.transpose() + q).norm_l2();
    if residual > LYAPUNOV_TOL * (a.norm_l2() * x.norm_l2() + q.norm_l2()).max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!("Lyapunov residual {residual:e}")));
    }
    Ok(x)
}

/// n-th derivative at `s = 0` of the diagonal bias matrices.
#[derive(Debug, Clone)]
pub struct BiasMatrices {
    pub order: usize,
    pub f_plus: Mat<f64>,
    pub f_minus: Mat<f64>,
}

fn block_diag(model: &GaussianModel, mode: usize, value: f64) -> Mat<f64> {
    let dim = model.dim();
    Mat::from_fn(dim, dim, |i, j| if i == j && i / 2 == mode { value } else { 0.0 })
}

pub fn f_matrices(model: &GaussianModel, channel: usize, order: usize) -> Result<BiasMatrices> {
    let ch = model.channel(channel)?;
    let (fp, fm) = if order == 0 {
        (0.0, 0.0)
    } else {
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        (sign * ch.emission + ch.absorption, sign * ch.emission - ch.absorption)
    };
    Ok(BiasMatrices {
        order,
        f_plus: block_diag(model, ch.mode, fp),
        f_minus: block_diag(model, ch.mode, fm),
    })
}

/// Bias matrices at finite counting field `s`.
pub fn f_matrices_at(model: &GaussianModel, channel: usize, s: f64) -> Result<BiasMatrices> {
    let ch = model.channel(channel)?;
    let out = ch.emission * (-s).exp_m1();
    let inc = ch.absorption * s.exp_m1();
    Ok(BiasMatrices {
        order: 0,
        f_plus: block_diag(model, ch.mode, out + inc),
        f_minus: block_diag(model, ch.mode, out - inc),
    })
}

/// Taylor coefficients (as derivatives) of the tilted covariance around `s = 0`.
#[derive(Debug, Clone)]
pub struct SigmaHierarchy {
    pub orders: Vec<Mat<f64>>,
    pub residuals: Vec<f64>,
}

impl SigmaHierarchy {
    pub fn depth(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn order(&self, n: usize) -> &Mat<f64> {
        &self.orders[n]
    }
}

/// Steady-state covariance of the unbiased dynamics.
pub fn steady_covariance(model: &GaussianModel) -> Result<Mat<f64>> {
    model.check_stable()?;
    let sigma = lyapunov_solve(model.drift(), &(model.diffusion() * -2.0))?;
    let min = sigma
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Singular(format!("{e:?}")))?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::InvalidParameter(format!("steady covariance not positive definite ({min:e})")));
    }
    Ok(sigma)
}

pub fn sigma_hierarchy(model: &GaussianModel, channel: usize, n_max: usize) -> Result<SigmaHierarchy> {
    let a = model.drift();
    let f: Vec<BiasMatrices> = (0..=n_max).map(|n| f_matrices(model, channel, n)).collect::<Result<_>>()?;
    let sigma0 = steady_covariance(model)?;
    let res0 = (a * &sigma0 + &sigma0 * a.transpose() - model.diffusion() * 2.0).norm_l2();
    let mut orders = vec![sigma0];
    let mut residuals = vec![res0];
    for n in 1..=n_max {
        let src = noise_source(&orders, &f, n);
        let next = lyapunov_kron(a, &src).map_err(|e| match e {
            Error::Singular(_) => Error::NonConvergent { order: n, residual: f64::NAN },
            other => other,
        })?;
        residuals.push((a * &next + &next * a.transpose() + &src).norm_l2());
        orders.push(next);
    }
    Ok(SigmaHierarchy { orders, residuals })
}

// Source of the n-th order Lyapunov equation, from the n-th derivative of the
// tilted Riccati equation with every lower order already known.
fn noise_source(sigmas: &[Mat<f64>], f: &[BiasMatrices], n: usize) -> Mat<f64> {
    let dim = sigmas[0].nrows();
    let mut acc = &f[n].f_plus * -0.5;
    for i in 0..n {
        let c = binomial(n, i);
        let fm = &f[n - i].f_minus;
        acc += (fm * &sigmas[i] + &sigmas[i] * fm) * (0.5 * c);
    }
    for j in 1..=n {
        for i in 0..=(n - j) {
            let k = n - i - j;
            let c = binomial(n, i) * binomial(n - i, j);
            acc -= &sigmas[i] * &f[j].f_plus * &sigmas[k] * (0.5 * c);
        }
    }
    debug_assert_eq!(acc.nrows(), dim);
    symmetrize(&acc)
}

/// n-th scaled cumulant of the net number of quanta the counted mode gives to its bath.
pub fn gaussian_cumulant(model: &GaussianModel, channel: usize, n: usize, hierarchy: &SigmaHierarchy) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("cumulant order starts at 1".into()));
    }
    if hierarchy.orders.len() < n {
        return Err(Error::MissingOrders { needed: n - 1, available: hierarchy.orders.len() });
    }
    let mut acc = -trace(&f_matrices(model, channel, n)?.f_minus);
    for i in 0..n {
        let fp = f_matrices(model, channel, n - i)?.f_plus;
        acc += binomial(n, i) * trace(&(&fp * hierarchy.order(i)));
    }
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    Ok(0.25 * sign * acc)
}

/// Cumulants `κ_1..=κ_{n_max}` from a single hierarchy solve.
pub fn gaussian_cumulants(model: &GaussianModel, channel: usize, n_max: usize) -> Result<Vec<f64>> {
    let h = sigma_hierarchy(model, channel, n_max.saturating_sub(1))?;
    (1..=n_max).map(|n| gaussian_cumulant(model, channel, n, &h)).collect()
}

/// Tilted covariance at counting field `s`, by Newton iteration seeded at the steady state.
pub fn riccati_covariance(model: &GaussianModel, channel: usize, s: f64) -> Result<Mat<f64>> {
    let f = f_matrices_at(model, channel, s)?;
    let a = model.drift();
    let shifted = a + &f.f_minus * 0.5;
    let two_d = model.diffusion() * 2.0;
    let residual = |sigma: &Mat<f64>| -> Mat<f64> {
        let r = &shifted * sigma + sigma * shifted.transpose()
            - sigma * &f.f_plus * sigma * 0.5
            - &f.f_plus * 0.5
            - &two_d;
        symmetrize(&r)
    };
    let mut sigma = steady_covariance(model)?;
    let mut r = residual(&sigma);
    for _ in 0..NEWTON_MAX_ITER {
        let scale = 1.0 + sigma.norm_l2() * (1.0 + shifted.norm_l2() + sigma.norm_l2() * f.f_plus.norm_l2());
        if r.norm_l2() <= NEWTON_TOL * scale {
            return Ok(sigma);
        }
        let closed = &shifted - &sigma * &f.f_plus * 0.5;
        let step = match lyapunov_kron(&closed, &r) {
            Ok(step) => step,
            Err(_) => break,
        };
        sigma += step;
        r = residual(&sigma);
        if !r.norm_l2().is_finite() {
            break;
        }
    }
    let scale = 1.0 + sigma.norm_l2();
    if r.norm_l2() <= 1e3 * NEWTON_TOL * scale {
        return Ok(sigma);
    }
    Err(Error::NewtonNonConvergence { iterations: NEWTON_MAX_ITER, residual: r.norm_l2() })
}

/// Scaled cumulant generating function from the tilted covariance.
pub fn riccati_theta(model: &GaussianModel, channel: usize, s: f64) -> Result<f64> {
    let sigma = riccati_covariance(model, channel, s)?;
    let f = f_matrices_at(model, channel, s)?;
    Ok(0.25 * trace(&(&f.f_plus * &sigma - &f.f_minus)))
}

/// Minimal quadrature variance of the output mode, inferred from the mean emission rate.
pub fn squeezing_from_kappa1(kappa1: f64, gamma: f64) -> f64 {
    1.0 / (1.0 + (2.0 * kappa1 / (gamma + 2.0 * kappa1)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Two modes, equal damping, counted on mode 0.
    fn squeezed(g: f64, gamma: f64, omega: f64) -> GaussianModel {
        let h = gamma / 2.0;
        let rows = [
            [h, -omega, 0.0, g],
            [omega, h, g, 0.0],
            [0.0, g, h, -omega],
            [g, 0.0, omega, h],
        ];
        let a = Mat::from_fn(4, 4, |i, j| rows[i][j]);
        let d = Mat::from_fn(4, 4, |i, j| if i == j { h } else { 0.0 });
        let ch = GaussianChannel { mode: 0, emission: gamma, absorption: 0.0 };
        GaussianModel::new(2, a, d, vec![ch]).unwrap()
    }

    fn close(a: &Mat<f64>, b: &Mat<f64>, tol: f64) -> bool {
        (a - b).norm_max() <= tol
    }

    #[test]
    fn lyapunov_scalar_case() {
        let a = Mat::<f64>::identity(3, 3) * 0.5;
        let q = Mat::<f64>::identity(3, 3) * -1.0;
        let x = lyapunov_solve(&a, &q).unwrap();
        assert!(close(&x, &Mat::identity(3, 3), 1e-14));
    }

    #[test]
    fn lyapunov_rejects_unstable_drift() {
        let a = Mat::<f64>::identity(2, 2) * -1.0;
        let q = Mat::<f64>::identity(2, 2);
        assert!(matches!(lyapunov_solve(&a, &q), Err(Error::Unstable(_))));
    }

    #[test]
    fn uncoupled_modes_sit_in_vacuum() {
        let m = squeezed(0.0, 1.0, 1.0);
        let h = sigma_hierarchy(&m, 0, 0).unwrap();
        assert!(close(h.order(0), &Mat::identity(4, 4), 1e-12));
        let k = gaussian_cumulants(&m, 0, 2).unwrap();
        assert!(k.iter().all(|x| x.abs() < 1e-14), "{k:?}");
    }

    #[test]
    fn bias_derivatives() {
        let a = Mat::<f64>::identity(2, 2);
        let ch = GaussianChannel { mode: 0, emission: 1.0, absorption: 0.5 };
        let m = GaussianModel::new(1, a.clone(), a * 0.5, vec![ch]).unwrap();
        let f0 = f_matrices(&m, 0, 0).unwrap();
        assert_eq!(f0.f_plus.norm_max(), 0.0);
        assert_eq!(f0.f_minus.norm_max(), 0.0);
        let f2 = f_matrices(&m, 0, 2).unwrap();
        assert_eq!(f2.f_plus[(1, 1)], 1.5);
        assert_eq!(f2.f_minus[(0, 0)], 0.5);

        let m = squeezed(0.2, 1.0, 1.0);
        let f1 = f_matrices(&m, 0, 1).unwrap();
        for i in 0..4 {
            let want = if i < 2 { -1.0 } else { 0.0 };
            assert_eq!(f1.f_plus[(i, i)], want);
            assert_eq!(f1.f_minus[(i, i)], want);
        }
    }

    #[test]
    fn mean_emission_matches_closed_form() {
        let (g, gamma, omega) = (0.2, 1.0, 1.0);
        let k = gaussian_cumulants(&squeezed(g, gamma, omega), 0, 1).unwrap();
        let want = 2.0 * g * g * gamma / (gamma * gamma - 4.0 * g * g + 4.0 * omega * omega);
        assert!((k[0] - want).abs() < 1e-12, "{} vs {want}", k[0]);
        assert!((k[0] - 0.016528925619834).abs() < 1e-9);
    }

    #[test]
    fn single_mode_first_order_by_hand() {
        // Scalar problem: A = a·I, D = d·I, counted emission γ, absorption γ̄.
        let (a, d, gamma, gbar) = (0.7, 0.9, 1.1, 0.25);
        let m = GaussianModel::new(
            1,
            Mat::<f64>::identity(2, 2) * a,
            Mat::<f64>::identity(2, 2) * d,
            vec![GaussianChannel { mode: 0, emission: gamma, absorption: gbar }],
        )
        .unwrap();
        let h = sigma_hierarchy(&m, 0, 1).unwrap();
        let s0 = d / a;
        let (fp, fm) = (-gamma + gbar, -gamma - gbar);
        // 2aΣ' + F₋'Σ - ½F₊'Σ² - ½F₊' = 0
        let s1 = -(fm * s0 - 0.5 * fp * s0 * s0 - 0.5 * fp) / (2.0 * a);
        for i in 0..2 {
            assert!((h.order(0)[(i, i)] - s0).abs() < 1e-14);
            assert!((h.order(1)[(i, i)] - s1).abs() < 1e-13);
        }
        assert!(h.order(1)[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn low_orders_reduce_to_two_term_formulas() {
        let m = squeezed(0.3, 1.2, 0.8);
        let h = sigma_hierarchy(&m, 0, 1).unwrap();
        let f1 = f_matrices(&m, 0, 1).unwrap();
        let f2 = f_matrices(&m, 0, 2).unwrap();
        let k1 = -0.25 * trace(&(&f1.f_plus * h.order(0) - &f1.f_minus));
        let k2 = 0.25 * trace(&(&f1.f_plus * h.order(1) * 2.0 + &f2.f_plus * h.order(0) - &f2.f_minus));
        assert_eq!(gaussian_cumulant(&m, 0, 1, &h).unwrap(), k1);
        assert!((gaussian_cumulant(&m, 0, 2, &h).unwrap() - k2).abs() < 1e-15);
    }

    #[test]
    fn orders_are_symmetric() {
        let m = squeezed(0.3, 1.0, 0.5);
        let h = sigma_hierarchy(&m, 0, 4).unwrap();
        for s in &h.orders {
            assert!(asymmetry(s) < 1e-10);
        }
        for (s, r) in h.orders.iter().zip(&h.residuals) {
            assert!(*r <= 1e-10 * (1.0 + s.norm_l2()));
        }
    }

    #[test]
    fn riccati_matches_hierarchy() {
        let m = squeezed(0.25, 1.0, 1.0);
        assert!(riccati_theta(&m, 0, 0.0).unwrap().abs() < 1e-9);
        let k = gaussian_cumulants(&m, 0, 2).unwrap();
        let step = 1e-3;
        let tp = riccati_theta(&m, 0, step).unwrap();
        let tm = riccati_theta(&m, 0, -step).unwrap();
        assert!(((tp - tm) / (2.0 * step) + k[0]).abs() < 1e-6);
        let (tp, tm) = (riccati_theta(&m, 0, 1e-2).unwrap(), riccati_theta(&m, 0, -1e-2).unwrap());
        assert!(((tp + tm) / 1e-4 - k[1]).abs() < 1e-5);
        // Σ' is the slope of the tilted covariance.
        let h = sigma_hierarchy(&m, 0, 1).unwrap();
        let slope = (riccati_covariance(&m, 0, step).unwrap() - riccati_covariance(&m, 0, -step).unwrap())
            * (0.5 / step);
        assert!(close(&slope, h.order(1), 1e-6));
    }

    #[test]
    fn thermal_single_mode_exchange_is_bounded() {
        // Net exchange of one mode with one bath is minus the change of its
        // occupation, so all cumulants vanish.
        let (kappa, nbar) = (1.0, 0.3);
        let m = GaussianModel::new(
            1,
            Mat::<f64>::identity(2, 2) * (kappa / 2.0),
            Mat::<f64>::identity(2, 2) * (kappa * (2.0 * nbar + 1.0) / 2.0),
            vec![GaussianChannel { mode: 0, emission: kappa * (nbar + 1.0), absorption: kappa * nbar }],
        )
        .unwrap();
        let k = gaussian_cumulants(&m, 0, 3).unwrap();
        assert!(k.iter().all(|x| x.abs() < 1e-12), "{k:?}");
        assert!(riccati_theta(&m, 0, 0.4).unwrap().abs() < 1e-10);
    }

    #[test]
    fn squeezing_forms_agree() {
        assert_eq!(squeezing_from_kappa1(0.0, 1.0), 1.0);
        let (g, gamma, omega) = (0.2f64, 1.0f64, 1.0f64);
        let k1 = 2.0 * g * g * gamma / (gamma * gamma - 4.0 * g * g + 4.0 * omega * omega);
        let direct = 1.0 / (1.0 + (4.0 * g * g / (gamma * gamma + 4.0 * omega * omega)).sqrt());
        assert!((squeezing_from_kappa1(k1, gamma) - direct).abs() < 1e-10);
        let grid: Vec<f64> = (0..50).map(|i| squeezing_from_kappa1(0.02 * i as f64, gamma)).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
    }
}
