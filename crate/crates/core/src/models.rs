//! Model zoo: spin pairs, a squeezing-coupled pair of bosonic modes, and the
//! mean-field analysis of a driven Kerr oscillator.

use faer::Mat;

use crate::gaussian::{steady_covariance, GaussianChannel, GaussianModel};
use crate::hilbert::{boson_annihilation, embed, pauli, Operator, PauliAxis, SpaceLayout};
use crate::liouville::{Channel, LindbladModel};
use crate::{Error, Result};

fn check_rate(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")))
    }
}

fn spin_pair(field: impl Fn(&Operator, &Operator) -> Operator, h: f64, gamma: f64) -> Result<LindbladModel> {
    check_rate("gamma", gamma)?;
    let l = SpaceLayout::qubits(2);
    let xx = &pauli(PauliAxis::X, 0, &l)? * &pauli(PauliAxis::X, 1, &l)?;
    let z = field(&pauli(PauliAxis::Z, 0, &l)?, &pauli(PauliAxis::Z, 1, &l)?);
    let hamiltonian = &xx + &z.scale_real(h);
    let channels = (0..2)
        .map(|k| Channel::new(pauli(PauliAxis::Plus, k, &l)?, gamma))
        .collect::<Result<_>>()?;
    LindbladModel::new(hamiltonian, channels)
}

/// `σˣσˣ + h(σᶻ₁ + σᶻ₂)`, each spin pumped up by its own channel at rate γ.
pub fn two_spins_same(h: f64, gamma: f64) -> Result<LindbladModel> {
    spin_pair(|a, b| a + b, h, gamma)
}

/// `σˣσˣ + h(σᶻ₁ − σᶻ₂)`, each spin pumped up by its own channel at rate γ.
pub fn two_spins_inverse(h: f64, gamma: f64) -> Result<LindbladModel> {
    spin_pair(|a, b| a - b, h, gamma)
}

/// `σˣσˣ` with one collective channel `σ⁺₁σ⁺₂`. The steady state is degenerate.
pub fn two_spins_global(gamma: f64) -> Result<LindbladModel> {
    check_rate("gamma", gamma)?;
    let l = SpaceLayout::qubits(2);
    let xx = &pauli(PauliAxis::X, 0, &l)? * &pauli(PauliAxis::X, 1, &l)?;
    let pump = &pauli(PauliAxis::Plus, 0, &l)? * &pauli(PauliAxis::Plus, 1, &l)?;
    LindbladModel::new(xx, vec![Channel::new(pump, gamma)?])
}

/// Single qubit relaxing to its ground state at rate γ.
pub fn decaying_qubit(gamma: f64) -> Result<LindbladModel> {
    check_rate("gamma", gamma)?;
    let l = SpaceLayout::qubits(1);
    LindbladModel::new(Operator::zeros(&l), vec![Channel::new(pauli(PauliAxis::Minus, 0, &l)?, gamma)?])
}

/// Parameters of the two damped modes coupled by two-mode squeezing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedPair {
    pub omega: f64,
    pub g: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

pub const MIN_FOCK_CUTOFF: usize = 4;

/// Fock-space version truncated at `cutoff` levels per mode. Channel 0 is the
/// emission of mode 1, channel 1 that of mode 2.
pub fn squeezed_pair(p: SqueezedPair, cutoff: usize) -> Result<LindbladModel> {
    if cutoff < MIN_FOCK_CUTOFF {
        return Err(Error::InvalidParameter(format!("Fock cutoff {cutoff} below {MIN_FOCK_CUTOFF}")));
    }
    check_rate("gamma1", p.gamma1)?;
    check_rate("gamma2", p.gamma2)?;
    let layout = SpaceLayout::new(vec![cutoff, cutoff])?;
    let a = boson_annihilation(cutoff)?;
    let a1 = embed(&a, 0, &layout)?;
    let a2 = embed(&a, 1, &layout)?;
    let number = &(&a1.adjoint() * &a1) + &(&a2.adjoint() * &a2);
    let pair = &a2 * &a1;
    let hamiltonian = &number.scale_real(p.omega) + &(&pair + &pair.adjoint()).scale_real(p.g);
    LindbladModel::new(hamiltonian, vec![Channel::new(a1, p.gamma1)?, Channel::new(a2, p.gamma2)?])
}

/// Phase-space version with quadratures `(x₁, p₁, x₂, p₂)`.
pub fn squeezed_pair_gaussian(p: SqueezedPair) -> Result<GaussianModel> {
    check_rate("gamma1", p.gamma1)?;
    check_rate("gamma2", p.gamma2)?;
    let (h1, h2, w, g) = (p.gamma1 / 2.0, p.gamma2 / 2.0, p.omega, p.g);
    let rows = [
        [h1, -w, 0.0, g],
        [w, h1, g, 0.0],
        [0.0, g, h2, -w],
        [g, 0.0, w, h2],
    ];
    let drift = Mat::from_fn(4, 4, |i, j| rows[i][j]);
    let diffusion = Mat::from_fn(4, 4, |i, j| if i != j { 0.0 } else if i < 2 { h1 } else { h2 });
    let channels = vec![
        GaussianChannel { mode: 0, emission: p.gamma1, absorption: 0.0 },
        GaussianChannel { mode: 1, emission: p.gamma2, absorption: 0.0 },
    ];
    let model = GaussianModel::new(2, drift, diffusion, channels)?;
    model.check_stable()?;
    Ok(model)
}

/// Smallest cutoff whose top Fock level carries less than `pop_tol` of each
/// mode's population, estimated from the Gaussian steady state (each reduced
/// mode is treated as thermal at its mean occupation). The Liouville dimension
/// `cutoff⁴` is held at or below `dim_cap`; the second value reports whether
/// the cap was hit before the tolerance was met.
pub fn adaptive_cutoff(p: SqueezedPair, pop_tol: f64, dim_cap: usize) -> Result<(usize, bool)> {
    let sigma = steady_covariance(&squeezed_pair_gaussian(p)?)?;
    let nbar = (0..2)
        .map(|m| ((sigma[(2 * m, 2 * m)] + sigma[(2 * m + 1, 2 * m + 1)]) / 4.0 - 0.5).max(0.0))
        .fold(0.0, f64::max);
    let top = |c: usize| (nbar / (1.0 + nbar)).powi(c as i32 - 1) / (1.0 + nbar);
    let mut cutoff = MIN_FOCK_CUTOFF;
    while top(cutoff) >= pop_tol {
        if (cutoff + 1).pow(4) > dim_cap {
            return Ok((cutoff, true));
        }
        cutoff += 1;
    }
    Ok((cutoff, false))
}

/// Mean-field driven Kerr oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KerrParams {
    /// Detuning of the mode from the drive.
    pub delta: f64,
    pub gamma: f64,
    /// Kerr nonlinearity.
    pub g: f64,
    /// Drive intensity `|F|²`.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KerrBranches {
    /// Real non-negative mean occupations, ascending.
    pub roots: Vec<f64>,
    pub stable: Vec<bool>,
    /// Edges of the unstable occupation interval; `None` when the oscillator
    /// is monostable for every drive.
    pub n_minus: Option<f64>,
    pub n_plus: Option<f64>,
}

impl KerrParams {
    fn validate(&self) -> Result<()> {
        check_rate("gamma", self.gamma)?;
        check_rate("g", self.g)?;
        if !(self.intensity >= 0.0) {
            return Err(Error::InvalidParameter(format!("intensity must be non-negative, got {}", self.intensity)));
        }
        Ok(())
    }

    /// Drive intensity that sustains occupation `n`.
    pub fn intensity_for(&self, n: f64) -> f64 {
        let d = self.delta - 2.0 * self.g * n;
        (d * d + self.gamma * self.gamma / 4.0) * n
    }

    /// Residual of the steady-state cubic at `n`.
    pub fn cubic(&self, n: f64) -> f64 {
        self.intensity_for(n) - self.intensity
    }

    /// Turning points of the intensity curve, which bound the unstable branch.
    pub fn stability_bounds(&self) -> Option<(f64, f64)> {
        let disc = self.delta * self.delta - 0.75 * self.gamma * self.gamma;
        if disc <= 0.0 {
            return None;
        }
        let r = disc.sqrt();
        Some(((2.0 * self.delta - r) / (6.0 * self.g), (2.0 * self.delta + r) / (6.0 * self.g)))
    }

    /// Drive intensities between which three occupations coexist.
    pub fn bistable_window(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.stability_bounds()?;
        if lo <= 0.0 {
            return None;
        }
        Some((self.intensity_for(hi), self.intensity_for(lo)))
    }
}

// Real roots of a x³ + b x² + c x + d (a ≠ 0), trigonometric form when three.
fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let (b, c, d) = (b / a, c / a, d / a);
    let p = c - b * b / 3.0;
    let q = 2.0 * b.powi(3) / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = q * q / 4.0 + p.powi(3) / 27.0;
    if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3).map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift).collect()
    }
}

pub fn kerr_branches(p: KerrParams) -> Result<KerrBranches> {
    p.validate()?;
    let (g, delta, gamma) = (p.g, p.delta, p.gamma);
    let a = 4.0 * g * g;
    let b = -4.0 * g * delta;
    let c = delta * delta + gamma * gamma / 4.0;
    let mut roots: Vec<f64> = cubic_roots(a, b, c, -p.intensity)
        .into_iter()
        .map(|mut n| {
            for _ in 0..4 {
                let slope = 3.0 * a * n * n + 2.0 * b * n + c;
                if slope == 0.0 {
                    break;
                }
                let step = p.cubic(n) / slope;
                n -= step;
                if step.abs() <= 1e-16 * n.abs().max(1.0) {
                    break;
                }
            }
            n
        })
        .filter(|n| *n >= -1e-12)
        .map(|n| n.max(0.0))
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * y.abs().max(1.0));
    let bounds = p.stability_bounds();
    let stable = roots
        .iter()
        .map(|&n| bounds.map_or(true, |(lo, hi)| !(lo < n && n < hi)))
        .collect();
    Ok(KerrBranches { roots, stable, n_minus: bounds.map(|b| b.0), n_plus: bounds.map(|b| b.1) })
}

/// Mean emission rate `γ n` on every stable mean-field branch. Two values
/// signal coexisting dynamical phases.
pub fn kerr_kappa1(p: KerrParams) -> Result<Vec<f64>> {
    let branches = kerr_branches(p)?;
    Ok(branches
        .roots
        .iter()
        .zip(&branches.stable)
        .filter(|(_, s)| **s)
        .map(|(n, _)| p.gamma * n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulants::cumulants;
    use crate::gaussian::gaussian_cumulants;
    use crate::liouville::build_liouvillian;

    fn fig4(intensity: f64) -> KerrParams {
        KerrParams { delta: 1.0, gamma: 0.5, g: 0.01, intensity }
    }

    #[test]
    fn spin_models_are_trace_preserving() {
        for m in [
            two_spins_same(0.3, 1.0).unwrap(),
            two_spins_inverse(0.7, 2.0).unwrap(),
            two_spins_global(0.1).unwrap(),
            decaying_qubit(1.0).unwrap(),
        ] {
            assert!(m.hamiltonian().is_hermitian(1e-14));
            assert!(build_liouvillian(&m).trace_defect() < 1e-12);
        }
        assert!(two_spins_same(0.0, -1.0).is_err());
    }

    #[test]
    fn inverse_field_at_zero_is_same_model() {
        let a = two_spins_same(0.0, 1.3).unwrap();
        let b = two_spins_inverse(0.0, 1.3).unwrap();
        assert_eq!(build_liouvillian(&a).matrix(), build_liouvillian(&b).matrix());
    }

    #[test]
    fn channels_are_exchange_symmetric() {
        let m = two_spins_same(0.8, 1.5).unwrap();
        let k0 = cumulants(&m, 0, 2).unwrap();
        let k1 = cumulants(&m, 1, 2).unwrap();
        assert!((k0.kappa(1).unwrap() - k1.kappa(1).unwrap()).abs() < 1e-10);
        let poisson = cumulants(&two_spins_same(0.0, 2.0).unwrap(), 0, 1).unwrap();
        assert!((poisson.kappa(1).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn drift_matches_printed_layout() {
        let p = SqueezedPair { omega: 1.0, g: 0.2, gamma1: 1.0, gamma2: 0.6 };
        let m = squeezed_pair_gaussian(p).unwrap();
        let a = m.drift();
        assert_eq!((a[(0, 0)], a[(0, 1)], a[(0, 3)]), (0.5, -1.0, 0.2));
        assert_eq!((a[(3, 0)], a[(3, 2)], a[(2, 2)]), (0.2, 1.0, 0.3));
        assert_eq!(m.diffusion()[(1, 1)], 0.5);
        assert_eq!(m.diffusion()[(3, 3)], 0.3);
        let unstable = SqueezedPair { omega: 0.0, g: 1.0, gamma1: 1.0, gamma2: 1.0 };
        assert!(matches!(squeezed_pair_gaussian(unstable), Err(Error::Unstable(_))));
        assert!(squeezed_pair(p, 3).is_err());
    }

    #[test]
    fn uncoupled_pair_is_dark_in_both_backends() {
        let p = SqueezedPair { omega: 1.0, g: 0.0, gamma1: 1.0, gamma2: 1.0 };
        let k = gaussian_cumulants(&squeezed_pair_gaussian(p).unwrap(), 0, 1).unwrap();
        assert!(k[0].abs() < 1e-14);
        let k = cumulants(&squeezed_pair(p, 4).unwrap(), 0, 1).unwrap();
        assert!(k.kappa(1).unwrap().abs() < 1e-10);
    }

    #[test]
    fn adaptive_cutoff_grows_with_coupling() {
        let p = |g| SqueezedPair { omega: 1.0, g, gamma1: 1.0, gamma2: 1.0 };
        let (c1, capped1) = adaptive_cutoff(p(0.1), 1e-8, 4096).unwrap();
        let (c2, capped2) = adaptive_cutoff(p(0.2), 1e-8, 4096).unwrap();
        assert!(!capped1 && !capped2);
        assert!(c1 <= c2);
        assert_eq!(c2, 6);
        let (c4, _) = adaptive_cutoff(p(0.4), 1e-8, 4096).unwrap();
        assert!(c4 <= 8 && c4 >= c2);
        assert_eq!(adaptive_cutoff(p(0.4), 1e-8, 1296).unwrap(), (6, true));
    }

    #[test]
    fn kerr_stability_bounds() {
        let b = kerr_branches(fig4(0.0)).unwrap();
        let r = (13.0f64 / 16.0).sqrt();
        assert!((b.n_minus.unwrap() - (2.0 - r) / 0.06).abs() < 1e-9);
        assert!((b.n_plus.unwrap() - (2.0 + r) / 0.06).abs() < 1e-9);
        assert_eq!(b.roots, vec![0.0]);
        assert_eq!(b.stable, vec![true]);
        assert_eq!(kerr_kappa1(fig4(0.0)).unwrap(), vec![0.0]);
        let mono = KerrParams { delta: 0.1, gamma: 0.5, g: 0.01, intensity: 3.0 };
        assert!(kerr_branches(mono).unwrap().n_minus.is_none());
    }

    #[test]
    fn kerr_roots_solve_cubic() {
        for i in [0.5, 5.0, 10.0, 12.0, 20.0, 40.0] {
            let p = fig4(i);
            let b = kerr_branches(p).unwrap();
            for n in &b.roots {
                assert!(p.cubic(*n).abs() <= 1e-9 * i, "I={i} n={n}");
            }
        }
    }

    #[test]
    fn kerr_window_matches_root_count() {
        let (lo, hi) = fig4(0.0).bistable_window().unwrap();
        for k in 0..400 {
            let i = 0.1 * k as f64 + 0.05;
            let p = fig4(i);
            let roots = kerr_branches(p).unwrap().roots.len();
            let kappa = kerr_kappa1(p).unwrap();
            if i > lo && i < hi {
                assert_eq!(roots, 3, "I={i}");
                assert_eq!(kappa.len(), 2);
            } else {
                assert_eq!(roots, 1, "I={i}");
                assert_eq!(kappa.len(), 1);
            }
        }
        // High drive follows the upper branch.
        let k = kerr_kappa1(fig4(50.0)).unwrap();
        assert!(k[0] > 0.5 * fig4(0.0).stability_bounds().unwrap().1);
    }
}
