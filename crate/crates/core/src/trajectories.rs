//! Quantum-jump unraveling of a Lindblad model.
//!
//! Between jumps the unnormalized state follows `exp(-i H_eff t)` with
//! `H_eff = H - (i/2) Σ γ L†L`. Its squared norm decays monotonically and a
//! jump fires when it crosses a uniform random threshold. The crossing time is
//! found by safeguarded Newton iteration on the norm, so there is no time grid.

use faer::prelude::*;
use faer::{Mat, Side};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::hilbert::DensityMatrix;
use crate::linalg::{creal, czero};
use crate::liouville::LindbladModel;
use crate::{c64, Error, Result};

/// Accuracy of a located jump, in squared norm.
pub const NORM_TOL: f64 = 1e-10;

/// Smallest batch accepted by [`empirical_cumulants`].
pub const MIN_BATCH: usize = 100;

// Condition number above which the spectral propagator is not trusted.
const MAX_EIGVEC_COND: f64 = 1e8;

#[derive(Debug, Clone)]
pub enum InitialState {
    Pure(Vec<c64>),
    Mixed(DensityMatrix),
}

#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    /// Number of jumps recorded on every channel.
    pub counts: Vec<u64>,
    /// Normalized state at the horizon.
    pub state: Vec<c64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub counts: Vec<u64>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub model_tag: String,
    pub channel_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalCumulants {
    pub kappa1_hat: f64,
    pub kappa2_hat: f64,
    pub se1: f64,
    pub se2: f64,
}

enum Propagator {
    // ψ(τ) = V diag(exp(λτ)) V⁻¹ ψ(0)
    Spectral { v: Vec<c64>, v_inv: Vec<c64>, lambda: Vec<c64> },
    // Nearly defective H_eff: march with a fixed short-step exponential and
    // resolve inside one step by a Taylor series on the vector.
    Dense { generator: Vec<c64>, step: f64, step_prop: Vec<c64> },
}

/// Precomputed jump machinery for one model, shared by every trajectory.
pub struct JumpSampler {
    dim: usize,
    jumps: Vec<Vec<c64>>,
    rates: Vec<f64>,
    propagator: Propagator,
}

fn matvec(dim: usize, m: &[c64], x: &[c64], out: &mut [c64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * dim..(i + 1) * dim].iter().zip(x).fold(czero(), |acc, (a, b)| acc + a * b);
    }
}

fn norm_sqr(x: &[c64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

fn row_major(m: &Mat<c64>) -> Vec<c64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

// Longest Dense step, measured in units of ‖G‖.
const DENSE_STEP_NORM: f64 = 0.5;
const TAYLOR_TERMS: usize = 24;

// Taylor exponential of a matrix with ‖a‖ ≤ DENSE_STEP_NORM.
fn expm_small(a: &Mat<c64>) -> Mat<c64> {
    let n = a.nrows();
    let mut term = Mat::<c64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=TAYLOR_TERMS {
        term = &term * a * Scale(creal(1.0 / k as f64));
        sum += &term;
    }
    sum
}

// exp(τG) x for ‖τG‖ ≤ DENSE_STEP_NORM; also returns G exp(τG) x.
fn taylor_apply(dim: usize, g: &[c64], tau: f64, x: &[c64], out: &mut [c64], g_out: &mut [c64]) {
    out.copy_from_slice(x);
    let mut term = x.to_vec();
    let mut next = vec![czero(); dim];
    for k in 1..=TAYLOR_TERMS {
        matvec(dim, g, &term, &mut next);
        let scale = tau / k as f64;
        let mut size = 0.0;
        for (t, n) in term.iter_mut().zip(&next) {
            *t = n * scale;
            size += t.norm_sqr();
        }
        out.iter_mut().zip(&term).for_each(|(o, t)| *o += t);
        if size <= 1e-34 * norm_sqr(out) {
            break;
        }
    }
    matvec(dim, g, out, g_out);
}

impl JumpSampler {
    pub fn new(model: &LindbladModel) -> Result<Self> {
        let dim = model.dim();
        let mut h_eff = model.hamiltonian().matrix().clone();
        for ch in model.channels() {
            let l = ch.l_op().matrix();
            h_eff -= l.adjoint() * l * Scale(c64::new(0.0, 0.5 * ch.rate()));
        }
        let generator = &h_eff * Scale(c64::new(0.0, -1.0));
        let dense = |g: Mat<c64>| {
            let norm = g.norm_l2();
            let step = if norm > 0.0 { DENSE_STEP_NORM / norm } else { f64::INFINITY };
            let step_prop = if step.is_finite() {
                row_major(&expm_small(&(&g * Scale(creal(step)))))
            } else {
                row_major(&Mat::<c64>::identity(dim, dim))
            };
            Propagator::Dense { generator: row_major(&g), step, step_prop }
        };
        let propagator = match generator.eigen() {
            Ok(eig) => {
                let v = eig.U().to_owned();
                let lambda: Vec<c64> = (0..dim).map(|i| eig.S()[i]).collect();
                let v_inv = v.partial_piv_lu().solve(Mat::<c64>::identity(dim, dim));
                let cond = v.norm_l2() * v_inv.norm_l2();
                if cond.is_finite() && cond < MAX_EIGVEC_COND {
                    Propagator::Spectral { v: row_major(&v), v_inv: row_major(&v_inv), lambda }
                } else {
                    dense(generator)
                }
            }
            Err(_) => dense(generator),
        };
        Ok(Self {
            dim,
            jumps: model.channels().iter().map(|c| row_major(c.l_op().matrix())).collect(),
            rates: model.channels().iter().map(|c| c.rate()).collect(),
            propagator,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.rates.len()
    }

    /// Runs one trajectory from a normalized pure state.
    pub fn run(&self, psi0: &[c64], horizon: f64, rng: &mut impl Rng) -> Result<TrajectoryOutcome> {
        if psi0.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: psi0.len() });
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        let n0 = norm_sqr(psi0);
        if (n0 - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized { norm_sqr: n0 });
        }
        let mut counts = vec![0u64; self.rates.len()];
        let mut psi = psi0.to_vec();
        let mut t = 0.0;
        let mut scratch = vec![czero(); self.dim];
        loop {
            let threshold = 1.0 - rng.gen::<f64>();
            let mut segment = Segment::new(self, &psi);
            let remaining = horizon - t;
            match segment.bracket(threshold, remaining, &mut scratch) {
                None => {
                    let end = segment.state(remaining, &mut scratch);
                    let norm = end.sqrt();
                    if !(norm > 0.0) {
                        return Err(Error::NormUnderflow { time: horizon });
                    }
                    psi = scratch.iter().map(|z| z / norm).collect();
                    return Ok(TrajectoryOutcome { counts, state: psi });
                }
                Some((lo, hi)) => {
                    let tau = segment.crossing(threshold, lo, hi, &mut scratch);
                    t += tau;
                    segment.state(tau, &mut scratch);
                    let channel = self.pick_channel(&scratch, &mut psi, rng);
                    counts[channel] += 1;
                }
            }
        }
    }

    // Chooses a channel with weight γ‖Lψ‖² and leaves the normalized
    // post-jump state in `psi`.
    fn pick_channel(&self, pre: &[c64], psi: &mut [c64], rng: &mut impl Rng) -> usize {
        let mut weights = Vec::with_capacity(self.rates.len());
        for (l, &rate) in self.jumps.iter().zip(&self.rates) {
            matvec(self.dim, l, pre, psi);
            weights.push(rate * norm_sqr(psi));
        }
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = k;
                break;
            }
            u -= w;
        }
        while weights[chosen] == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        matvec(self.dim, &self.jumps[chosen], pre, psi);
        let norm = norm_sqr(psi).sqrt();
        psi.iter_mut().for_each(|z| *z /= norm);
        chosen
    }
}

// No-jump evolution from one post-jump state. On the Dense path the segment
// keeps a checkpoint (`base_time`, `base`) and only evaluates within one step
// of it.
struct Segment<'a> {
    sampler: &'a JumpSampler,
    coeffs: Vec<c64>,
    base_time: f64,
    base: Vec<c64>,
}

impl<'a> Segment<'a> {
    fn new(sampler: &'a JumpSampler, psi0: &[c64]) -> Self {
        let coeffs = match &sampler.propagator {
            Propagator::Spectral { v_inv, .. } => {
                let mut c = vec![czero(); sampler.dim];
                matvec(sampler.dim, v_inv, psi0, &mut c);
                c
            }
            Propagator::Dense { .. } => Vec::new(),
        };
        Self { sampler, coeffs, base_time: 0.0, base: psi0.to_vec() }
    }

    // Interval holding the threshold crossing, or None if the norm stays
    // above it until `upper`. Moves the Dense checkpoint to the interval start
    // (or to `upper`).
    fn bracket(&mut self, threshold: f64, upper: f64, scratch: &mut [c64]) -> Option<(f64, f64)> {
        let dim = self.sampler.dim;
        match &self.sampler.propagator {
            Propagator::Spectral { .. } => (self.state(upper, scratch) < threshold).then_some((0.0, upper)),
            Propagator::Dense { generator, step, step_prop } => {
                let mut slope = vec![czero(); dim];
                loop {
                    let next_time = (self.base_time + step).min(upper);
                    if next_time - self.base_time == *step {
                        matvec(dim, step_prop, &self.base, scratch);
                    } else {
                        taylor_apply(dim, generator, next_time - self.base_time, &self.base, scratch, &mut slope);
                    }
                    if norm_sqr(scratch) < threshold {
                        return Some((self.base_time, next_time));
                    }
                    self.base_time = next_time;
                    self.base.copy_from_slice(scratch);
                    if next_time >= upper {
                        return None;
                    }
                }
            }
        }
    }

    // Writes ψ(τ) into `out` and returns its squared norm.
    fn state(&self, tau: f64, out: &mut [c64]) -> f64 {
        self.norm_and_slope(tau, out).0
    }

    // Squared norm of ψ(τ) and its τ-derivative 2 Re⟨ψ|Gψ⟩, G = -i H_eff.
    fn norm_and_slope(&self, tau: f64, out: &mut [c64]) -> (f64, f64) {
        let dim = self.sampler.dim;
        let mut g_psi = vec![czero(); dim];
        match &self.sampler.propagator {
            Propagator::Spectral { v, lambda, .. } => {
                let e: Vec<c64> = lambda.iter().zip(&self.coeffs).map(|(l, c)| (l * tau).exp() * c).collect();
                matvec(dim, v, &e, out);
                let de: Vec<c64> = e.iter().zip(lambda).map(|(e, l)| e * l).collect();
                matvec(dim, v, &de, &mut g_psi);
            }
            Propagator::Dense { generator, .. } => {
                taylor_apply(dim, generator, tau - self.base_time, &self.base, out, &mut g_psi);
            }
        }
        let slope = 2.0 * out.iter().zip(&g_psi).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        (norm_sqr(out), slope)
    }

    // Time in [lo, hi] at which the squared norm falls to `threshold`.
    fn crossing(&self, threshold: f64, lo: f64, hi: f64, scratch: &mut [c64]) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        let mut tau = lo;
        let (mut norm, mut slope) = self.norm_and_slope(tau, scratch);
        for _ in 0..200 {
            let f = norm - threshold;
            if f.abs() <= NORM_TOL || hi - lo <= 1e-14 * (1.0 + hi) {
                break;
            }
            if f > 0.0 {
                lo = tau;
            } else {
                hi = tau;
            }
            let newton = tau - f / slope;
            tau = if slope < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            (norm, slope) = self.norm_and_slope(tau, scratch);
        }
        tau
    }
}

fn sample_pure(initial: &InitialState, rng: &mut impl Rng) -> Result<Vec<c64>> {
    match initial {
        InitialState::Pure(psi) => Ok(psi.clone()),
        InitialState::Mixed(rho) => {
            let eig = rho
                .operator()
                .matrix()
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::InvalidState(format!("{e:?}")))?;
            let dim = rho.operator().dim();
            let weights: Vec<f64> = (0..dim).map(|k| eig.S()[k].re.max(0.0)).collect();
            let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
            let mut k = dim - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    k = i;
                    break;
                }
                u -= w;
            }
            while weights[k] == 0.0 && k > 0 {
                k -= 1;
            }
            let col: Vec<c64> = (0..dim).map(|i| eig.U()[(i, k)]).collect();
            let norm = norm_sqr(&col).sqrt();
            Ok(col.into_iter().map(|z| z / norm).collect())
        }
    }
}

/// One seeded trajectory; identical seeds give identical outcomes.
pub fn simulate_jump_trajectory(
    model: &LindbladModel,
    initial: &InitialState,
    horizon: f64,
    seed: u64,
) -> Result<TrajectoryOutcome> {
    let sampler = JumpSampler::new(model)?;
    run_seeded(&sampler, initial, horizon, seed)
}

fn run_seeded(sampler: &JumpSampler, initial: &InitialState, horizon: f64, seed: u64) -> Result<TrajectoryOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi0 = sample_pure(initial, &mut rng)?;
    sampler.run(&psi0, horizon, &mut rng)
}

/// Per-trajectory seeds derived from one master seed.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Runs every seed in parallel and keeps the counts of one channel, in seed order.
pub fn run_batch(
    model: &LindbladModel,
    channel_index: usize,
    initial: &InitialState,
    horizon: f64,
    seeds: &[u64],
    model_tag: &str,
) -> Result<TrajectoryBatch> {
    model.channel(channel_index)?;
    let sampler = JumpSampler::new(model)?;
    let counts = seeds
        .par_iter()
        .map(|&seed| run_seeded(&sampler, initial, horizon, seed).map(|o| o.counts[channel_index]))
        .collect::<Result<Vec<u64>>>()?;
    Ok(TrajectoryBatch {
        counts,
        horizon,
        seeds: seeds.to_vec(),
        model_tag: model_tag.to_string(),
        channel_index,
    })
}

/// Full outcomes (all channel counts and final states), in seed order.
pub fn run_outcomes(
    model: &LindbladModel,
    initial: &InitialState,
    horizon: f64,
    seeds: &[u64],
) -> Result<Vec<TrajectoryOutcome>> {
    let sampler = JumpSampler::new(model)?;
    seeds.par_iter().map(|&seed| run_seeded(&sampler, initial, horizon, seed)).collect()
}

/// Mean and variance rates of the counts with leave-one-out jackknife errors.
pub fn empirical_cumulants(batch: &TrajectoryBatch) -> Result<EmpiricalCumulants> {
    let n = batch.counts.len();
    if n < MIN_BATCH {
        return Err(Error::UndersizedBatch { size: n, min: MIN_BATCH });
    }
    let t = batch.horizon;
    let nf = n as f64;
    let mean = batch.counts.iter().map(|&k| k as f64).sum::<f64>() / nf;
    let dev: Vec<f64> = batch.counts.iter().map(|&k| k as f64 - mean).collect();
    let s2: f64 = dev.iter().map(|d| d * d).sum();
    let var = s2 / (nf - 1.0);

    // Leave-one-out estimates from the centered sums.
    let m = nf - 1.0;
    let loo_mean: Vec<f64> = dev.iter().map(|d| mean - d / m).collect();
    let loo_var: Vec<f64> = dev.iter().map(|d| (s2 - d * d - d * d / m) / (m - 1.0)).collect();
    let jackknife = |xs: &[f64]| {
        let avg = xs.iter().sum::<f64>() / nf;
        (m / nf * xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>()).sqrt()
    };
    Ok(EmpiricalCumulants {
        kappa1_hat: mean / t,
        kappa2_hat: var / t,
        se1: jackknife(&loo_mean) / t,
        se2: jackknife(&loo_var) / t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{local_pauli, Operator, PauliAxis, SpaceLayout};
    use crate::liouville::Channel;
    use rand_distr::{Distribution, Poisson};

    fn decaying_qubit(gamma: f64) -> LindbladModel {
        let layout = SpaceLayout::qubits(1);
        let lower = local_pauli(PauliAxis::Minus);
        LindbladModel::new(Operator::zeros(&layout), vec![Channel::new(lower, gamma).unwrap()]).unwrap()
    }

    fn ket(v: &[f64]) -> Vec<c64> {
        v.iter().map(|&x| creal(x)).collect()
    }

    #[test]
    fn dark_state_never_jumps() {
        let m = decaying_qubit(1.0);
        for seed in 0..20 {
            let out = simulate_jump_trajectory(&m, &InitialState::Pure(ket(&[0.0, 1.0])), 50.0, seed).unwrap();
            assert_eq!(out.counts, vec![0]);
        }
    }

    #[test]
    fn excited_qubit_emits_once() {
        let m = decaying_qubit(1.0);
        for seed in 0..50 {
            let out = simulate_jump_trajectory(&m, &InitialState::Pure(ket(&[1.0, 0.0])), 80.0, seed).unwrap();
            assert_eq!(out.counts, vec![1]);
            assert!((out.state[1].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_times_are_exponential() {
        // Survival to t=1 has probability e^{-γ}.
        let m = decaying_qubit(1.0);
        let seeds = derive_seeds(7, 4000);
        let outs = run_outcomes(&m, &InitialState::Pure(ket(&[1.0, 0.0])), 1.0, &seeds).unwrap();
        let survived = outs.iter().filter(|o| o.counts[0] == 0).count() as f64 / 4000.0;
        let p = (-1.0f64).exp();
        let se = (p * (1.0 - p) / 4000.0).sqrt();
        assert!((survived - p).abs() < 4.0 * se, "{survived} vs {p}");
    }

    #[test]
    fn rejects_unnormalized_state() {
        let m = decaying_qubit(1.0);
        let r = simulate_jump_trajectory(&m, &InitialState::Pure(ket(&[1.0, 1.0])), 1.0, 0);
        assert!(matches!(r, Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn defective_generator_uses_dense_path() {
        // H_eff = [[-iγ/2, ω],[ω, 0]] is defective at ω = γ/4.
        let layout = SpaceLayout::qubits(1);
        let h = Operator::local_real(2, &[0.0, 0.25, 0.25, 0.0]);
        let m = LindbladModel::new(h, vec![Channel::new(local_pauli(PauliAxis::Minus), 1.0).unwrap()]).unwrap();
        assert_eq!(m.layout(), &layout);
        let seeds = derive_seeds(3, 200);
        let a = run_batch(&m, 0, &InitialState::Pure(ket(&[1.0, 0.0])), 5.0, &seeds, "qubit").unwrap();
        let b = run_batch(&m, 0, &InitialState::Pure(ket(&[1.0, 0.0])), 5.0, &seeds, "qubit").unwrap();
        assert_eq!(a, b);
        assert!(a.counts.iter().any(|&k| k > 0));
    }

    #[test]
    fn equal_counts_have_zero_variance() {
        let batch = TrajectoryBatch {
            counts: vec![5; 200],
            horizon: 2.0,
            seeds: (0..200).collect(),
            model_tag: "flat".into(),
            channel_index: 0,
        };
        let e = empirical_cumulants(&batch).unwrap();
        assert_eq!(e.kappa1_hat, 2.5);
        assert_eq!(e.kappa2_hat, 0.0);
    }

    #[test]
    fn undersized_batch_rejected() {
        let batch = TrajectoryBatch {
            counts: vec![1; 10],
            horizon: 1.0,
            seeds: (0..10).collect(),
            model_tag: String::new(),
            channel_index: 0,
        };
        assert!(matches!(empirical_cumulants(&batch), Err(Error::UndersizedBatch { .. })));
    }

    #[test]
    fn poisson_counts_have_equal_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (rate, t) = (3.0, 10.0);
        let dist = Poisson::new(rate * t).unwrap();
        let counts: Vec<u64> = (0..5000).map(|_| dist.sample(&mut rng) as u64).collect();
        let batch = TrajectoryBatch {
            seeds: (0..counts.len() as u64).collect(),
            counts,
            horizon: t,
            model_tag: "poisson".into(),
            channel_index: 0,
        };
        let e = empirical_cumulants(&batch).unwrap();
        assert!(e.se1 > 0.0 && e.se2 > 0.0);
        assert!((e.kappa1_hat - rate).abs() < 3.0 * e.se1, "{e:?}");
        assert!((e.kappa2_hat - rate).abs() < 3.0 * e.se2, "{e:?}");
        // Jackknife of the mean is the usual standard error.
        let sd = (e.kappa2_hat * t).sqrt();
        assert!((e.se1 * t - sd / (5000f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mixed_state_samples_populations() {
        let m = decaying_qubit(1.0);
        let layout = SpaceLayout::qubits(1);
        let rho = DensityMatrix::new(Operator::local_real(2, &[0.3, 0.0, 0.0, 0.7])).unwrap();
        assert_eq!(rho.layout(), &layout);
        let seeds = derive_seeds(5, 3000);
        let b = run_batch(&m, 0, &InitialState::Mixed(rho), 60.0, &seeds, "qubit").unwrap();
        let frac = b.counts.iter().sum::<u64>() as f64 / 3000.0;
        assert!((frac - 0.3).abs() < 4.0 * (0.21f64 / 3000.0).sqrt(), "{frac}");
    }
}
