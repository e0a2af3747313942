//! Dense operator algebra on composite finite-dimensional Hilbert spaces.
//!
//! Basis conventions used everywhere in the crate:
//! - qubit sites: index 0 is `|↑⟩`, index 1 is `|↓⟩`, so `σ_z = diag(1, −1)` and
//!   `σ⁺ = (σ_x + iσ_y)/2` maps `|↓⟩ → |↑⟩`;
//! - boson sites: index `n` is the Fock state with `n` excitations;
//! - composite spaces are ordered like the Kronecker product, site 0 outermost.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use faer::c64;
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Local dimensions of the subsystems making up a composite space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpaceLayout {
    dims: Vec<usize>,
    total_dim: usize,
}

impl SpaceLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("layout needs at least one site".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidParameter(format!(
                "local dimension {d} < 2"
            )));
        }
        let total_dim = dims.iter().product();
        Ok(Self { dims, total_dim })
    }

    /// `n` qubit sites.
    pub fn qubits(n: usize) -> Self {
        Self::new(vec![2; n.max(1)]).expect("qubit layout is valid")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_sites(&self) -> usize {
        self.dims.len()
    }
}

/// A square complex matrix acting on the space described by its layout.
#[derive(Clone, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: Mat<c64>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator")
            .field("dims", &self.layout.dims)
            .field("matrix", &self.matrix)
            .finish()
    }
}

impl Operator {
    pub fn from_matrix(layout: SpaceLayout, matrix: Mat<c64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { layout, matrix })
    }

    /// Single-site operator from row-major real entries.
    pub fn local_real(dim: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), dim * dim);
        let layout = SpaceLayout::new(vec![dim]).expect("local dimension >= 2");
        let matrix = Mat::from_fn(dim, dim, |i, j| c64::new(entries[i * dim + j], 0.0));
        Self { layout, matrix }
    }

    pub fn from_fn(layout: SpaceLayout, f: impl FnMut(usize, usize) -> c64) -> Self {
        let n = layout.total_dim();
        Self { matrix: Mat::from_fn(n, n, f), layout }
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let n = layout.total_dim();
        Self { layout: layout.clone(), matrix: Mat::zeros(n, n) }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let n = layout.total_dim();
        Self { layout: layout.clone(), matrix: Mat::identity(n, n) }
    }

    /// `|ψ⟩⟨φ|`.
    pub fn outer(layout: &SpaceLayout, ket: &[c64], bra: &[c64]) -> Result<Self> {
        let n = layout.total_dim();
        if ket.len() != n || bra.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: ket.len().max(bra.len()) });
        }
        Ok(Self::from_fn(layout.clone(), |i, j| ket[i] * bra[j].conj()))
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn get(&self, row: usize, col: usize) -> c64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self { layout: self.layout.clone(), matrix: self.matrix.adjoint().to_owned() }
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).fold(c64::new(0.0, 0.0), |acc, i| acc + self.matrix[(i, i)])
    }

    pub fn scale(&self, factor: c64) -> Self {
        let matrix = Mat::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * factor);
        Self { layout: self.layout.clone(), matrix }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(c64::new(factor, 0.0))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.matrix.norm_l2()
    }

    /// Largest entrywise deviation from hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = self.matrix[(i, j)] - self.matrix[(j, i)].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `(X + X†)/2`.
    pub fn hermitian_part(&self) -> Self {
        let n = self.dim();
        let matrix = Mat::from_fn(n, n, |i, j| {
            (self.matrix[(i, j)] + self.matrix[(j, i)].conj()) * 0.5
        });
        Self { layout: self.layout.clone(), matrix }
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        self.hermitian_part()
            .matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .unwrap_or_else(|_| vec![f64::NAN; self.dim()])
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    fn check_same_layout(&self, other: &Self) {
        assert_eq!(
            self.layout, other.layout,
            "operator layouts differ: {:?} vs {:?}",
            self.layout.dims, other.layout.dims
        );
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.check_same_layout(rhs);
        Operator { layout: self.layout.clone(), matrix: &self.matrix * &rhs.matrix }
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.check_same_layout(rhs);
        Operator { layout: self.layout.clone(), matrix: &self.matrix + &rhs.matrix }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.check_same_layout(rhs);
        Operator { layout: self.layout.clone(), matrix: &self.matrix - &rhs.matrix }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

/// Kronecker product of one local factor per site, in layout order.
pub fn tensor(factors: &[Operator], layout: &SpaceLayout) -> Result<Operator> {
    if factors.len() != layout.num_sites() {
        return Err(Error::DimensionMismatch {
            expected: layout.num_sites(),
            found: factors.len(),
        });
    }
    for (f, &d) in factors.iter().zip(layout.dims()) {
        if f.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: f.dim() });
        }
    }
    let mut acc = factors[0].matrix.clone();
    for f in &factors[1..] {
        acc = acc.kron(&f.matrix);
    }
    Operator::from_matrix(layout.clone(), acc)
}

/// Embed a single-site operator at `site`, identities elsewhere.
pub fn embed(local: &Operator, site: usize, layout: &SpaceLayout) -> Result<Operator> {
    if site >= layout.num_sites() {
        return Err(Error::InvalidParameter(format!(
            "site {site} outside layout with {} sites",
            layout.num_sites()
        )));
    }
    let factors: Vec<Operator> = layout
        .dims()
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if k == site {
                local.clone()
            } else {
                Operator::identity(&SpaceLayout::new(vec![d]).expect("valid local dim"))
            }
        })
        .collect();
    tensor(&factors, layout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// 2×2 Pauli-family matrix in the `|↑⟩ = 0` convention.
pub fn local_pauli(axis: PauliAxis) -> Operator {
    let z = c64::new(0.0, 0.0);
    let one = c64::new(1.0, 0.0);
    let i = c64::new(0.0, 1.0);
    let entries = match axis {
        PauliAxis::X => [z, one, one, z],
        PauliAxis::Y => [z, -i, i, z],
        PauliAxis::Z => [one, z, z, -one],
        PauliAxis::Plus => [z, one, z, z],
        PauliAxis::Minus => [z, z, one, z],
    };
    let layout = SpaceLayout::qubits(1);
    Operator::from_fn(layout, |r, c| entries[2 * r + c])
}

pub fn pauli(axis: PauliAxis, site: usize, layout: &SpaceLayout) -> Result<Operator> {
    match layout.dims().get(site) {
        Some(2) => embed(&local_pauli(axis), site, layout),
        Some(&dim) => Err(Error::NonQubitSite { site, dim }),
        None => Err(Error::InvalidParameter(format!("site {site} outside layout"))),
    }
}

/// Truncated annihilation operator: `√n` on the first superdiagonal.
pub fn boson_annihilation(cutoff: usize) -> Result<Operator> {
    if cutoff < 2 {
        return Err(Error::InvalidParameter(format!("Fock cutoff {cutoff} < 2")));
    }
    let layout = SpaceLayout::new(vec![cutoff])?;
    Ok(Operator::from_fn(layout, |r, c| {
        if c == r + 1 {
            c64::new((c as f64).sqrt(), 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    }))
}

/// `Tr(obs · state)`; `state` need not have unit trace.
pub fn expectation(obs: &Operator, state: &Operator) -> Result<c64> {
    if obs.layout != state.layout {
        return Err(Error::DimensionMismatch { expected: obs.dim(), found: state.dim() });
    }
    let n = obs.dim();
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += obs.matrix[(i, k)] * state.matrix[(k, i)];
        }
    }
    Ok(acc)
}

pub const DENSITY_TRACE_TOL: f64 = 1e-10;
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
pub const DENSITY_POSITIVITY_TOL: f64 = 1e-9;

/// A validated density matrix: unit trace, Hermitian, numerically positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        let tr = op.trace();
        if (tr - c64::new(1.0, 0.0)).norm() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {:?} != 1", tr)));
        }
        let herr = op.hermiticity_error();
        if herr > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("hermiticity error {herr:e}")));
        }
        let min_eig = op.hermitian_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -DENSITY_POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self(op))
    }

    /// `|ψ⟩⟨ψ|` for a normalized `ψ`.
    pub fn pure(layout: &SpaceLayout, psi: &[c64]) -> Result<Self> {
        let norm_sqr: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > DENSITY_TRACE_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Self::new(Operator::outer(layout, psi, psi)?)
    }

    pub fn basis_state(layout: &SpaceLayout, index: usize) -> Result<Self> {
        let n = layout.total_dim();
        if index >= n {
            return Err(Error::InvalidParameter(format!("basis index {index} >= {n}")));
        }
        let mut psi = vec![c64::new(0.0, 0.0); n];
        psi[index] = c64::new(1.0, 0.0);
        Self::pure(layout, &psi)
    }

    /// Truncated thermal state with mean occupation `nbar` (renormalized after truncation).
    pub fn thermal(cutoff: usize, nbar: f64) -> Result<Self> {
        if nbar < 0.0 {
            return Err(Error::InvalidParameter(format!("nbar {nbar} < 0")));
        }
        let layout = SpaceLayout::new(vec![cutoff])?;
        let ratio = nbar / (1.0 + nbar);
        let weights: Vec<f64> = (0..cutoff).map(|k| ratio.powi(k as i32)).collect();
        let z: f64 = weights.iter().sum();
        let op = Operator::from_fn(layout, |r, c| {
            if r == c {
                c64::new(weights[r] / z, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        Self::new(op)
    }

    pub fn operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    pub fn layout(&self) -> &SpaceLayout {
        self.0.layout()
    }

    pub fn population(&self, index: usize) -> f64 {
        self.0.get(index, index).re
    }
}
