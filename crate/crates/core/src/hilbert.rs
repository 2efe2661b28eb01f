//! Dense complex linear algebra over small composite Hilbert spaces.
//!
//! Subsystem 0 is the slowest-varying tensor index. Qubits use |1⟩ as the
//! excited state, so `sigma_minus = |0⟩⟨1|` lowers and `σz|1⟩ = −|1⟩`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default cap on the total dimension of any composite space.
pub const DEFAULT_DIM_CAP: usize = 1 << 14;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const EIGEN_TOL: f64 = 1e-8;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    dims: Vec<usize>,
}

impl HilbertSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        Self::with_cap(dims, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(dims: Vec<usize>, cap: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("space needs at least one subsystem".into()));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::Dimension(format!("subsystem dimension {d} < 2")));
        }
        let mut total: usize = 1;
        for &d in &dims {
            total = total
                .checked_mul(d)
                .filter(|&t| t <= cap)
                .ok_or(Error::Capacity { dim: total.saturating_mul(d), cap })?;
        }
        Ok(Self { dims })
    }

    pub fn qubits(n: usize) -> Result<Self> {
        Self::new(vec![2; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Concatenate two subsystem lists under the default capacity.
    pub fn concat(&self, other: &HilbertSpace) -> Result<Self> {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self::new(dims)
    }

    /// Flat index of a multi-index (one digit per subsystem).
    pub fn index_of(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&x, &d)| acc * d + x)
    }

    pub fn digits_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.dims.len() {
            return Err(Error::Index { index, len: self.dims.len() });
        }
        Ok(())
    }
}

/// Kronecker composition in declared subsystem order.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Result<Self>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "operator is {}x{}, space dimension is {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    /// Operator on a single subsystem of dimension `matrix.nrows()`.
    pub fn local(matrix: CMatrix) -> Result<Self> {
        let space = HilbertSpace::new(vec![matrix.nrows()])?;
        Self::new(space, matrix)
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: CMatrix::identity(d, d) }
    }

    pub fn pauli_x() -> Self {
        Self::local(pauli_x()).expect("2x2")
    }

    pub fn pauli_y() -> Self {
        Self::local(pauli_y()).expect("2x2")
    }

    pub fn pauli_z() -> Self {
        Self::local(pauli_z()).expect("2x2")
    }

    /// Qubit lowering operator |0⟩⟨1|.
    pub fn sigma_minus() -> Self {
        Self::local(annihilation(2)).expect("2x2")
    }

    /// Truncated oscillator annihilation operator on `d` Fock levels.
    pub fn annihilation(d: usize) -> Result<Self> {
        Self::local(annihilation(d))
    }

    pub fn creation(d: usize) -> Result<Self> {
        Ok(Self::annihilation(d)?.adjoint())
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn compose(&self, rhs: &Operator) -> Result<Self> {
        self.same_space(rhs)?;
        Ok(Self { space: self.space.clone(), matrix: &self.matrix * &rhs.matrix })
    }

    pub fn add(&self, rhs: &Operator) -> Result<Self> {
        self.same_space(rhs)?;
        Ok(Self { space: self.space.clone(), matrix: &self.matrix + &rhs.matrix })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.map(|z| z * factor) }
    }

    pub fn apply(&self, psi: &StateVector) -> Result<CVector> {
        if psi.space != self.space {
            return Err(Error::Dimension("operator and state live on different spaces".into()));
        }
        Ok(&self.matrix * &psi.amplitudes)
    }

    /// ⟨ψ|A|ψ⟩.
    pub fn expectation(&self, psi: &StateVector) -> Result<C64> {
        let a = self.apply(psi)?;
        Ok(psi.amplitudes.dotc(&a))
    }

    fn same_space(&self, rhs: &Operator) -> Result<()> {
        if self.space != rhs.space {
            return Err(Error::Dimension(format!(
                "operator spaces differ: {:?} vs {:?}",
                self.space.dims, rhs.space.dims
            )));
        }
        Ok(())
    }
}

impl Tensor for Operator {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let space = self.space.concat(&other.space)?;
        Ok(Self { space, matrix: self.matrix.kronecker(&other.matrix) })
    }
}

/// Lift a single-subsystem operator into `space` at `subsystem`, acting as
/// identity elsewhere.
pub fn embed(op: &Operator, subsystem: usize, space: &HilbertSpace) -> Result<Operator> {
    space.check_index(subsystem)?;
    let d = space.dims[subsystem];
    if op.matrix.nrows() != d {
        return Err(Error::Dimension(format!(
            "operator dimension {} does not match subsystem {subsystem} (dim {d})",
            op.matrix.nrows()
        )));
    }
    let before: usize = space.dims[..subsystem].iter().product();
    let after: usize = space.dims[subsystem + 1..].iter().product();
    let m = CMatrix::identity(before, before)
        .kronecker(&op.matrix)
        .kronecker(&CMatrix::identity(after, after));
    Operator::new(space.clone(), m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: HilbertSpace,
    amplitudes: CVector,
}

impl StateVector {
    /// Normalizing constructor.
    pub fn new(space: HilbertSpace, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::Dimension(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        Ok(Self { space, amplitudes: amplitudes / C64::new(norm, 0.0) })
    }

    pub fn from_slice(space: HilbertSpace, amps: &[C64]) -> Result<Self> {
        Self::new(space, CVector::from_column_slice(amps))
    }

    /// Product basis state with one level index per subsystem.
    pub fn basis(space: &HilbertSpace, digits: &[usize]) -> Result<Self> {
        if digits.len() != space.num_subsystems() {
            return Err(Error::Dimension("one level per subsystem required".into()));
        }
        for (i, (&x, &d)) in digits.iter().zip(space.dims()).enumerate() {
            if x >= d {
                return Err(Error::param(format!("digits[{i}]"), format!("level {x} ≥ dim {d}")));
            }
        }
        let mut v = CVector::zeros(space.dim());
        v[space.index_of(digits)] = ONE;
        Ok(Self { space: space.clone(), amplitudes: v })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.space != other.space {
            return Err(Error::Dimension("states live on different spaces".into()));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix { space: self.space.clone(), matrix: m }
    }
}

impl Tensor for StateVector {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let space = self.space.concat(&other.space)?;
        Ok(Self { space, amplitudes: self.amplitudes.kronecker(&other.amplitudes) })
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validating constructor with the default tolerances.
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(space, matrix, EIGEN_TOL)
    }

    /// Validate with a looser tolerance on trace and spectrum, e.g. for
    /// integrator output. Hermiticity is checked at the same scale.
    pub fn with_tolerance(space: HilbertSpace, matrix: CMatrix, tol: f64) -> Result<Self> {
        let op = Operator::new(space, matrix)?;
        let herm_tol = HERMITIAN_TOL.max(tol * 1e-2);
        let trace_tol = TRACE_TOL.max(tol);
        check_density(&op.matrix, herm_tol, trace_tol, tol)?;
        Ok(Self { space: op.space, matrix: op.matrix })
    }

    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let d = space.dim();
        let m = CMatrix::identity(d, d).map(|z| z / d as f64);
        Self { space: space.clone(), matrix: m }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Probability of each computational basis state.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.space() != &self.space {
            return Err(Error::Dimension("operator and state live on different spaces".into()));
        }
        Ok((&self.matrix * op.matrix()).trace())
    }

    /// Conjugate by a unitary on the same space: UρU†.
    pub fn conjugate(&self, u: &CMatrix) -> Result<Self> {
        if u.nrows() != self.matrix.nrows() || u.ncols() != self.matrix.ncols() {
            return Err(Error::Dimension("unitary does not match state dimension".into()));
        }
        Ok(Self { space: self.space.clone(), matrix: u * &self.matrix * u.adjoint() })
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let space = self.space.concat(&other.space)?;
        Ok(Self { space, matrix: self.matrix.kronecker(&other.matrix) })
    }
}

fn check_density(m: &CMatrix, herm_tol: f64, trace_tol: f64, eig_tol: f64) -> Result<()> {
    let herm = (m - m.adjoint()).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    if herm > herm_tol {
        return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.3e})")));
    }
    let tr = m.trace();
    if (tr - ONE).norm() > trace_tol {
        return Err(Error::InvalidState(format!("trace {:.12} != 1", tr.re)));
    }
    let h = (m + m.adjoint()).map(|z| z * 0.5);
    let min = h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if min < -eig_tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// Reduced state on the subsystems listed in `keep` (output order follows
/// the original subsystem order).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let space = &rho.space;
    if keep.is_empty() {
        return Err(Error::Precondition("partial trace must keep at least one subsystem".into()));
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    for &k in &kept {
        space.check_index(k)?;
    }
    let traced: Vec<usize> = (0..space.num_subsystems()).filter(|i| !kept.contains(i)).collect();
    let out_space = HilbertSpace::new(kept.iter().map(|&k| space.dims[k]).collect())?;
    if traced.is_empty() {
        return Ok(DensityMatrix { space: out_space, matrix: rho.matrix.clone() });
    }
    let traced_space = HilbertSpace::new(traced.iter().map(|&k| space.dims[k]).collect())?;

    // Precompute full-space index contributions of kept and traced digits.
    let n = space.num_subsystems();
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * space.dims[i + 1];
    }
    let offset = |sub: &[usize], sp: &HilbertSpace, idx: usize| -> usize {
        sp.digits_of(idx).iter().zip(sub).map(|(&x, &s)| x * strides[s]).sum()
    };
    let kept_off: Vec<usize> = (0..out_space.dim()).map(|i| offset(&kept, &out_space, i)).collect();
    let traced_off: Vec<usize> =
        (0..traced_space.dim()).map(|i| offset(&traced, &traced_space, i)).collect();

    let d = out_space.dim();
    let mut out = CMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let mut acc = ZERO;
            for &t in &traced_off {
                acc += rho.matrix[(kept_off[r] + t, kept_off[c] + t)];
            }
            out[(r, c)] = acc;
        }
    }
    Ok(DensityMatrix { space: out_space, matrix: out })
}

/// ⟨ψ|ρ|ψ⟩, clipped into [0, 1] when within 1e-9 of the bounds.
pub fn fidelity_pure(rho: &DensityMatrix, psi: &StateVector) -> Result<f64> {
    if rho.space != psi.space {
        return Err(Error::Dimension("state and target live on different spaces".into()));
    }
    let v = psi.amplitudes.dotc(&(&rho.matrix * &psi.amplitudes)).re;
    Ok(clip_unit(v))
}

pub(crate) fn clip_unit(v: f64) -> f64 {
    if (-1e-9..0.0).contains(&v) {
        0.0
    } else if v > 1.0 && v <= 1.0 + 1e-9 {
        1.0
    } else {
        v
    }
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn annihilation(d: usize) -> CMatrix {
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Trace norm distance ½‖A − B‖₁ for Hermitian inputs.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    let h = (&diff + diff.adjoint()).map(|z| z * 0.5);
    0.5 * h.symmetric_eigenvalues().iter().map(|e| e.abs()).sum::<f64>()
}
