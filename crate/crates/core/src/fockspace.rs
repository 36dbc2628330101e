//! Truncated Fock-space operators and the static Kerr-cat Hamiltonian.
//!
//! Everything lives in the number basis `|0>, ..., |N-1>` as dense complex
//! matrices. The effective Hamiltonian
//!
//! ```text
//! H = Δ a†a − K a†² a² + ε₂ (a†² + a²)
//! ```
//!
//! is unbounded below in `n`, so its cat manifold sits at the *top* of the
//! spectrum. [`Spectrum`] therefore orders eigenpairs from the largest
//! eigenvalue down: index 0 is the bottom of the metapotential wells.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-9;

/// Dense operator on the truncated Fock space.
#[derive(Clone, Debug)]
pub struct FockOperator {
    matrix: DMatrix<C64>,
    hermitian: bool,
    unitary: bool,
}

impl FockOperator {
    /// Wraps a matrix without asserting any structure.
    pub fn general(matrix: DMatrix<C64>) -> Self {
        assert!(matrix.is_square(), "Fock operators are square");
        Self { matrix, hermitian: false, unitary: false }
    }

    pub fn hermitian(matrix: DMatrix<C64>) -> Result<Self> {
        let op = Self::general(matrix);
        let defect = op.hermiticity_defect();
        if defect >= HERMITIAN_TOL * op.scale().max(1.0) {
            return Err(Error::Contract(format!("operator is not Hermitian (defect {defect:.3e})")));
        }
        Ok(Self { hermitian: true, ..op })
    }

    pub fn unitary(matrix: DMatrix<C64>) -> Result<Self> {
        let op = Self::general(matrix);
        let defect = op.unitarity_defect();
        if defect >= UNITARY_TOL {
            return Err(Error::Contract(format!("operator is not unitary (defect {defect:.3e})")));
        }
        Ok(Self { unitary: true, ..op })
    }

    /// Marks an operator unitary without the `1e-9` check. Used by the
    /// propagator, which enforces its own quality threshold.
    pub(crate) fn assume_unitary(matrix: DMatrix<C64>) -> Self {
        Self { matrix, hermitian: false, unitary: true }
    }

    pub(crate) fn assume_hermitian(matrix: DMatrix<C64>) -> Self {
        Self { matrix, hermitian: true, unitary: false }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim), hermitian: true, unitary: true }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    /// Largest entry magnitude.
    pub fn scale(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `max |M - M†|` entrywise.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `max |M†M - I|` entrywise.
    pub fn unitarity_defect(&self) -> f64 {
        let gram = self.matrix.adjoint() * &self.matrix;
        max_identity_defect(&gram)
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint(), ..self.clone() }
    }

    pub fn compose(&self, rhs: &FockOperator) -> FockOperator {
        let matrix = &self.matrix * &rhs.matrix;
        FockOperator { matrix, hermitian: false, unitary: self.unitary && rhs.unitary }
    }

    pub fn apply(&self, psi: &StateVector) -> DVector<C64> {
        &self.matrix * psi.amplitudes()
    }

    /// `max |[A, B]|` entrywise.
    pub fn commutator_defect(&self, other: &FockOperator) -> f64 {
        let c = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        c.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Row-major little-endian `(re, im)` f64 pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                let z = self.matrix[(i, j)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8], dim: usize) -> Result<DMatrix<C64>> {
        if bytes.len() != dim * dim * 16 {
            return Err(Error::Contract(format!(
                "binary operator has {} bytes, expected {}",
                bytes.len(),
                dim * dim * 16
            )));
        }
        let mut m = DMatrix::zeros(dim, dim);
        for (k, chunk) in bytes.chunks_exact(16).enumerate() {
            let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
            m[(k / dim, k % dim)] = C64::new(re, im);
        }
        Ok(m)
    }
}

pub(crate) fn max_identity_defect(m: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for ((i, j), z) in m.iter().enumerate().map(|(k, z)| ((k % m.nrows(), k / m.nrows()), z)) {
        let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        worst = worst.max((z - target).norm());
    }
    worst
}

/// Normalized state in the number basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: DVector<C64>,
}

impl StateVector {
    /// Normalizes `amplitudes`; a zero vector is a contract violation.
    pub fn new(mut amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Contract("cannot normalize a zero or non-finite state".into()));
        }
        amplitudes /= C64::new(norm, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn basis(n: usize, dim: usize) -> Self {
        let mut amplitudes = DVector::zeros(dim);
        amplitudes[n] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// `|<self|other>|²`.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn expectation(&self, op: &FockOperator) -> C64 {
        self.amplitudes.dotc(&op.apply(self))
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amplitudes.iter().enumerate().map(|(n, z)| n as f64 * z.norm_sqr()).sum()
    }

    /// Applies a unitary, renormalizing to absorb truncation round-off.
    pub fn evolve(&self, u: &FockOperator) -> Result<Self> {
        Self::new(u.apply(self))
    }
}

/// Parameters of the static effective Hamiltonian, all in one angular-frequency unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub kerr: f64,
    pub eps2: f64,
    pub delta: f64,
}

impl EffectiveParams {
    pub fn new(kerr: f64, eps2: f64, delta: f64) -> Result<Self> {
        if !(kerr > 0.0) {
            return Err(Error::Contract(format!("Kerr coefficient must be positive, got {kerr}")));
        }
        Ok(Self { kerr, eps2, delta })
    }

    /// Builds parameters from the ratios `ε₂/K` and `Δ/K`.
    pub fn from_ratios(kerr: f64, eps2_over_k: f64, delta_over_k: f64) -> Result<Self> {
        Self::new(kerr, eps2_over_k * kerr, delta_over_k * kerr)
    }

    pub fn in_double_well(&self) -> bool {
        -2.0 * self.eps2 < self.delta && self.delta < 2.0 * self.eps2
    }

    pub fn require_double_well(&self) -> Result<()> {
        if self.in_double_well() {
            Ok(())
        } else {
            Err(Error::Regime(format!(
                "need -2ε₂ < Δ < 2ε₂, got ε₂ = {}, Δ = {}",
                self.eps2, self.delta
            )))
        }
    }

    /// Coherent amplitude of the well centres, `|α|² = (Δ + 2ε₂) / 2K`.
    pub fn well_amplitude(&self) -> f64 {
        ((self.delta + 2.0 * self.eps2) / (2.0 * self.kerr)).max(0.0).sqrt()
    }
}

/// Eigenpairs of a Hermitian operator ordered from the top of the spectrum down.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    pub states: Vec<StateVector>,
    pub parities: Vec<i8>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, StateVector::dim)
    }

    /// `|E₁ − E₀|`.
    pub fn ground_splitting(&self) -> f64 {
        (self.energies[1] - self.energies[0]).abs()
    }

    /// Keeps the first `n` eigenpairs.
    pub fn truncated(&self, n: usize) -> Spectrum {
        let n = n.min(self.len());
        Spectrum {
            energies: self.energies[..n].to_vec(),
            states: self.states[..n].to_vec(),
            parities: self.parities[..n].to_vec(),
        }
    }

    /// Maps every state through `u` (e.g. into the lab frame).
    pub fn transformed(&self, u: &FockOperator) -> Result<Spectrum> {
        let states = self.states.iter().map(|s| s.evolve(u)).collect::<Result<Vec<_>>>()?;
        Ok(Spectrum { energies: self.energies.clone(), states, parities: self.parities.clone() })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,energy,parity")?;
        for (k, (e, p)) in self.energies.iter().zip(&self.parities).enumerate() {
            writeln!(w, "{k},{},{p}", fmt_f64(*e))?;
        }
        Ok(())
    }
}

fn check_dim(dim: usize, min: usize) -> Result<()> {
    if dim < min {
        Err(Error::InvalidDimension { dim, min })
    } else {
        Ok(())
    }
}

pub fn annihilation(dim: usize) -> Result<FockOperator> {
    check_dim(dim, 2)?;
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(FockOperator::general(m))
}

pub fn creation(dim: usize) -> Result<FockOperator> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number_operator(dim: usize) -> Result<FockOperator> {
    check_dim(dim, 1)?;
    let m = DMatrix::from_fn(dim, dim, |i, j| if i == j { C64::new(i as f64, 0.0) } else { C64::new(0.0, 0.0) });
    Ok(FockOperator::assume_hermitian(m))
}

/// `e^{iπ a†a}`.
pub fn parity_operator(dim: usize) -> Result<FockOperator> {
    check_dim(dim, 1)?;
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        if i != j {
            C64::new(0.0, 0.0)
        } else if i % 2 == 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(-1.0, 0.0)
        }
    });
    Ok(FockOperator { matrix: m, hermitian: true, unitary: true })
}

/// `e^{iθ a†a}`.
pub fn phase_rotation(theta: f64, dim: usize) -> Result<FockOperator> {
    check_dim(dim, 1)?;
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            C64::from_polar(1.0, theta * i as f64)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(FockOperator { matrix: m, hermitian: false, unitary: true })
}

/// `exp(β a† − β* a)` built from the truncated generator.
pub fn displacement(beta: C64, dim: usize) -> Result<FockOperator> {
    check_dim(dim, 2)?;
    if beta == C64::new(0.0, 0.0) {
        return Ok(FockOperator::identity(dim));
    }
    let a = annihilation(dim)?;
    let ad = a.matrix.adjoint();
    // G = i(β a† − β* a) is Hermitian and D = exp(−iG).
    let i = C64::new(0.0, 1.0);
    let g = (&ad * (i * beta)) - (&a.matrix * (i * beta.conj()));
    let eig = SymmetricEigen::new(g);
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -l)));
    let m = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    Ok(FockOperator { matrix: m, hermitian: false, unitary: true })
}

/// Matrix entries of `Δ a†a − K a†²a² + ε₂(a†² + a²)`, assembled band by band.
pub fn build_effective_hamiltonian(p: &EffectiveParams, dim: usize) -> Result<FockOperator> {
    check_dim(dim, 4)?;
    let mut m = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let nf = n as f64;
        m[(n, n)] = C64::new(p.delta * nf - p.kerr * nf * (nf - 1.0), 0.0);
        if n + 2 < dim {
            let v = p.eps2 * ((nf + 1.0) * (nf + 2.0)).sqrt();
            m[(n, n + 2)] = C64::new(v, 0.0);
            m[(n + 2, n)] = C64::new(v, 0.0);
        }
    }
    Ok(FockOperator::assume_hermitian(m))
}

/// Coherent state `|α>` truncated to `dim` levels and renormalized.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<StateVector> {
    check_dim(dim, 1)?;
    let r = alpha.norm();
    let needed = r * r + 6.0 * r;
    if needed >= dim as f64 {
        return Err(Error::Truncation { alpha: r, dim, suggested: needed.floor() as usize + 1 });
    }
    let mut amps = DVector::zeros(dim);
    let mut c = C64::new((-0.5 * r * r).exp(), 0.0);
    amps[0] = c;
    for n in 1..dim {
        c *= alpha / (n as f64).sqrt();
        amps[n] = c;
    }
    StateVector::new(amps)
}

/// Full Hermitian diagonalization, ordered from the largest eigenvalue down.
///
/// Operators that commute with parity are diagonalized block by block, which
/// makes parity labels exact and keeps quasi-degenerate pairs cleanly
/// separated. Exactly degenerate pairs are ordered with parity +1 first.
pub fn eigendecompose(h: &FockOperator) -> Result<Spectrum> {
    if !h.is_hermitian() {
        return Err(Error::Contract("eigendecompose requires a Hermitian operator".into()));
    }
    let dim = h.dim();
    let parity = parity_operator(dim)?;
    let scale = h.scale().max(f64::MIN_POSITIVE);
    let parity_symmetric = h.commutator_defect(&parity) <= 1e-13 * scale;
    let real = h.matrix.iter().all(|z| z.im == 0.0);

    let mut pairs: Vec<(f64, DVector<C64>, i8)> = Vec::with_capacity(dim);
    if parity_symmetric {
        for (label, offset) in [(1i8, 0usize), (-1i8, 1usize)] {
            let idx: Vec<usize> = (offset..dim).step_by(2).collect();
            if idx.is_empty() {
                continue;
            }
            let block = DMatrix::from_fn(idx.len(), idx.len(), |i, j| h.matrix[(idx[i], idx[j])]);
            for (e, v) in hermitian_eigenpairs(block, real) {
                let mut full = DVector::zeros(dim);
                for (k, &n) in idx.iter().enumerate() {
                    full[n] = v[k];
                }
                pairs.push((e, full, label));
            }
        }
    } else {
        for (e, v) in hermitian_eigenpairs(h.matrix.clone(), real) {
            let p = v.dotc(&(&parity.matrix * &v)).re;
            pairs.push((e, v, if p >= 0.0 { 1 } else { -1 }));
        }
    }

    let tie = 64.0 * f64::EPSILON * pairs.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for k in 1..pairs.len() {
        if (pairs[k - 1].0 - pairs[k].0).abs() <= tie && pairs[k - 1].2 < pairs[k].2 {
            pairs.swap(k - 1, k);
        }
    }

    let mut spectrum = Spectrum { energies: Vec::with_capacity(dim), states: Vec::with_capacity(dim), parities: Vec::with_capacity(dim) };
    for (e, v, p) in pairs {
        spectrum.energies.push(e);
        spectrum.states.push(StateVector::new(fix_phase(v))?);
        spectrum.parities.push(p);
    }
    Ok(spectrum)
}

fn hermitian_eigenpairs(block: DMatrix<C64>, real: bool) -> Vec<(f64, DVector<C64>)> {
    if real {
        let eig = SymmetricEigen::new(block.map(|z| z.re));
        (0..eig.eigenvalues.len())
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).map(|x| C64::new(x, 0.0))))
            .collect()
    } else {
        let eig = SymmetricEigen::new(block);
        (0..eig.eigenvalues.len()).map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())).collect()
    }
}

/// Rotates the global phase so the largest-magnitude amplitude is real positive.
pub(crate) fn fix_phase(mut v: DVector<C64>) -> DVector<C64> {
    let (mut best, mut idx) = (0.0, 0);
    for (k, z) in v.iter().enumerate() {
        if z.norm() > best {
            best = z.norm();
            idx = k;
        }
    }
    if best > 0.0 {
        let phase = v[idx] / best;
        v /= phase;
    }
    v
}

/// Number of states to keep in wells of parameters `p` (photon-number bound).
pub fn minimal_dim(p: &EffectiveParams) -> usize {
    (4.0 * (p.eps2 + p.delta / 2.0) / p.kerr).ceil() as usize
}
