//! Driven lab-frame oscillator, its two-period propagator and Floquet spectrum.
//!
//! The lab Hamiltonian is
//!
//! ```text
//! H(t) = ω₀ a†a + g₃ x³ + g₄ x⁴ − iΩ_d (a − a†) cos(ω_d t),   x = a + a†
//! ```
//!
//! Propagation runs in the frame rotating at `ω_d/2`, where the fast free
//! phases are removed analytically and `H` becomes a 9-band matrix applied
//! to all `N` columns of `U` at once. Since `e^{−iπ a†a}` is the parity
//! operator, the lab propagator over one drive period is `W = P·U_rot(T)` and
//! the period-doubled map is `U(τ) = W²`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fockspace::{annihilation, fix_phase, FockOperator, Spectrum, StateVector};
use crate::ode::{self, ErrorNorm, IntegratorKind, IntegratorOptions, IntegratorStats};

pub mod calibrate;

pub use calibrate::{calibrate_drive, Calibration, CalibrationOptions, LabFrame};

/// Defect above which a propagator is rejected.
pub const QUALITY_LIMIT: f64 = 1e-6;

const BANDS: usize = 4;

/// Parameters of the lab-frame driven oscillator.
///
/// `g3` and `g4` multiply `(a + a†)³` and `(a + a†)⁴` literally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub omega0: f64,
    pub omegad: f64,
    #[serde(rename = "Omegad")]
    pub drive: f64,
    pub g3: f64,
    pub g4: f64,
}

impl DriveParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega0, self.omegad, self.drive, self.g3, self.g4];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite drive parameters {self:?}")));
        }
        if !(self.omegad > 0.0) {
            return Err(Error::Contract(format!("drive frequency must be positive, got {}", self.omegad)));
        }
        Ok(())
    }

    /// Drive period `T = 2π/ω_d`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omegad
    }

    /// Stroboscopic period `τ = 2T`.
    pub fn tau(&self) -> f64 {
        4.0 * PI / self.omegad
    }

    /// SHA-256 over the little-endian parameter bytes and the dimension.
    pub fn hash(&self, dim: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in [self.omega0, self.omegad, self.drive, self.g3, self.g4] {
            h.update(v.to_le_bytes());
        }
        h.update((dim as u64).to_le_bytes());
        h.finalize().into()
    }
}

/// Dense `x = a + a†` raised to `m` in the truncated space.
fn quadrature_power(dim: usize, m: u32) -> Result<DMatrix<C64>> {
    let a = annihilation(dim)?;
    let x = a.matrix() + a.matrix().adjoint();
    let mut out = DMatrix::identity(dim, dim);
    for _ in 0..m {
        out = &out * &x;
    }
    Ok(out)
}

fn static_part(d: &DriveParams, dim: usize) -> Result<DMatrix<C64>> {
    let mut h = quadrature_power(dim, 3)? * C64::new(d.g3, 0.0) + quadrature_power(dim, 4)? * C64::new(d.g4, 0.0);
    for n in 0..dim {
        h[(n, n)] += C64::new(d.omega0 * n as f64, 0.0);
    }
    Ok(h)
}

fn drive_operator(d: &DriveParams, dim: usize) -> Result<DMatrix<C64>> {
    let a = annihilation(dim)?;
    let diff = a.matrix() - a.matrix().adjoint();
    Ok(diff * C64::new(0.0, -d.drive))
}

/// Dense `H(t)` in the number basis.
pub fn lab_hamiltonian(t: f64, d: &DriveParams, dim: usize) -> Result<FockOperator> {
    d.validate()?;
    let h = static_part(d, dim)? + drive_operator(d, dim)? * C64::new((d.omegad * t).cos(), 0.0);
    FockOperator::hermitian(h)
}

/// Right-hand side `dU/dt = −i H U` for a column-major batch of states,
/// possibly expressed in a frame rotating at [`frame_frequency`](Self::frame_frequency).
pub trait Generator: Sync {
    fn dim(&self) -> usize;

    /// `ω_f` such that `U_lab(t) = e^{−iω_f a†a t} U_frame(t)`.
    fn frame_frequency(&self) -> f64;

    fn apply(&self, t: f64, y: &[C64], out: &mut [C64]);
}

/// The lab Hamiltonian in the frame rotating at `ω_d/2`, stored by band.
///
/// Band `k` holds `H[m, m − k]` at position `m`.
pub struct RotatingLabGenerator {
    dim: usize,
    omegad: f64,
    frame: f64,
    stat: Vec<Vec<C64>>,
    drive: Vec<Vec<C64>>,
}

impl RotatingLabGenerator {
    pub fn new(d: &DriveParams, dim: usize) -> Result<Self> {
        d.validate()?;
        let s = static_part(d, dim)?;
        let v = drive_operator(d, dim)?;
        let frame = 0.5 * d.omegad;
        let band = |m: &DMatrix<C64>, k: isize| -> Vec<C64> {
            (0..dim)
                .map(|row| {
                    let col = row as isize - k;
                    if col < 0 || col >= dim as isize {
                        C64::new(0.0, 0.0)
                    } else {
                        m[(row, col as usize)]
                    }
                })
                .collect()
        };
        let offsets = -(BANDS as isize)..=(BANDS as isize);
        let mut stat: Vec<Vec<C64>> = offsets.clone().map(|k| band(&s, k)).collect();
        for (n, z) in stat[BANDS].iter_mut().enumerate() {
            *z -= C64::new(frame * n as f64, 0.0);
        }
        let drive = offsets.map(|k| band(&v, k)).collect();
        Ok(Self { dim, omegad: d.omegad, frame, stat, drive })
    }

    /// `−i H_rot(t)` by band.
    fn bands_at(&self, t: f64) -> Vec<Vec<C64>> {
        let c = (self.omegad * t).cos();
        let mi = C64::new(0.0, -1.0);
        (0..=2 * BANDS)
            .map(|b| {
                let k = b as f64 - BANDS as f64;
                let phase = mi * C64::from_polar(1.0, self.frame * k * t);
                self.stat[b].iter().zip(&self.drive[b]).map(|(s, v)| phase * (s + v * c)).collect()
            })
            .collect()
    }
}

impl Generator for RotatingLabGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn frame_frequency(&self) -> f64 {
        self.frame
    }

    fn apply(&self, t: f64, y: &[C64], out: &mut [C64]) {
        let n = self.dim;
        let h = self.bands_at(t);
        out.par_chunks_mut(n * 8).zip(y.par_chunks(n * 8)).for_each(|(oc, yc)| {
            for (o, col) in oc.chunks_mut(n).zip(yc.chunks(n)) {
                o.fill(C64::new(0.0, 0.0));
                for (b, hb) in h.iter().enumerate() {
                    let k = b as isize - BANDS as isize;
                    let (lo, hi) = if k >= 0 { (k as usize, n) } else { (0, (n as isize + k) as usize) };
                    for m in lo..hi {
                        o[m] += hb[m] * col[(m as isize - k) as usize];
                    }
                }
            }
        });
    }
}

/// A time-independent Hamiltonian in the lab frame.
pub struct StaticGenerator {
    minus_i_h: DMatrix<C64>,
}

impl StaticGenerator {
    pub fn new(h: &FockOperator) -> Result<Self> {
        if !h.is_hermitian() {
            return Err(Error::Contract("static generator requires a Hermitian operator".into()));
        }
        Ok(Self { minus_i_h: h.matrix() * C64::new(0.0, -1.0) })
    }
}

impl Generator for StaticGenerator {
    fn dim(&self) -> usize {
        self.minus_i_h.nrows()
    }

    fn frame_frequency(&self) -> f64 {
        0.0
    }

    fn apply(&self, _t: f64, y: &[C64], out: &mut [C64]) {
        let n = self.dim();
        let ym = nalgebra::DMatrixView::from_slice(y, n, n);
        let mut om = nalgebra::DMatrixViewMut::from_slice(out, n, n);
        om.gemm(C64::new(1.0, 0.0), &self.minus_i_h, &ym, C64::new(0.0, 0.0));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Unbounded when infinite (`null` in JSON).
    #[serde(with = "unbounded")]
    pub max_step: f64,
    pub integrator_kind: IntegratorKind,
    pub error_norm: ErrorNorm,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() { s.serialize_some(v) } else { s.serialize_none() }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            integrator_kind: IntegratorKind::AdaptiveRungeKutta,
            error_norm: ErrorNorm::Max,
        }
    }
}

impl PropagatorOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-6) {
                return Err(Error::Contract(format!("{name} must lie in (0, 1e-6], got {v}")));
            }
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Contract(format!("max_step must be positive, got {}", self.max_step)));
        }
        Ok(())
    }

    fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions { rel_tol: self.rel_tol, abs_tol: self.abs_tol, max_step: self.max_step, norm: self.error_norm, ..Default::default() }
    }
}

/// Lab-frame propagator `U(t1, t0)` of a generator.
pub fn propagate(gen: &dyn Generator, t0: f64, t1: f64, opts: &PropagatorOptions) -> Result<(DMatrix<C64>, IntegratorStats)> {
    opts.validate()?;
    let n = gen.dim();
    let mut y = DMatrix::<C64>::identity(n, n);
    let sys = |t: f64, y: &[C64], d: &mut [C64]| gen.apply(t, y, d);
    let stats = ode::integrate(opts.integrator_kind, &sys, t0, t1, y.as_mut_slice(), &opts.integrator())
        .map_err(|e| Error::Propagation(e.to_string()))?;
    let w = gen.frame_frequency();
    if w != 0.0 {
        for j in 0..n {
            for i in 0..n {
                let phase = C64::from_polar(1.0, -w * (i as f64 * t1 - j as f64 * t0));
                y[(i, j)] *= phase;
            }
        }
    }
    Ok((y, stats))
}

/// Result of [`propagate_period`].
#[derive(Clone, Debug)]
pub struct Propagation {
    /// One-drive-period map `W = U(T)`.
    pub half: FockOperator,
    /// Stroboscopic map `U(τ) = W²`.
    pub full: FockOperator,
    pub tau: f64,
    /// `max |U(τ)†U(τ) − I|`.
    pub unitarity_defect: f64,
    pub stats: IntegratorStats,
}

/// Integrates the lab Hamiltonian over one drive period and squares.
pub fn propagate_period(d: &DriveParams, dim: usize, opts: &PropagatorOptions) -> Result<Propagation> {
    let gen = RotatingLabGenerator::new(d, dim)?;
    let (w, stats) = propagate(&gen, 0.0, d.period(), opts)?;
    finish_propagation(w, d.tau(), stats)
}

/// Integrates directly over `[0, τ]` without using periodicity.
pub fn propagate_two_periods_direct(d: &DriveParams, dim: usize, opts: &PropagatorOptions) -> Result<(FockOperator, IntegratorStats)> {
    let gen = RotatingLabGenerator::new(d, dim)?;
    let (u, stats) = propagate(&gen, 0.0, d.tau(), opts)?;
    Ok((FockOperator::assume_unitary(u), stats))
}

fn finish_propagation(w: DMatrix<C64>, tau: f64, stats: IntegratorStats) -> Result<Propagation> {
    let full = &w * &w;
    let defect = crate::fockspace::max_identity_defect(&(full.adjoint() * &full));
    if !(defect <= QUALITY_LIMIT) {
        return Err(Error::Quality { defect, limit: QUALITY_LIMIT });
    }
    Ok(Propagation {
        half: FockOperator::assume_unitary(w),
        full: FockOperator::assume_unitary(full),
        tau,
        unitarity_defect: defect,
        stats,
    })
}

/// A matched effective state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub floquet: usize,
    /// `|<ψ_eff|φ>|²`.
    pub fidelity: f64,
    /// Overlap that decided the assignment (effective or continuation).
    pub link: f64,
}

#[derive(Clone, Debug)]
pub struct FloquetSpectrum {
    pub tau: f64,
    pub omegad: f64,
    pub quasienergies: Vec<f64>,
    pub modes: Vec<StateVector>,
    /// Effective index → match, indexed by effective index.
    pub matching: Vec<Option<Match>>,
    pub unmatched: Vec<usize>,
    /// Effective indices whose assignment was decided by quasi-energy proximity.
    pub ambiguous: Vec<usize>,
    /// Ground-pair labels assigned below `f_min` by best overlap.
    pub forced: Vec<usize>,
    /// `max_k ‖Uφ_k − λ_k φ_k‖`.
    pub eigen_residual: f64,
}

impl FloquetSpectrum {
    pub fn len(&self) -> usize {
        self.quasienergies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quasienergies.is_empty()
    }

    pub fn modulus(&self) -> f64 {
        0.5 * self.omegad
    }

    pub fn matched(&self, eff_index: usize) -> Option<Match> {
        self.matching.get(eff_index).copied().flatten()
    }

    /// Maps every mode through `u`, e.g. from the lab into the effective frame.
    pub fn transformed(&self, u: &FockOperator) -> Result<FloquetSpectrum> {
        let modes = self.modes.iter().map(|m| m.evolve(u)).collect::<Result<Vec<_>>>()?;
        Ok(FloquetSpectrum { modes, ..self.clone() })
    }

    /// Effective index matched to Floquet mode `k`, if any.
    pub fn effective_index(&self, k: usize) -> Option<usize> {
        self.matching.iter().position(|m| m.is_some_and(|m| m.floquet == k))
    }
}

/// Reduces `x` into `[0, m)`.
pub fn reduce_mod(x: f64, m: f64) -> f64 {
    let r = x.rem_euclid(m);
    if r >= m {
        0.0
    } else {
        r
    }
}

/// Distance on the circle of circumference `m`.
pub fn circle_distance(a: f64, b: f64, m: f64) -> f64 {
    let d = reduce_mod(a - b, m);
    d.min(m - d)
}

/// Eigenvalues and orthonormal eigenvectors of a unitary (normal) matrix
/// from its complex Schur form, where the Schur vectors are eigenvectors.
fn unitary_eigen(u: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = u.nrows();
    let schur = Schur::try_new(u.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Propagation("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let vals = (0..n).map(|k| t[(k, k)]).collect();
    Ok((vals, q))
}

fn build_spectrum(u: &DMatrix<C64>, step: f64, tau: f64, omegad: f64) -> Result<FloquetSpectrum> {
    let (vals, q) = unitary_eigen(u)?;
    let m = 0.5 * omegad;
    let mut quasienergies = Vec::with_capacity(vals.len());
    let mut modes = Vec::with_capacity(vals.len());
    let mut residual = 0.0f64;
    for (k, lambda) in vals.iter().enumerate() {
        let v = q.column(k).into_owned();
        let r = (u * &v - &v * *lambda).norm();
        residual = residual.max(r);
        quasienergies.push(reduce_mod(-lambda.arg() / step, m));
        modes.push(StateVector::new(fix_phase(v))?);
    }
    let unmatched = (0..vals.len()).collect();
    Ok(FloquetSpectrum {
        tau,
        omegad,
        quasienergies,
        modes,
        matching: Vec::new(),
        unmatched,
        ambiguous: Vec::new(),
        forced: Vec::new(),
        eigen_residual: residual,
    })
}

/// Quasi-energies `ε = −arg(λ)/τ mod ω_d/2` and modes of `U(τ)`.
pub fn floquet_spectrum(u: &FockOperator, tau: f64, omegad: f64) -> Result<FloquetSpectrum> {
    if !u.is_unitary() {
        return Err(Error::Contract("floquet_spectrum requires a unitary operator".into()));
    }
    build_spectrum(u.matrix(), tau, tau, omegad)
}

/// Floquet spectrum of `W²` computed from the one-period map `W`.
///
/// Eigenvectors of `W` are eigenvectors of `W²`; the cat pair sits on
/// opposite sides of the unit circle for `W`, so it stays well separated
/// here even when it is nearly degenerate for `W²`.
pub fn floquet_spectrum_from_period(w: &FockOperator, period: f64, omegad: f64) -> Result<FloquetSpectrum> {
    if !w.is_unitary() {
        return Err(Error::Contract("floquet_spectrum requires a unitary operator".into()));
    }
    build_spectrum(w.matrix(), period, 2.0 * period, omegad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchOptions {
    pub f_min: f64,
    /// Two candidates closer than this in fidelity count as ambiguous.
    pub ambiguity: f64,
    /// Assign effective indices 0 and 1 to their best remaining mode even
    /// below `f_min`, so the splitting stays defined once the wells dissolve.
    pub force_ground_pair: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { f_min: 0.5, ambiguity: 1e-3, force_ground_pair: false }
    }
}

/// `|<a_i|b_j>|²` for all pairs.
fn overlap_matrix(a: &[StateVector], b: &[StateVector]) -> DMatrix<f64> {
    let n = a.first().map_or(0, StateVector::dim);
    let am = DMatrix::from_fn(n, a.len(), |i, j| a[j].amplitudes()[i]);
    let bm = DMatrix::from_fn(n, b.len(), |i, j| b[j].amplitudes()[i]);
    (am.adjoint() * bm).map(|z| z.norm_sqr())
}

/// Greedy injective assignment on `scores` (rows: labels, cols: modes) with
/// ambiguous ties broken by `prefer` (smaller is better).
fn greedy_assign(
    scores: &DMatrix<f64>,
    f_min: f64,
    tol: f64,
    taken_rows: &mut [bool],
    taken_cols: &mut [bool],
    prefer: &dyn Fn(usize, usize) -> f64,
) -> Vec<(usize, usize, bool)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..scores.nrows() {
        for j in 0..scores.ncols() {
            if scores[(i, j)] >= f_min {
                cands.push((scores[(i, j)], i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = Vec::new();
    for idx in 0..cands.len() {
        let (f, i, j) = cands[idx];
        if taken_rows[i] || taken_cols[j] {
            continue;
        }
        let rivals: Vec<usize> = cands[idx + 1..]
            .iter()
            .take_while(|c| f - c.0 < tol)
            .filter(|c| c.1 == i && !taken_cols[c.2])
            .map(|c| c.2)
            .collect();
        let (j, ambiguous) = if rivals.is_empty() {
            (j, false)
        } else {
            let best = rivals.iter().copied().chain([j]).min_by(|&x, &y| prefer(i, x).total_cmp(&prefer(i, y))).unwrap();
            (best, true)
        };
        taken_rows[i] = true;
        taken_cols[j] = true;
        out.push((i, j, ambiguous));
    }
    out
}

fn check_dims(eff: &Spectrum, fs: &FloquetSpectrum) -> Result<()> {
    let nf = fs.modes.first().map_or(0, StateVector::dim);
    if eff.dim() != nf {
        return Err(Error::Contract(format!("effective dimension {} differs from Floquet dimension {nf}", eff.dim())));
    }
    Ok(())
}

/// Offset between quasi-energies and effective energies, estimated from the
/// best-matched pair.
fn energy_offset(eff: &Spectrum, fs: &FloquetSpectrum, scores: &DMatrix<f64>) -> f64 {
    let (i, j) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or((0, 0), |(k, _)| (k % scores.nrows(), k / scores.nrows()));
    fs.quasienergies[j] - eff.energies[i]
}

/// Best free column for each unassigned ground-pair row, by `scores`.
fn force_pair(
    scores: &dyn Fn(usize, usize) -> f64,
    fidelity: &dyn Fn(usize, usize) -> f64,
    n_modes: usize,
    rows: &mut [bool],
    cols: &mut [bool],
) -> Vec<(usize, usize, f64, f64, bool)> {
    let mut out = Vec::new();
    for i in 0..rows.len().min(2) {
        if rows[i] {
            continue;
        }
        let best = (0..n_modes).filter(|&j| !cols[j]).max_by(|&a, &b| scores(i, a).total_cmp(&scores(i, b)));
        if let Some(j) = best {
            rows[i] = true;
            cols[j] = true;
            out.push((i, j, fidelity(i, j), scores(i, j), false));
        }
    }
    out
}

fn finish_matching(fs: &mut FloquetSpectrum, n_eff: usize, assigned: Vec<(usize, usize, f64, f64, bool)>) {
    let mut matching = vec![None; n_eff];
    let mut used = vec![false; fs.len()];
    let mut ambiguous = Vec::new();
    for (i, j, fid, link, amb) in assigned {
        matching[i] = Some(Match { floquet: j, fidelity: fid, link });
        used[j] = true;
        if amb {
            ambiguous.push(i);
        }
    }
    ambiguous.sort_unstable();
    fs.forced.clear();
    fs.matching = matching;
    fs.unmatched = (0..fs.len()).filter(|&k| !used[k]).collect();
    fs.ambiguous = ambiguous;
}

/// Greedy matching by effective-state fidelity. `eff` must be expressed in
/// the same frame as the Floquet modes.
pub fn match_states(eff: &Spectrum, fs: &mut FloquetSpectrum, opts: &MatchOptions) -> Result<()> {
    check_dims(eff, fs)?;
    let scores = overlap_matrix(&eff.states, &fs.modes);
    let offset = energy_offset(eff, fs, &scores);
    let m = fs.modulus();
    let q = fs.quasienergies.clone();
    let prefer = |i: usize, j: usize| circle_distance(q[j], eff.energies[i] + offset, m);
    let mut rows = vec![false; eff.len()];
    let mut cols = vec![false; fs.len()];
    let mut assigned: Vec<_> = greedy_assign(&scores, opts.f_min, opts.ambiguity, &mut rows, &mut cols, &prefer)
        .into_iter()
        .map(|(i, j, amb)| (i, j, scores[(i, j)], scores[(i, j)], amb))
        .collect();
    let forced = if opts.force_ground_pair {
        let by_eff = |i: usize, j: usize| scores[(i, j)];
        force_pair(&by_eff, &by_eff, fs.len(), &mut rows, &mut cols)
    } else {
        Vec::new()
    };
    let forced_rows: Vec<usize> = forced.iter().map(|f| f.0).collect();
    assigned.extend(forced);
    finish_matching(fs, eff.len(), assigned);
    fs.forced = forced_rows;
    Ok(())
}

/// Matching seeded from a previously matched spectrum: each effective label
/// follows the mode most similar to its previous partner; labels left over
/// fall back to effective-state fidelity.
pub fn match_continuation(eff: &Spectrum, previous: &FloquetSpectrum, fs: &mut FloquetSpectrum, opts: &MatchOptions) -> Result<()> {
    check_dims(eff, fs)?;
    let eff_scores = overlap_matrix(&eff.states, &fs.modes);
    let offset = energy_offset(eff, fs, &eff_scores);
    let m = fs.modulus();
    let q = fs.quasienergies.clone();
    let prefer = |i: usize, j: usize| circle_distance(q[j], eff.energies[i] + offset, m);

    let labels: Vec<usize> = (0..eff.len()).filter(|&i| previous.matched(i).is_some()).collect();
    let refs: Vec<StateVector> = labels.iter().map(|&i| previous.modes[previous.matched(i).unwrap().floquet].clone()).collect();
    let mut rows = vec![false; eff.len()];
    let mut cols = vec![false; fs.len()];
    let mut assigned = Vec::new();
    if !refs.is_empty() {
        let cont = overlap_matrix(&refs, &fs.modes);
        let mut sub_rows = vec![false; labels.len()];
        let prefer_sub = |r: usize, j: usize| prefer(labels[r], j);
        for (r, j, amb) in greedy_assign(&cont, opts.f_min, opts.ambiguity, &mut sub_rows, &mut cols, &prefer_sub) {
            let i = labels[r];
            rows[i] = true;
            assigned.push((i, j, eff_scores[(i, j)], cont[(r, j)], amb));
        }
    }
    for (i, j, amb) in greedy_assign(&eff_scores, opts.f_min, opts.ambiguity, &mut rows, &mut cols, &prefer) {
        assigned.push((i, j, eff_scores[(i, j)], eff_scores[(i, j)], amb));
    }
    let mut forced_rows = Vec::new();
    if opts.force_ground_pair {
        // Follow the previous partner where there is one.
        let prev: Vec<Option<StateVector>> =
            (0..2.min(eff.len())).map(|i| previous.matched(i).map(|m| previous.modes[m.floquet].clone())).collect();
        let link = |i: usize, j: usize| match &prev[i] {
            Some(r) => r.fidelity(&fs.modes[j]),
            None => eff_scores[(i, j)],
        };
        let fid = |i: usize, j: usize| eff_scores[(i, j)];
        let forced = force_pair(&link, &fid, fs.len(), &mut rows, &mut cols);
        forced_rows = forced.iter().map(|f| f.0).collect();
        assigned.extend(forced);
    }
    finish_matching(fs, eff.len(), assigned);
    fs.forced = forced_rows;
    Ok(())
}

/// Minimal modular distance between the quasi-energies matched to
/// effective indices 0 and 1.
pub fn quasienergy_splitting(fs: &FloquetSpectrum) -> Result<f64> {
    match (fs.matched(0), fs.matched(1)) {
        (Some(a), Some(b)) => Ok(circle_distance(fs.quasienergies[b.floquet], fs.quasienergies[a.floquet], fs.modulus())),
        _ => Err(Error::ClassificationRequired),
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KCATPROP";

/// Writes `U` with a header `(magic, N: u64, tau: f64, params hash)`.
pub fn write_checkpoint<W: Write>(mut w: W, u: &FockOperator, tau: f64, d: &DriveParams) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(u.dim() as u64).to_le_bytes())?;
    w.write_all(&tau.to_le_bytes())?;
    w.write_all(&d.hash(u.dim()))?;
    u.write_binary(w)
}

/// Header fields and operator read back from [`write_checkpoint`].
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub tau: f64,
    pub params_hash: [u8; 32],
    pub operator: FockOperator,
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Contract("not a propagator checkpoint".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let dim = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let tau = f64::from_le_bytes(b8);
    let mut params_hash = [0u8; 32];
    r.read_exact(&mut params_hash)?;
    let mut body = Vec::with_capacity(dim * dim * 16);
    r.read_to_end(&mut body)?;
    let m = FockOperator::read_binary(&body, dim)?;
    Ok(Checkpoint { tau, params_hash, operator: FockOperator::assume_unitary(m) })
}

/// `exp(−iHt)` of a Hermitian operator by diagonalization.
pub fn exact_evolution(h: &FockOperator, t: f64) -> Result<FockOperator> {
    if !h.is_hermitian() {
        return Err(Error::Contract("exact_evolution requires a Hermitian operator".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(h.matrix().clone());
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        h.dim(),
        eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * t)),
    ));
    Ok(FockOperator::assume_unitary(&eig.eigenvectors * phases * eig.eigenvectors.adjoint()))
}

#[cfg(test)]
mod tests;
