//! Inversion from effective parameters `(K, ε₂, Δ)` to a lab drive.
//!
//! The seed comes from lowest-order perturbation theory of the literal
//! Hamiltonian `ω₀n + g₃x³ + g₄x⁴ − iΩ_d(a − a†)cos(ω_d t)`:
//!
//! ```text
//! K  = 30 g₃²/ω₀ − 6 g₄
//! Δ  = ω₀ − ω_d/2 − 2K
//! ε₂ = 3 g₃ |Π|,   Π = iΩ_d ω_d / (ω_d² − ω₀²)
//! ```
//!
//! with `Π` the `e^{−iω_d t}` amplitude of the classical response in `x`.
//! Refinement then measures the effective parameters actually realized by
//! the drive (a least-squares fit of the matched quasi-energy ladder) and
//! shifts the seed targets by the discrepancy until they agree.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{floquet_spectrum_from_period, match_states, propagate_period, DriveParams, FloquetSpectrum, MatchOptions, Propagation, PropagatorOptions};
use crate::error::{Error, Result};
use crate::fockspace::{
    build_effective_hamiltonian, displacement, eigendecompose, phase_rotation, EffectiveParams, FockOperator, Spectrum,
};

/// Map from the effective frame to the lab frame at `t = 0`:
/// `D(β)·e^{−iK₀}·e^{iθa†a}`, where `K₀` is the first-order micromotion
/// generator of the displaced rotating-frame Hamiltonian (omitted when
/// `kick` is false).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabFrame {
    pub theta: f64,
    pub beta_re: f64,
    pub beta_im: f64,
    pub drive: DriveParams,
    pub kick: bool,
}

impl LabFrame {
    pub fn beta(&self) -> C64 {
        C64::new(self.beta_re, self.beta_im)
    }

    pub fn operator(&self, dim: usize) -> Result<FockOperator> {
        let rot = phase_rotation(self.theta, dim)?;
        let inner = if self.kick { exp_minus_i(&micromotion_generator(&self.drive, dim)?).compose(&rot) } else { rot };
        Ok(displacement(self.beta(), dim)?.compose(&inner))
    }

    /// Effective eigenstates of `p` expressed in the lab frame.
    pub fn lab_spectrum(&self, p: &EffectiveParams, dim: usize) -> Result<Spectrum> {
        eigendecompose(&build_effective_hamiltonian(p, dim)?)?.transformed(&self.operator(dim)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub dim: usize,
    pub propagator: PropagatorOptions,
    /// Refinement rounds; zero returns the analytic seed.
    pub max_iterations: usize,
    /// Number of near-degenerate doublets used in the ladder fit.
    pub fit_doublets: usize,
    /// Convergence of the realized parameters, relative to `K`.
    pub tolerance: f64,
    /// Largest acceptable ladder mismatch, relative to `K`.
    pub residual_limit: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            dim: 250,
            propagator: PropagatorOptions::default(),
            max_iterations: 4,
            fit_doublets: 4,
            tolerance: 1e-5,
            residual_limit: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub drive: DriveParams,
    pub frame: LabFrame,
    pub target: EffectiveParams,
    /// Effective parameters realized by `drive`, if refinement ran.
    pub realized: Option<EffectiveParams>,
    /// Seed targets that produced `drive`.
    pub seed_target: EffectiveParams,
    pub iterations: usize,
    /// Largest ladder mismatch against `target`, in units of `K`.
    pub residual: Option<f64>,
}

/// Lowest-order inversion. `target` need not be physical beyond `K > 0`.
pub fn seed_drive(target: &EffectiveParams, g3: f64, g4: f64) -> Result<(DriveParams, LabFrame)> {
    if target.eps2 != 0.0 && g3 == 0.0 {
        return Err(Error::Calibration("g3 = 0 generates no two-photon drive, so ε₂ > 0 is unreachable".into()));
    }
    if g3 == 0.0 {
        return Err(Error::Calibration("g3 = 0 leaves the oscillator frequency undetermined".into()));
    }
    let omega0 = 30.0 * g3 * g3 / (target.kerr + 6.0 * g4);
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::Calibration(format!("K = {} is not reachable with g3 = {g3}, g4 = {g4}", target.kerr)));
    }
    let omegad = 2.0 * (omega0 - 2.0 * target.kerr - target.delta);
    if !(omegad > omega0) {
        return Err(Error::Calibration(format!("detuning Δ = {} leaves no period-doubling drive", target.delta)));
    }
    let pi_mag = target.eps2 / (3.0 * g3.abs());
    let drive = pi_mag * (omegad * omegad - omega0 * omega0) / omegad;
    let d = DriveParams { omega0, omegad, drive, g3, g4 };
    Ok((d, frame_for(&d)))
}

/// Response displacement `β = a(0)` and squeezing phase `θ = arg(3g₃Π)/2`.
pub fn frame_for(d: &DriveParams) -> LabFrame {
    let den = d.omegad * d.omegad - d.omega0 * d.omega0;
    let beta = C64::new(0.0, d.drive * d.omega0 / den);
    let pi = C64::new(0.0, d.drive * d.omegad / den);
    let theta = 0.5 * (pi * (3.0 * d.g3)).arg();
    LabFrame { theta, beta_re: beta.re, beta_im: beta.im, drive: *d, kick: true }
}

/// Linear-response amplitudes `(A, B)` of `a_c(t) = A e^{−iω_d t} + B e^{iω_d t}`.
pub(crate) fn response(d: &DriveParams) -> (C64, C64) {
    let a = C64::new(0.0, -d.drive / (2.0 * (d.omega0 - d.omegad)));
    let b = C64::new(0.0, -d.drive / (2.0 * (d.omega0 + d.omegad)));
    (a, b)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `K₀ = Σ_{ν≠0} H_ν/(iν)` for the Hamiltonian displaced by the linear
/// response and rotated at `ω_d/2`, with `H(t) = Σ_ν H_ν e^{iνt}`.
pub fn micromotion_generator(d: &DriveParams, dim: usize) -> Result<DMatrix<C64>> {
    let a = crate::fockspace::annihilation(dim)?;
    let x = a.matrix() + a.matrix().adjoint();
    let mut powers = vec![DMatrix::<C64>::identity(dim, dim)];
    for k in 1..=4 {
        powers.push(&powers[k - 1] * &x);
    }
    let (amp_a, amp_b) = response(d);
    let pi = amp_a + amp_b.conj();
    let wr = 0.5 * d.omegad;
    let mut k0 = DMatrix::<C64>::zeros(dim, dim);
    for p in 0..=3u32 {
        let mut mp = &powers[(3 - p) as usize] * C64::new(d.g3 * binomial(3, p), 0.0);
        mp += &powers[(4 - p) as usize] * C64::new(d.g4 * binomial(4, p), 0.0);
        for q in 0..=p {
            let c = pi.powu(q) * pi.conj().powu(p - q) * binomial(p, q);
            let j = 2 * q as i64 - p as i64;
            for col in 0..dim {
                for row in 0..dim {
                    let z = mp[(row, col)];
                    if z == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let k = row as i64 - col as i64;
                    let nu = wr * (k - 2 * j) as f64;
                    if k - 2 * j != 0 {
                        k0[(row, col)] += c * z / C64::new(0.0, nu);
                    }
                }
            }
        }
    }
    Ok((&k0 + k0.adjoint()) * C64::new(0.5, 0.0))
}

/// `exp(−iG)` for Hermitian `G`.
fn exp_minus_i(g: &DMatrix<C64>) -> FockOperator {
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -l)));
    FockOperator::general(&eig.eigenvectors * phases * eig.eigenvectors.adjoint())
}

/// Signed representative of `x` in `[−m/2, m/2)`.
fn signed_mod(x: f64, m: f64) -> f64 {
    super::reduce_mod(x + 0.5 * m, m) - 0.5 * m
}

/// Quasi-energy ladder `ε_{k(i)} − ε_{k(0)}` for effective indices `1..n`.
fn measured_ladder(fs: &FloquetSpectrum, n: usize) -> Result<Vec<f64>> {
    let e0 = fs.matched(0).ok_or(Error::ClassificationRequired)?;
    (1..n)
        .map(|i| {
            let m = fs.matched(i).ok_or_else(|| Error::Calibration(format!("effective state {i} has no Floquet partner")))?;
            Ok(signed_mod(fs.quasienergies[m.floquet] - fs.quasienergies[e0.floquet], fs.modulus()))
        })
        .collect()
}

/// Least-squares `(K, ε₂, Δ)` reproducing `ladder`, with Hellmann–Feynman gradients.
pub fn fit_effective(ladder: &[f64], start: &EffectiveParams, dim: usize) -> Result<(EffectiveParams, f64)> {
    let n = ladder.len() + 1;
    let mut q = Vector3::new(start.kerr, start.eps2, start.delta);
    let mut best: Option<(EffectiveParams, f64)> = None;
    let mut stalled = 0;
    for _ in 0..50 {
        let p = EffectiveParams::new(q[0], q[1], q[2]).map_err(|e| Error::Fit(e.to_string()))?;
        let (model, grads) = ladder_with_gradients(&p, dim, n)?;
        let r: Vec<f64> = model.iter().zip(ladder).map(|(m, l)| m - l).collect();
        let worst = r.iter().fold(0.0f64, |w, x| w.max(x.abs()));
        match best {
            Some((_, b)) if worst >= 0.5 * b => {
                stalled += 1;
                if worst < b {
                    best = Some((p, worst));
                }
                if stalled >= 2 {
                    return Ok(best.unwrap());
                }
            }
            _ => {
                stalled = 0;
                best = Some((p, worst));
            }
        }
        let jac = DMatrix::from_fn(r.len(), 3, |i, j| grads[i][j]);
        // Columns scaled to unit norm so the minimum-norm step treats the
        // three parameters alike when the ladder underdetermines them.
        let scale: Vec<f64> = (0..3).map(|j| jac.column(j).norm().max(f64::MIN_POSITIVE)).collect();
        let scaled = DMatrix::from_fn(r.len(), 3, |i, j| jac[(i, j)] / scale[j]);
        let step = scaled
            .svd(true, true)
            .solve(&DMatrix::from_column_slice(r.len(), 1, &r), 1e-10)
            .map_err(|e| Error::Fit(format!("ladder Jacobian: {e}")))?;
        for j in 0..3 {
            q[j] -= step[(j, 0)] / scale[j];
        }
        if !q.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Fit(format!("ladder fit did not converge (last K = {:.6e}, ε₂ = {:.6e}, Δ = {:.6e})", q[0], q[1], q[2])))
}

type Ladder = (Vec<f64>, Vec<[f64; 3]>);

/// Ladder `E_i − E_0` for `i = 1..n` and its derivatives in `(K, ε₂, Δ)`.
fn ladder_with_gradients(p: &EffectiveParams, dim: usize, n: usize) -> Result<Ladder> {
    let spec = eigendecompose(&build_effective_hamiltonian(p, dim)?)?;
    let grad = |s: usize| -> [f64; 3] {
        let a = spec.states[s].amplitudes();
        let (mut dk, mut de, mut dd) = (0.0, 0.0, 0.0);
        for m in 0..dim {
            let w = a[m].norm_sqr();
            let mf = m as f64;
            dk -= w * mf * (mf - 1.0);
            dd += w * mf;
            if m + 2 < dim {
                de += 2.0 * (a[m].conj() * a[m + 2]).re * ((mf + 1.0) * (mf + 2.0)).sqrt();
            }
        }
        [dk, de, dd]
    };
    let g0 = grad(0);
    let mut vals = Vec::with_capacity(n - 1);
    let mut grads = Vec::with_capacity(n - 1);
    for i in 1..n {
        vals.push(spec.energies[i] - spec.energies[0]);
        let gi = grad(i);
        grads.push([gi[0] - g0[0], gi[1] - g0[1], gi[2] - g0[2]]);
    }
    Ok((vals, grads))
}

/// Propagates `d` and fits the effective parameters it realizes.
pub fn measure_effective(
    d: &DriveParams,
    frame: &LabFrame,
    p: &EffectiveParams,
    opts: &CalibrationOptions,
) -> Result<(EffectiveParams, Propagation, FloquetSpectrum)> {
    let prop = propagate_period(d, opts.dim, &opts.propagator)?;
    let raw = floquet_spectrum_from_period(&prop.half, d.period(), d.omegad)?;
    let (realized, fs) = realized_effective(&raw, frame, p, opts)?;
    Ok((realized, prop, fs))
}

/// Number of effective indices `0, 1, ...` matched without a gap.
fn matched_run(fs: &FloquetSpectrum) -> usize {
    (0..).take_while(|&i| fs.matched(i).is_some()).count()
}

/// Self-consistent fit of `raw`: match against the current estimate (starting
/// at `p`), fit the contiguous matched ladder, and repeat with the fitted
/// parameters until the estimate settles. A drive that misses `p` badly still
/// matches its own effective basis, which recovers the states lost to the
/// first comparison.
pub fn realized_effective(
    raw: &FloquetSpectrum,
    frame: &LabFrame,
    p: &EffectiveParams,
    opts: &CalibrationOptions,
) -> Result<(EffectiveParams, FloquetSpectrum)> {
    const ROUNDS: usize = 4;
    const MIN_DOUBLETS: usize = 3;
    let want = 2 * opts.fit_doublets.max(MIN_DOUBLETS);
    let mut q = *p;
    let mut last: Option<(EffectiveParams, FloquetSpectrum)> = None;
    for _ in 0..ROUNDS {
        let mut fs = raw.clone();
        let eff = frame.lab_spectrum(&q, opts.dim)?;
        match_states(&eff, &mut fs, &MatchOptions::default())?;
        let n = (matched_run(&fs) / 2 * 2).min(want);
        if n < 2 * MIN_DOUBLETS {
            return last.ok_or_else(|| {
                Error::Calibration(format!("only {} effective states have a Floquet partner", matched_run(&fs)))
            });
        }
        let ladder = measured_ladder(&fs, n)?;
        let (fit, _) = fit_effective(&ladder, &q, opts.dim)?;
        let moved = (fit.kerr - q.kerr).abs().max((fit.eps2 - q.eps2).abs()).max((fit.delta - q.delta).abs());
        let settled = n == want && moved <= opts.tolerance * p.kerr;
        q = fit;
        last = Some((fit, fs));
        if settled {
            break;
        }
    }
    Ok(last.expect("at least one round ran"))
}

/// Largest mismatch between the Floquet ladder and the effective ladder of `p`.
pub fn ladder_residual(fs: &FloquetSpectrum, p: &EffectiveParams, dim: usize, states: usize) -> Result<f64> {
    let ladder = measured_ladder(fs, states)?;
    let (model, _) = ladder_with_gradients(p, dim, states)?;
    Ok(model.iter().zip(&ladder).fold(0.0f64, |w, (m, l)| w.max((m - l).abs())))
}

/// Drive parameters whose Floquet spectrum reproduces `p`.
pub fn calibrate_drive(p: &EffectiveParams, g3: f64, g4: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    p.require_double_well()?;
    calibrate_from(p, p, g3, g4, opts)
}

/// As [`calibrate_drive`], starting the refinement from `seed_target`
/// instead of `p` itself.
pub fn calibrate_from(p: &EffectiveParams, seed_target: &EffectiveParams, g3: f64, g4: f64, opts: &CalibrationOptions) -> Result<Calibration> {
    p.require_double_well()?;
    let mut seed = *seed_target;
    let (mut d, mut frame) = seed_drive(&seed, g3, g4)?;
    if opts.max_iterations == 0 {
        return Ok(Calibration { drive: d, frame, target: *p, realized: None, seed_target: seed, iterations: 0, residual: None });
    }
    let n_states = 2 * opts.fit_doublets;
    for it in 1..=opts.max_iterations {
        let (realized, _, fs) = measure_effective(&d, &frame, p, opts)?;
        let miss = Vector3::new(p.kerr - realized.kerr, p.eps2 - realized.eps2, p.delta - realized.delta);
        if miss.amax() <= opts.tolerance * p.kerr || it == opts.max_iterations {
            let states = (matched_run(&fs) / 2 * 2).min(n_states);
            let residual = ladder_residual(&fs, p, opts.dim, states)? / p.kerr;
            if !(residual <= opts.residual_limit) {
                return Err(Error::Calibration(format!(
                    "ladder mismatch {residual:.3e}·K after {it} rounds exceeds {:.1e}·K (realized K = {:.6e}, ε₂ = {:.6e}, Δ = {:.6e})",
                    opts.residual_limit, realized.kerr, realized.eps2, realized.delta
                )));
            }
            return Ok(Calibration {
                drive: d,
                frame,
                target: *p,
                realized: Some(realized),
                seed_target: seed,
                iterations: it,
                residual: Some(residual),
            });
        }
        seed = EffectiveParams::new(seed.kerr + miss[0], seed.eps2 + miss[1], seed.delta + miss[2])
            .map_err(|e| Error::Calibration(e.to_string()))?;
        (d, frame) = seed_drive(&seed, g3, g4)?;
    }
    unreachable!("loop returns on its last iteration")
}
