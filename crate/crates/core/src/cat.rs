//! Chaos-assisted tunneling: which effective states belong to the chaotic
//! sea, the projector-based leak rate out of the ground state, and the
//! semiclassical splitting as a function of the regular island area.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::classical::{count_well_states, lobe_area, weyl_symbol_params};
use crate::error::{Error, Result};
use crate::floquet::{FloquetSpectrum, Propagation};
use crate::fockspace::{build_effective_hamiltonian, eigendecompose, EffectiveParams, FockOperator, Spectrum, StateVector};
use crate::io::fmt_f64;
use crate::phasespace::LocalizationReport;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;

const PROJECTOR_TOL: f64 = 1e-10;

/// Per-index localization evidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub index: usize,
    /// `(IPN_floquet − IPN_eff)/IPN_eff`.
    pub ipn_ratio: Option<f64>,
    /// `S_floquet − S_eff`.
    pub wehrl_gap: Option<f64>,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaoticClassification {
    pub regular_indices: Vec<usize>,
    pub chaotic_indices: Vec<usize>,
    pub evidence: Vec<Evidence>,
    /// First chaotic index according to the IPN rule.
    pub ipn_onset: Option<usize>,
    /// First chaotic index according to the same rule applied to Wehrl gaps.
    pub wehrl_onset: Option<usize>,
    /// Indices labelled differently by the two measures.
    pub disagreements: Vec<usize>,
}

impl ChaoticClassification {
    pub fn retained(&self) -> usize {
        self.evidence.len()
    }

    pub fn n_chaotic(&self) -> usize {
        self.chaotic_indices.len()
    }

    /// Every retained index labelled regular.
    pub fn all_regular(retained: usize) -> Self {
        Self {
            regular_indices: (0..retained).collect(),
            chaotic_indices: Vec::new(),
            evidence: (0..retained).map(|index| Evidence { index, ipn_ratio: Some(0.0), wehrl_gap: Some(0.0), matched: true }).collect(),
            ipn_onset: None,
            wehrl_onset: None,
            disagreements: Vec::new(),
        }
    }
}

/// Start of the sea: the first index that is flagged (or unmatched) and is
/// followed by a flagged majority of the next `window` indices. Everything
/// from there up is chaotic; isolated flags below it are identification
/// errors, except that unmatched states are always chaotic.
fn sea_onset(flags: &[bool], unmatched: &[bool], window: usize) -> Option<usize> {
    let hit = |k: usize| flags[k] || unmatched[k];
    (0..flags.len()).find(|&k| {
        let next = k + 1..(k + 1 + window).min(flags.len());
        hit(k) && (next.is_empty() || 2 * next.clone().filter(|&j| hit(j)).count() > next.len())
    })
}

/// Splits the retained effective indices at the edge of the chaotic sea by
/// comparing effective and Floquet localization. The IPN ratio decides; the
/// Wehrl gap, thresholded at `ln(1 + θ)`, is a cross-check.
pub fn classify_states(report: &LocalizationReport, theta: f64, window: usize) -> Result<ChaoticClassification> {
    if !(theta > 0.0) {
        return Err(Error::Contract(format!("classification threshold must be positive, got {theta}")));
    }
    for (k, r) in report.states.iter().enumerate() {
        if r.index != Some(k) {
            return Err(Error::Contract(format!("localization record {k} is out of order")));
        }
    }
    let evidence: Vec<Evidence> = report
        .states
        .iter()
        .enumerate()
        .map(|(index, r)| Evidence {
            index,
            ipn_ratio: r.ipn_eff.zip(r.ipn_floquet).map(|(e, f)| (f - e) / e),
            wehrl_gap: r.wehrl_eff.zip(r.wehrl_floquet).map(|(e, f)| f - e),
            matched: r.floquet_index.is_some(),
        })
        .collect();
    let unmatched: Vec<bool> = evidence.iter().map(|e| !e.matched).collect();
    let ipn_flags: Vec<bool> = evidence.iter().map(|e| e.ipn_ratio.is_some_and(|r| r > theta)).collect();
    let gap = theta.ln_1p();
    let wehrl_flags: Vec<bool> = evidence.iter().map(|e| e.wehrl_gap.is_some_and(|g| g > gap)).collect();
    let n = evidence.len();
    let ipn_onset = sea_onset(&ipn_flags, &unmatched, window);
    let wehrl_onset = sea_onset(&wehrl_flags, &unmatched, window);
    let (a, b) = (ipn_onset.unwrap_or(n), wehrl_onset.unwrap_or(n));
    // Unmatched states below the edge still count: a Floquet mode with no
    // effective partner has left the regular dynamics.
    let (chaotic_indices, regular_indices): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| k >= a || unmatched[k]);
    Ok(ChaoticClassification {
        regular_indices,
        chaotic_indices,
        evidence,
        ipn_onset,
        wehrl_onset,
        disagreements: (a.min(b)..a.max(b)).collect(),
    })
}

/// Effective basis whose ground doublet best holds the Floquet ground mode.
///
/// The drive realizes effective parameters only approximately, and the
/// leak rate is sensitive to any mismatch in the regular basis. Eigenvectors
/// of the effective Hamiltonian depend only on `ε₂/K` and `Δ/K`, so those two
/// ratios are tuned at fixed `K`.
#[derive(Clone, Debug)]
pub struct RegularBasis {
    pub params: EffectiveParams,
    /// Weight of the Floquet ground mode on the ground doublet of `params`.
    pub fidelity: f64,
    /// Same weight for the nominal parameters.
    pub nominal_fidelity: f64,
    pub spectrum: Spectrum,
    pub evaluations: usize,
}

const BASIS_MAX_EVALS: usize = 200;

/// Maximizes the ground-doublet weight over `(ε₂/K, Δ/K)` within `ε₂/K·[1/2, 3/2]` and
/// `Δ/K ± ε₂/2K` of the nominal values. `fs` must be in the effective frame.
pub fn fit_regular_basis(fs: &FloquetSpectrum, p: &EffectiveParams, dim: usize) -> Result<RegularBasis> {
    let spectrum_of = |e: f64, d: f64| -> Result<Spectrum> {
        eigendecompose(&build_effective_hamiltonian(&EffectiveParams::from_ratios(p.kerr, e, d)?, dim)?)
    };
    let weight = |s: &Spectrum, m: &StateVector| s.states[0].fidelity(m) + s.states[1].fidelity(m);
    let (e0, d0) = (p.eps2 / p.kerr, p.delta / p.kerr);
    let nominal = spectrum_of(e0, d0)?;
    let ground = fs
        .modes
        .iter()
        .max_by(|a, b| weight(&nominal, a).total_cmp(&weight(&nominal, b)))
        .ok_or_else(|| Error::Contract("empty Floquet spectrum".into()))?;
    let nominal_fidelity = weight(&nominal, ground);
    let inside = |e: f64, d: f64| e >= 0.5 * e0 && e <= 1.5 * e0 && (d - d0).abs() <= 0.5 * e0;
    // Nelder–Mead in (α² = ε₂/K + Δ/2K, Δ/K): the ground doublet depends
    // mostly on α², so these coordinates keep the valley axis-aligned.
    let ratios = |x: [f64; 2]| (x[0] - 0.5 * x[1], x[1]);
    let evaluations = std::cell::Cell::new(1);
    let score = |x: [f64; 2]| -> Result<f64> {
        let (e, d) = ratios(x);
        if !inside(e, d) {
            return Ok(f64::NEG_INFINITY);
        }
        evaluations.set(evaluations.get() + 1);
        Ok(weight(&spectrum_of(e, d)?, ground))
    };
    let x0 = [e0 + 0.5 * d0, d0];
    let h = 0.02 * e0;
    let mut simplex = vec![(x0, nominal_fidelity)];
    for x in [[x0[0] + h, x0[1]], [x0[0], x0[1] + h]] {
        simplex.push((x, score(x)?));
    }
    for _ in 0..BASIS_MAX_EVALS {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        if simplex[0].1 - simplex[2].1 < 1e-12 || evaluations.get() >= BASIS_MAX_EVALS {
            break;
        }
        let c = [0.5 * (simplex[0].0[0] + simplex[1].0[0]), 0.5 * (simplex[0].0[1] + simplex[1].0[1])];
        let w = simplex[2].0;
        let along = |t: f64| [c[0] + t * (w[0] - c[0]), c[1] + t * (w[1] - c[1])];
        let r = along(-1.0);
        let fr = score(r)?;
        if fr > simplex[0].1 {
            let e = along(-2.0);
            let fe = score(e)?;
            simplex[2] = if fe > fr { (e, fe) } else { (r, fr) };
        } else if fr > simplex[1].1 {
            simplex[2] = (r, fr);
        } else {
            let k = if fr > simplex[2].1 { along(-0.5) } else { along(0.5) };
            let fk = score(k)?;
            if fk > simplex[2].1.max(fr) {
                simplex[2] = (k, fk);
            } else {
                let b = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    v.0 = [0.5 * (v.0[0] + b[0]), 0.5 * (v.0[1] + b[1])];
                    v.1 = score(v.0)?;
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (at, best) = (ratios(simplex[0].0), simplex[0].1);
    let params = EffectiveParams::from_ratios(p.kerr, at.0, at.1)?;
    let spectrum = if at == (e0, d0) { nominal } else { spectrum_of(at.0, at.1)? };
    Ok(RegularBasis { params, fidelity: best, nominal_fidelity, spectrum, evaluations: evaluations.get() })
}

/// Number of effective states worth classifying: three times the EBK count
/// of both wells plus a margin of ten.
pub fn retained_states(p: &EffectiveParams) -> Result<usize> {
    let per_well = count_well_states(lobe_area(&weyl_symbol_params(p)?)?);
    Ok(3 * (2 * per_well as usize + 10))
}

/// Orthogonal projector onto a set of effective eigenstates.
#[derive(Clone, Debug)]
pub struct ChaoticProjector {
    pub matrix: FockOperator,
    pub rank: usize,
}

impl ChaoticProjector {
    pub fn zero(dim: usize) -> Self {
        Self { matrix: FockOperator::hermitian(DMatrix::zeros(dim, dim)).expect("zero is Hermitian"), rank: 0 }
    }

    pub fn from_states(states: &[&StateVector], dim: usize) -> Result<Self> {
        if states.is_empty() {
            return Ok(Self::zero(dim));
        }
        let mut basis = DMatrix::<C64>::zeros(dim, states.len());
        for (j, s) in states.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::Contract(format!("state of dimension {} in a {dim}-dimensional projector", s.dim())));
            }
            basis.set_column(j, s.amplitudes());
        }
        let gram = basis.adjoint() * &basis;
        let defect = (gram - DMatrix::<C64>::identity(states.len(), states.len())).camax();
        if defect > PROJECTOR_TOL {
            return Err(Error::Contract(format!("projector basis is not orthonormal (defect {defect:.3e})")));
        }
        let m = &basis * basis.adjoint();
        let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Ok(Self { matrix: FockOperator::hermitian(m)?, rank: states.len() })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `‖P² − P‖_max`.
    pub fn idempotency_defect(&self) -> f64 {
        let m = self.matrix.matrix();
        (m * m - m).camax()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.matrix().trace().re
    }

    pub fn apply(&self, psi: &StateVector) -> nalgebra::DVector<C64> {
        self.matrix.apply(psi)
    }
}

#[derive(Clone, Debug)]
pub struct Projectors {
    pub regular: ChaoticProjector,
    pub chaotic: ChaoticProjector,
}

/// `P_reg` and `P_ch` from the eigenstates of `eff`. Together they resolve
/// the identity on the retained subspace.
pub fn build_projectors(c: &ChaoticClassification, eff: &Spectrum) -> Result<Projectors> {
    let dim = eff.dim();
    if c.retained() > eff.len() {
        return Err(Error::Contract(format!("classification covers {} states, spectrum has {}", c.retained(), eff.len())));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&k| &eff.states[k]).collect::<Vec<_>>();
    Ok(Projectors {
        regular: ChaoticProjector::from_states(&pick(&c.regular_indices), dim)?,
        chaotic: ChaoticProjector::from_states(&pick(&c.chaotic_indices), dim)?,
    })
}

/// Which evolution enters the leak rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatePeriod {
    /// `U(τ)`, one period of the doubled drive.
    #[default]
    Tau,
    /// `U(2τ)`.
    TwoTau,
}

impl RatePeriod {
    pub fn interval(self, tau: f64) -> f64 {
        match self {
            Self::Tau => tau,
            Self::TwoTau => 2.0 * tau,
        }
    }

    pub fn evolution(self, prop: &Propagation) -> FockOperator {
        match self {
            Self::Tau => prop.full.clone(),
            Self::TwoTau => prop.full.compose(&prop.full),
        }
    }
}

/// `γ₀ = ‖P_ch U ψ₀‖`, the amplitude leaked into the chaotic subspace per
/// application of `u`.
pub fn fgr_rate(p_ch: &ChaoticProjector, u: &FockOperator, psi0: &StateVector) -> Result<f64> {
    if u.dim() != p_ch.dim() || psi0.dim() != p_ch.dim() {
        return Err(Error::Contract(format!(
            "dimension mismatch: projector {}, evolution {}, state {}",
            p_ch.dim(),
            u.dim(),
            psi0.dim()
        )));
    }
    if p_ch.rank == 0 {
        return Ok(0.0);
    }
    let moved = StateVector::new(u.apply(psi0)).map_err(|_| Error::Contract("evolution annihilated the state".into()))?;
    Ok(p_ch.apply(&moved).norm())
}

/// Splitting predicted from the mean-splitting identity, in angular
/// frequency: the per-interval amplitude divided by the interval.
pub fn splitting_from_rate(gamma0: f64, interval: f64) -> f64 {
    gamma0 / interval
}

/// Mean chaotic level spacing and the Heisenberg-time check for `γ₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergCheck {
    pub mean_spacing: f64,
    /// `t_H = 1/Δ_ch`.
    pub heisenberg_time: f64,
    /// `ρ_ch = 1/Δ_ch`.
    pub density: f64,
    /// `γ₀·t_H/τ ≥ 1`.
    pub resolvable: bool,
}

/// `None` with fewer than two chaotic states.
pub fn heisenberg_check(c: &ChaoticClassification, eff: &Spectrum, gamma0: f64, interval: f64) -> Option<HeisenbergCheck> {
    let mut e: Vec<f64> = c.chaotic_indices.iter().map(|&k| eff.energies[k]).collect();
    if e.len() < 2 {
        return None;
    }
    e.sort_by(f64::total_cmp);
    let spacing = (e[e.len() - 1] - e[0]) / (e.len() - 1) as f64;
    if !(spacing > 0.0) {
        return None;
    }
    let t_h = 1.0 / spacing;
    Some(HeisenbergCheck { mean_spacing: spacing, heisenberg_time: t_h, density: t_h, resolvable: gamma0 * t_h / interval >= 1.0 })
}

/// `ln Γ(s, z)` for `s > 0`, `z ≥ 0`, finite even where `Γ(s, z)` itself
/// under- or overflows.
pub fn ln_upper_gamma(s: f64, z: f64) -> Result<f64> {
    if !(s > 0.0) || !(z >= 0.0) || !s.is_finite() || !z.is_finite() {
        return Err(Error::Contract(format!("ln Γ(s, z) needs s > 0 and z ≥ 0, got s = {s}, z = {z}")));
    }
    if z == 0.0 {
        return Ok(ln_gamma(s));
    }
    if z < s + 1.0 {
        return Ok(gamma_ur(s, z).ln() + ln_gamma(s));
    }
    // Continued fraction, modified Lentz.
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            return Ok(-z + s * z.ln() + h.ln());
        }
    }
    Err(Error::Contract(format!("incomplete gamma continued fraction did not converge at s = {s}, z = {z}")))
}

/// `ln[Γ(x, 2x)/Γ(x + 1, 0)]` with `x = A/πħ`.
pub fn ln_gamma_ratio(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Overflow(format!("Γ(x, 2x)/Γ(x + 1) diverges at x = {x}")));
    }
    Ok(ln_upper_gamma(x, 2.0 * x)? - ln_gamma(x + 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaSource {
    DrivenIsland,
    EffectiveLobe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalModel {
    pub c0: f64,
    pub hbar: f64,
    pub area_source: AreaSource,
}

impl SemiclassicalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::Contract(format!("c0 must be positive, got {}", self.c0)));
        }
        if !(self.hbar > 0.0) {
            return Err(Error::Contract(format!("ħ must be positive, got {}", self.hbar)));
        }
        Ok(())
    }
}

/// `ΔE = c₀ħ Γ(A/πħ, 2A/πħ)/Γ(A/πħ + 1, 0)`. A vanishing island is an
/// [`Error::Overflow`].
pub fn semiclassical_splitting(area: f64, model: &SemiclassicalModel) -> Result<f64> {
    model.validate()?;
    if !(area >= 0.0) {
        return Err(Error::Contract(format!("island area must be non-negative, got {area}")));
    }
    let x = area / (PI * model.hbar);
    Ok(model.c0 * model.hbar * ln_gamma_ratio(x)?.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C0Fit {
    pub model: SemiclassicalModel,
    /// `ln ΔE − ln ΔE_model` per input pair.
    pub residuals: Vec<f64>,
}

/// Least-squares intercept of `ln ΔE` against the log gamma ratio at unit slope.
pub fn fit_c0(pairs: &[(f64, f64)], hbar: f64, area_source: AreaSource) -> Result<C0Fit> {
    if pairs.len() < 3 {
        return Err(Error::Fit(format!("c0 needs at least 3 (A, ΔE) pairs, got {}", pairs.len())));
    }
    if pairs.iter().all(|&(a, _)| a == pairs[0].0) {
        return Err(Error::Fit("all pairs share the same island area".into()));
    }
    let mut logs = Vec::with_capacity(pairs.len());
    for &(a, de) in pairs {
        if !(de > 0.0) {
            return Err(Error::Fit(format!("splitting {de} at A = {a} is not positive")));
        }
        let shape = ln_gamma_ratio(a / (PI * hbar)).map_err(|e| Error::Fit(e.to_string()))?;
        logs.push(de.ln() - hbar.ln() - shape);
    }
    let ln_c0 = logs.iter().sum::<f64>() / logs.len() as f64;
    let model = SemiclassicalModel { c0: ln_c0.exp(), hbar, area_source };
    model.validate()?;
    Ok(C0Fit { model, residuals: logs.iter().map(|l| l - ln_c0).collect() })
}

/// One row of the tunneling analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatRecord {
    pub kerr: f64,
    pub n_chaotic: usize,
    pub gamma0: f64,
    pub de_fgr_over_k: f64,
    pub area: f64,
    pub de_semiclassical_over_k: Option<f64>,
    pub c0: Option<f64>,
    /// `true` when `γ₀` is below the Heisenberg-time resolution.
    pub below_heisenberg: bool,
}

pub const CAT_CSV_HEADER: &str = "K,N_ch,gamma0,dE_fgr_over_K,A,dE_semiclassical_over_K,c0,t_H_flag";

pub fn write_cat_csv<W: Write>(records: &[CatRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CAT_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(r.kerr),
            r.n_chaotic,
            fmt_f64(r.gamma0),
            fmt_f64(r.de_fgr_over_k),
            fmt_f64(r.area),
            opt(r.de_semiclassical_over_k),
            opt(r.c0),
            u8::from(r.below_heisenberg)
        )?;
    }
    Ok(())
}
