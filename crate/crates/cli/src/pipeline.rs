//! Per-K stages shared by the run modes.

use std::collections::BTreeMap;
use std::time::Instant;

use kerrcat::cat::{
    build_projectors, classify_states, fgr_rate, fit_regular_basis, heisenberg_check, retained_states, ChaoticClassification, HeisenbergCheck,
    RegularBasis,
};
use kerrcat::classical::{island_area, lobe_area, poincare_section, stationary_points, weyl_symbol_params, PhasePoint, SectionOptions};
use kerrcat::cat::AreaSource;
use kerrcat::floquet::calibrate::{calibrate_drive, seed_drive, CalibrationOptions, LabFrame};
use kerrcat::floquet::{
    floquet_spectrum_from_period, match_continuation, match_states, propagate_period, quasienergy_splitting, DriveParams, FloquetSpectrum,
    MatchOptions,
};
use kerrcat::fockspace::{build_effective_hamiltonian, eigendecompose};
use kerrcat::ode::IntegratorStats;
use kerrcat::phasespace::{localization_compare, GridSpec, LocalizationReport};
use kerrcat::{EffectiveParams, FockOperator};

use crate::config::RunConfig;
use crate::error::CliError;

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: CliError,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// Wall-clock seconds per stage.
#[derive(Default)]
pub(crate) struct Clock(pub BTreeMap<String, f64>);

impl Clock {
    pub fn run<T, E: Into<CliError>>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T, E>) -> StageResult<T> {
        let t = Instant::now();
        let out = f().map_err(|e| StageError { stage, error: e.into() });
        *self.0.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

/// Output of the independent (parallelizable) stages at one `K`.
pub struct Prepared {
    pub index: usize,
    pub kerr: f64,
    pub params: EffectiveParams,
    pub drive: DriveParams,
    pub frame: LabFrame,
    /// How the drive was obtained.
    pub calibration: String,
    pub unitarity_defect: f64,
    pub stats: IntegratorStats,
    pub tau: f64,
    /// Floquet modes in the effective frame, unmatched.
    pub spectrum: FloquetSpectrum,
    /// Effective-frame evolution over the rate interval.
    pub evolution: FockOperator,
    pub de_effective: f64,
    pub basis: RegularBasis,
    pub timings: BTreeMap<String, f64>,
}

pub fn drive_for(cfg: &RunConfig, p: &EffectiveParams) -> kerrcat::Result<(DriveParams, LabFrame, String)> {
    let (g3, g4) = cfg.drive.coefficients();
    let seeded = || seed_drive(p, g3, g4).map(|(d, f)| (d, f));
    if cfg.calibration.refine_iterations == 0 {
        let (d, f) = seeded()?;
        return Ok((d, f, "seed".into()));
    }
    let opts = CalibrationOptions {
        dim: cfg.fock_dim,
        propagator: cfg.integrator.clone(),
        max_iterations: cfg.calibration.refine_iterations,
        fit_doublets: cfg.calibration.fit_doublets,
        residual_limit: cfg.calibration.residual_limit,
        ..Default::default()
    };
    match calibrate_drive(p, g3, g4, &opts) {
        Ok(c) => Ok((c.drive, c.frame, format!("refined ({} rounds, residual {:.3e}·K)", c.iterations, c.residual.unwrap_or(f64::NAN)))),
        Err(e) => {
            let (d, f) = seeded()?;
            Ok((d, f, format!("seed (refinement failed: {e})")))
        }
    }
}

/// Drive, propagation, effective-frame spectrum, static splitting and the
/// fitted regular basis.
pub fn prepare(cfg: &RunConfig, index: usize, kerr: f64) -> StageResult<Prepared> {
    let mut clock = Clock::default();
    let dim = cfg.fock_dim;
    let params = clock.run("drive", || cfg.params(kerr))?;
    let (drive, frame, calibration) = clock.run("drive", || drive_for(cfg, &params))?;
    let prop = clock.run("propagate", || propagate_period(&drive, dim, &cfg.integrator))?;
    let (spectrum, evolution) = clock.run("spectrum", || -> kerrcat::Result<_> {
        let lab = floquet_spectrum_from_period(&prop.half, drive.period(), drive.omegad)?;
        let v = frame.operator(dim)?;
        let vt = v.adjoint();
        let u = vt.compose(&cfg.rate_period.evolution(&prop)).compose(&v);
        Ok((lab.transformed(&vt)?, u))
    })?;
    let de_effective = clock.run("effective", || -> kerrcat::Result<f64> {
        Ok(eigendecompose(&build_effective_hamiltonian(&params, dim)?)?.ground_splitting())
    })?;
    let basis = clock.run("basis", || fit_regular_basis(&spectrum, &params, dim))?;
    Ok(Prepared {
        index,
        kerr,
        params,
        drive,
        frame,
        calibration,
        unitarity_defect: prop.unitarity_defect,
        stats: prop.stats,
        tau: prop.tau,
        spectrum,
        evolution,
        de_effective,
        basis,
        timings: clock.0,
    })
}

/// Island area for the semiclassical formula.
pub fn island_for(cfg: &RunConfig, p: &EffectiveParams, d: &DriveParams) -> kerrcat::Result<f64> {
    match cfg.semiclassical.area_source {
        AreaSource::EffectiveLobe => lobe_area(&weyl_symbol_params(p)?),
        AreaSource::DrivenIsland => {
            let st = stationary_points(p)?;
            let seed = PhasePoint::new(0.5 * st.wells[1].x, 0.0);
            let sec = poincare_section(d, &[seed], 4, &SectionOptions::default())?;
            Ok(island_area(&sec, d, p, &cfg.island)?.area)
        }
    }
}

pub fn match_options(cfg: &RunConfig) -> MatchOptions {
    MatchOptions { f_min: cfg.classification.f_min, force_ground_pair: true, ..Default::default() }
}

/// Matches `prep.spectrum` in place against the regular basis, following
/// `previous` when given.
pub fn match_point(cfg: &RunConfig, prep: &mut Prepared, previous: Option<&FloquetSpectrum>) -> kerrcat::Result<()> {
    let opts = match_options(cfg);
    match previous {
        Some(prev) => match_continuation(&prep.basis.spectrum, prev, &mut prep.spectrum, &opts),
        None => match_states(&prep.basis.spectrum, &mut prep.spectrum, &opts),
    }
}

pub fn grid_for(cfg: &RunConfig, p: &EffectiveParams) -> GridSpec {
    match cfg.grid.half_width {
        Some(h) => GridSpec::square(h, cfg.grid.resolution),
        None => GridSpec::for_params(p, cfg.grid.resolution),
    }
}

pub fn retained_for(cfg: &RunConfig, p: &EffectiveParams) -> kerrcat::Result<usize> {
    let mut n = retained_states(p)?.min(cfg.fock_dim);
    if let Some(cap) = cfg.classification.max_states {
        n = n.min(cap);
    }
    Ok(n)
}

/// Localization measures on the configured window. An automatic window is
/// widened (at fixed spacing) to the suggested half-width when the retained states spill over it.
fn localize(cfg: &RunConfig, prep: &Prepared, keep: usize) -> kerrcat::Result<LocalizationReport> {
    let mut grid = grid_for(cfg, &prep.params);
    let mut widened = 0;
    loop {
        match localization_compare(&prep.basis.spectrum, &prep.spectrum, &grid, keep) {
            Err(kerrcat::Error::Window { suggested, .. }) if cfg.grid.half_width.is_none() && widened < 3 => {
                let n = (grid.nx as f64 * suggested / grid.x_max).ceil() as usize;
                grid = GridSpec::square(suggested, n);
                widened += 1;
            }
            r => return r,
        }
    }
}

/// Tunneling analysis of a matched point.
pub struct Analysis {
    pub de_floquet: f64,
    pub report: LocalizationReport,
    pub classification: ChaoticClassification,
    pub gamma0: f64,
    pub heisenberg: Option<HeisenbergCheck>,
}

pub fn analyze(cfg: &RunConfig, prep: &Prepared, clock: &mut BTreeMap<String, f64>) -> StageResult<Analysis> {
    let mut c = Clock(std::mem::take(clock));
    let out = (|| {
        let de_floquet = c.run("splitting", || quasienergy_splitting(&prep.spectrum))?;
        let keep = c.run("localization", || retained_for(cfg, &prep.params))?;
        let report = c.run("localization", || localize(cfg, prep, keep))?;
        let classification =
            c.run("classification", || classify_states(&report, cfg.classification.theta, cfg.classification.window))?;
        let gamma0 = c.run("rate", || -> kerrcat::Result<f64> {
            let proj = build_projectors(&classification, &prep.basis.spectrum)?;
            fgr_rate(&proj.chaotic, &prep.evolution, &prep.basis.spectrum.states[0])
        })?;
        let interval = cfg.rate_period.interval(prep.tau);
        let heisenberg = heisenberg_check(&classification, &prep.basis.spectrum, gamma0, interval);
        Ok(Analysis { de_floquet, report, classification, gamma0, heisenberg })
    })();
    *clock = c.0;
    out
}
