//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use kerrcat::cat::{AreaSource, RatePeriod, DEFAULT_THETA, DEFAULT_WINDOW};
use kerrcat::classical::IslandOptions;
use kerrcat::floquet::PropagatorOptions;
use kerrcat::EffectiveParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full pipeline with continuation matching; CSVs, manifest and plot.
    #[default]
    Sweep,
    /// Stroboscopic sections and the regular-island boundary.
    Poincare,
    /// Husimi densities of effective states and their Floquet partners.
    Husimi,
    /// Localization measures and the regular/chaotic split.
    Classify,
    /// Re-render the splitting plot from an existing sweep.csv.
    Curve,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ratios {
    #[serde(rename = "eps2_over_K")]
    pub eps2_over_k: f64,
    #[serde(rename = "delta_over_K")]
    pub delta_over_k: f64,
}

/// How the quoted `g3`, `g4` enter the Hamiltonian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityConvention {
    /// `g_m/m · (a + a†)^m`: the quoted values are per-order couplings.
    #[default]
    PerOrder,
    /// `g_m · (a + a†)^m`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSeeds {
    pub g3: f64,
    pub g4: f64,
    #[serde(default)]
    pub convention: NonlinearityConvention,
}

impl DriveSeeds {
    /// Coefficients of `(a + a†)³` and `(a + a†)⁴`.
    pub fn coefficients(&self) -> (f64, f64) {
        match self.convention {
            NonlinearityConvention::PerOrder => (self.g3 / 3.0, self.g4 / 4.0),
            NonlinearityConvention::Literal => (self.g3, self.g4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    /// Ladder-fit refinement rounds on top of the lowest-order drive.
    pub refine_iterations: usize,
    pub fit_doublets: usize,
    pub residual_limit: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { refine_iterations: 0, fit_doublets: 4, residual_limit: 1e-2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub resolution: usize,
    /// Square window half-width; `None` scales with the well position.
    pub half_width: Option<f64>,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { resolution: 128, half_width: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationSettings {
    pub theta: f64,
    pub window: usize,
    pub f_min: f64,
    /// Cap on the retained effective states.
    pub max_states: Option<usize>,
}

impl Default for ClassificationSettings {
    fn default() -> Self {
        Self { theta: DEFAULT_THETA, window: DEFAULT_WINDOW, f_min: 0.5, max_states: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiclassicalSettings {
    pub area_source: AreaSource,
    /// Points of the rise used to fit `c₀`.
    pub fit_points: usize,
    pub hbar: f64,
}

impl Default for SemiclassicalSettings {
    fn default() -> Self {
        Self { area_source: AreaSource::DrivenIsland, fit_points: 3, hbar: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoincareSettings {
    pub seeds: usize,
    pub n_periods: usize,
}

impl Default for PoincareSettings {
    fn default() -> Self {
        Self { seeds: 24, n_periods: 300 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HusimiSettings {
    /// Lowest effective states exported together with their Floquet partners.
    pub states: usize,
}

impl Default for HusimiSettings {
    fn default() -> Self {
        Self { states: 10 }
    }
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Mode,
    pub effective: Ratios,
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<f64>,
    pub fock_dim: usize,
    pub drive: DriveSeeds,
    #[serde(default)]
    pub integrator: PropagatorOptions,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub classification: ClassificationSettings,
    #[serde(default)]
    pub rate_period: RatePeriod,
    #[serde(default)]
    pub semiclassical: SemiclassicalSettings,
    #[serde(default)]
    pub island: IslandOptions,
    #[serde(default)]
    pub poincare: PoincareSettings,
    #[serde(default)]
    pub husimi: HusimiSettings,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Accept a Fock dimension below the well-fit bound (reduced smoke runs).
    #[serde(default)]
    pub relax_fock_bound: bool,
}

fn invalid(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), message: msg.into() }
}

impl RunConfig {
    /// `4·(ε₂/K + Δ/2K)`, rounded up.
    pub fn min_fock_dim(&self) -> usize {
        (4.0 * (self.effective.eps2_over_k + 0.5 * self.effective.delta_over_k)).ceil().max(4.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        let r = self.effective;
        if !(r.eps2_over_k.is_finite() && r.eps2_over_k >= 0.0) {
            return Err(invalid("effective.eps2_over_K", format!("must be finite and non-negative, got {}", r.eps2_over_k)));
        }
        if !r.delta_over_k.is_finite() {
            return Err(invalid("effective.delta_over_K", "must be finite"));
        }
        if self.k_grid.is_empty() {
            return Err(invalid("K_grid", "must hold at least one value"));
        }
        if let Some(k) = self.k_grid.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(invalid("K_grid", format!("values must be positive and finite, got {k}")));
        }
        if let Some(w) = self.k_grid.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(invalid("K_grid", format!("must be strictly increasing, got {} then {}", w[0], w[1])));
        }
        let min = self.min_fock_dim();
        if self.fock_dim < min && !self.relax_fock_bound {
            return Err(invalid("fock_dim", format!("{} is below the well-fit bound 4·(eps2_over_K + delta_over_K/2) = {min}", self.fock_dim)));
        }
        if self.fock_dim < 4 {
            return Err(invalid("fock_dim", format!("must be at least 4, got {}", self.fock_dim)));
        }
        if !(self.drive.g3.is_finite() && self.drive.g3 != 0.0) {
            return Err(invalid("drive.g3", format!("must be finite and non-zero, got {}", self.drive.g3)));
        }
        if !self.drive.g4.is_finite() {
            return Err(invalid("drive.g4", "must be finite"));
        }
        self.integrator.validate().map_err(|e| invalid("integrator", e.to_string()))?;
        if self.grid.resolution < 2 {
            return Err(invalid("grid.resolution", format!("must be at least 2, got {}", self.grid.resolution)));
        }
        if let Some(h) = self.grid.half_width {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("grid.half_width", format!("must be positive, got {h}")));
            }
        }
        let c = self.classification;
        if !(c.theta > 0.0) {
            return Err(invalid("classification.theta", format!("must be positive, got {}", c.theta)));
        }
        if c.window == 0 {
            return Err(invalid("classification.window", "must be at least 1"));
        }
        if !(c.f_min > 0.0 && c.f_min <= 1.0) {
            return Err(invalid("classification.f_min", format!("must lie in (0, 1], got {}", c.f_min)));
        }
        if self.semiclassical.fit_points < 3 {
            return Err(invalid("semiclassical.fit_points", format!("c0 needs at least 3 points, got {}", self.semiclassical.fit_points)));
        }
        if !(self.semiclassical.hbar > 0.0) {
            return Err(invalid("semiclassical.hbar", "must be positive"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        for &k in &self.k_grid {
            EffectiveParams::from_ratios(k, r.eps2_over_k, r.delta_over_k)
                .and_then(|p| p.require_double_well())
                .map_err(|e| invalid("effective", format!("K = {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn params(&self, k: f64) -> Result<EffectiveParams> {
        Ok(EffectiveParams::from_ratios(k, self.effective.eps2_over_k, self.effective.delta_over_k)?)
    }

    /// SHA-256 of the settings that determine the numbers (output location,
    /// mode and worker count excluded), as hex.
    pub fn physics_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            for key in ["output_dir", "workers", "mode", "poincare", "husimi"] {
                m.remove(key);
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config; relative `output_dir`s stay relative to the
/// working directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&text)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}
