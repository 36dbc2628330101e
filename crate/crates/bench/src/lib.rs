//! Shared fixtures for the benchmarks.

use kerrcat::floquet::calibrate::seed_drive;
use kerrcat::floquet::DriveParams;
use kerrcat::EffectiveParams;

/// Reference drive seeds, per-order convention.
pub const G3: f64 = 0.02 / 3.0;
pub const G4: f64 = 1e-8 / 4.0;

pub fn params(kerr: f64, eps2_over_k: f64, delta_over_k: f64) -> EffectiveParams {
    EffectiveParams::from_ratios(kerr, eps2_over_k, delta_over_k).expect("valid ratios")
}

/// Lowest-order drive realizing `p`.
pub fn drive(p: &EffectiveParams) -> DriveParams {
    seed_drive(p, G3, G4).expect("seed drive").0
}
