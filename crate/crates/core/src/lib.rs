//! Chaos-assisted tunneling in the driven Kerr parametric oscillator.
//!
//! The crate compares the static effective Hamiltonian against the full
//! period-doubled Floquet dynamics of the lab-frame drive and provides the
//! tools used to explain the difference: Husimi localization measures,
//! classical stroboscopic sections, projector-based decay rates and the
//! semiclassical splitting formula.

pub mod cat;
pub mod classical;
pub mod error;
pub mod floquet;
pub mod fockspace;
pub mod io;
pub mod ode;
pub mod phasespace;

pub use error::{Error, Result};
pub use fockspace::{EffectiveParams, FockOperator, Spectrum, StateVector};
pub use num_complex::Complex64 as C64;
