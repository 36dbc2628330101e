//! Adaptive explicit integrators over flat state buffers.
//!
//! Both schemes work on `&mut [T]` with `T` either `f64` or `Complex64`, so
//! the same code drives the 2-dimensional classical flow and the `N²`
//! column-batched propagator.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod adams;
pub mod dop853;

pub trait OdeScalar: Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn modulus(self) -> f64;
}

impl OdeScalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl OdeScalar for C64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

pub trait OdeSystem<T>: Sync {
    fn rhs(&self, t: f64, y: &[T], dydt: &mut [T]);
}

impl<T, F: Fn(f64, &[T], &mut [T]) + Sync> OdeSystem<T> for F {
    fn rhs(&self, t: f64, y: &[T], dydt: &mut [T]) {
        self(t, y, dydt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    AdaptiveMultistep,
    AdaptiveRungeKutta,
}

/// How per-component weighted errors are combined into one step error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorNorm {
    #[default]
    Rms,
    /// Worst component; stricter for large systems where most entries are tiny.
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Highest Adams order; ignored by Runge–Kutta.
    pub max_order: usize,
    pub norm: ErrorNorm,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-10, max_step: f64::INFINITY, initial_step: None, max_steps: 2_000_000, max_order: 12, norm: ErrorNorm::Rms }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub final_time: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {steps} steps at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("non-finite error estimate at t = {t}")]
    NonFinite { t: f64 },
}

pub fn integrate<T: OdeScalar, S: OdeSystem<T> + ?Sized>(
    kind: IntegratorKind,
    sys: &S,
    t0: f64,
    t1: f64,
    y: &mut [T],
    opts: &IntegratorOptions,
) -> Result<IntegratorStats, OdeError> {
    match kind {
        IntegratorKind::AdaptiveMultistep => adams::integrate(sys, t0, t1, y, opts),
        IntegratorKind::AdaptiveRungeKutta => dop853::integrate(sys, t0, t1, y, opts),
    }
}

/// Norm of `err` weighted by `atol + rtol·max(|y|, |y_new|)`.
pub(crate) fn weighted_rms<T: OdeScalar>(err: &[T], y: &[T], y_new: &[T], opts: &IntegratorOptions) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..err.len() {
        let sk = opts.abs_tol + opts.rel_tol * y[i].modulus().max(y_new[i].modulus());
        let r = err[i].modulus() / sk;
        match opts.norm {
            ErrorNorm::Rms => acc += r * r,
            ErrorNorm::Max => acc = acc.max(r),
        }
    }
    match opts.norm {
        ErrorNorm::Rms => (acc / err.len().max(1) as f64).sqrt(),
        ErrorNorm::Max => acc,
    }
}

/// Hairer's starting step guess for a method of the given order.
pub(crate) fn hairer_initial_step<T: OdeScalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t: f64,
    y: &[T],
    f0: &[T],
    dir: f64,
    order: i32,
    opts: &IntegratorOptions,
    stats: &mut IntegratorStats,
) -> f64 {
    let n = y.len().max(1) as f64;
    let (mut dnf, mut dny) = (0.0, 0.0);
    for i in 0..y.len() {
        let sk = opts.abs_tol + opts.rel_tol * y[i].modulus();
        dnf += (f0[i].modulus() / sk).powi(2);
        dny += (y[i].modulus() / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(opts.max_step);

    let y1: Vec<T> = y.iter().zip(f0).map(|(&yi, &fi)| yi + fi * (h * dir)).collect();
    let mut f1 = vec![T::default(); y.len()];
    sys.rhs(t + dir * h, &y1, &mut f1);
    stats.rhs_evals += 1;
    let mut der2 = 0.0;
    for i in 0..y.len() {
        let sk = opts.abs_tol + opts.rel_tol * y[i].modulus();
        der2 += ((f1[i] - f0[i]).modulus() / sk).powi(2);
    }
    let der2 = (der2 / n).sqrt() / h;
    let der12 = der2.abs().max((dnf / n).sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / order as f64) };
    (100.0 * h).min(h1).min(opts.max_step)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub(crate) fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(8);
        for p in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}: {q}");
        }
    }

    fn harmonic(_t: f64, y: &[f64], d: &mut [f64]) {
        d[0] = y[1];
        d[1] = -y[0];
    }

    fn check_kind(kind: IntegratorKind) {
        let opts = IntegratorOptions { rel_tol: 1e-12, abs_tol: 1e-12, ..Default::default() };
        let mut y = [1.0, 0.0];
        let t1 = 10.0;
        let stats = integrate(kind, &harmonic, 0.0, t1, &mut y, &opts).unwrap();
        assert!((y[0] - t1.cos()).abs() < 1e-9, "{kind:?}: {} vs {}", y[0], t1.cos());
        assert!((y[1] + t1.sin()).abs() < 1e-9);
        assert!(stats.accepted > 0);
        assert_eq!(stats.final_time, t1);
    }

    #[test]
    fn harmonic_oscillator_both_kinds() {
        check_kind(IntegratorKind::AdaptiveRungeKutta);
        check_kind(IntegratorKind::AdaptiveMultistep);
    }

    #[test]
    fn complex_rotation() {
        // dz/dt = -i ω z
        let w = 3.7;
        let sys = move |_t: f64, y: &[C64], d: &mut [C64]| d[0] = C64::new(0.0, -w) * y[0];
        for kind in [IntegratorKind::AdaptiveRungeKutta, IntegratorKind::AdaptiveMultistep] {
            let mut y = [C64::new(1.0, 0.0)];
            integrate(kind, &sys, 0.0, 2.0, &mut y, &IntegratorOptions::default()).unwrap();
            assert!((y[0] - C64::from_polar(1.0, -2.0 * w)).norm() < 1e-8, "{kind:?}");
        }
    }

    #[test]
    fn backward_integration() {
        let opts = IntegratorOptions { rel_tol: 1e-11, abs_tol: 1e-11, ..Default::default() };
        let mut y = [1.0, 0.0];
        dop853::integrate(&harmonic, 0.0, -2.0, &mut y, &opts).unwrap();
        assert!((y[0] - 2f64.cos()).abs() < 1e-9);
        assert!((y[1] - 2f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn max_steps_reported() {
        let opts = IntegratorOptions { max_steps: 3, ..Default::default() };
        let mut y = [1.0, 0.0];
        let err = dop853::integrate(&harmonic, 0.0, 100.0, &mut y, &opts).unwrap_err();
        assert!(matches!(err, OdeError::MaxSteps { .. }));
    }
}
