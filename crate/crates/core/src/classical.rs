//! Classical limit: the effective metapotential and the stroboscopic
//! dynamics of the driven oscillator.
//!
//! Quadratures follow the phase-space module, `α = (x + ip)/√2`. The
//! effective symbol `H = Δ|α|² − K|α|⁴ + ε₂(α² + α*²)` has its two wells at
//! `x* = ±√((Δ + 2ε₂)/K)` as maxima of `H` (minima of the metapotential
//! `−H`) and a hyperbolic point at the origin.
//!
//! Driven orbits are integrated in the lab frame and only mapped to the
//! plotting frame at the sampling instants `t = kτ`: the linear-response
//! displacement is removed, the `ω_d/2` rotation applied, and the squeezing
//! axis rotated onto `x` so that the islands sit where the effective wells do.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::calibrate::{frame_for, response};
use crate::floquet::DriveParams;
use crate::fockspace::EffectiveParams;
use crate::io::fmt_f64;
use crate::ode::{self, IntegratorKind, IntegratorOptions};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p }
    }

    pub fn alpha(self) -> C64 {
        C64::new(self.x, self.p) / SQRT2
    }

    pub fn from_alpha(a: C64) -> Self {
        Self { x: SQRT2 * a.re, p: SQRT2 * a.im }
    }

    fn dist(self, o: PhasePoint) -> f64 {
        (self.x - o.x).hypot(self.p - o.p)
    }
}

pub fn effective_classical_hamiltonian(q: PhasePoint, p: &EffectiveParams) -> f64 {
    let r2 = 0.5 * (q.x * q.x + q.p * q.p);
    p.delta * r2 - p.kerr * r2 * r2 + p.eps2 * (q.x * q.x - q.p * q.p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoints {
    /// Left well first.
    pub wells: [PhasePoint; 2],
    pub saddle: PhasePoint,
}

pub fn stationary_points(p: &EffectiveParams) -> Result<StationaryPoints> {
    p.require_double_well()?;
    let x = ((p.delta + 2.0 * p.eps2) / p.kerr).sqrt();
    Ok(StationaryPoints { wells: [PhasePoint::new(-x, 0.0), PhasePoint::new(x, 0.0)], saddle: PhasePoint::default() })
}

/// Central finite-difference Hessian of the metapotential `−H` at `q`.
pub fn metapotential_hessian(q: PhasePoint, p: &EffectiveParams) -> [[f64; 2]; 2] {
    let scale = q.x.abs().max(q.p.abs()).max(1.0);
    let h = 1e-4 * scale;
    let v = |dx: f64, dp: f64| -effective_classical_hamiltonian(PhasePoint::new(q.x + dx, q.p + dp), p);
    let f0 = v(0.0, 0.0);
    let hxx = (v(h, 0.0) - 2.0 * f0 + v(-h, 0.0)) / (h * h);
    let hpp = (v(0.0, h) - 2.0 * f0 + v(0.0, -h)) / (h * h);
    let hxp = (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4.0 * h * h);
    [[hxx, hxp], [hxp, hpp]]
}

/// Polar form of the zero level set: `r²(φ) = (2Δ + 4ε₂ cos 2φ)/K`.
fn lobe_radius_sq(p: &EffectiveParams, phi: f64) -> f64 {
    (2.0 * p.delta + 4.0 * p.eps2 * (2.0 * phi).cos()) / p.kerr
}

/// Half opening angle of the right lobe.
fn lobe_half_angle(p: &EffectiveParams) -> f64 {
    0.5 * (-p.delta / (2.0 * p.eps2)).clamp(-1.0, 1.0).acos()
}

/// The `H = 0` figure-eight through the saddle, `n` points per lobe,
/// right lobe first. Each lobe starts and ends at the origin.
pub fn separatrix(p: &EffectiveParams, n: usize) -> Result<Vec<PhasePoint>> {
    p.require_double_well()?;
    if n < 3 {
        return Err(Error::Contract(format!("separatrix needs at least 3 samples per lobe, got {n}")));
    }
    let phi_m = lobe_half_angle(p);
    let mut out = Vec::with_capacity(2 * n);
    for offset in [0.0, PI] {
        for k in 0..n {
            let phi = -phi_m + 2.0 * phi_m * k as f64 / (n - 1) as f64;
            let r = lobe_radius_sq(p, phi).max(0.0).sqrt();
            out.push(PhasePoint::new(r * (phi + offset).cos(), r * (phi + offset).sin()));
        }
    }
    Ok(out)
}

/// Parameters of the Weyl symbol of the effective Hamiltonian.
///
/// `−K a†²a²` has Weyl symbol `−K|α|⁴ + 2K|α|² − K/2`, so the classical
/// dynamics that the quantum model approaches is the one with `Δ + 2K`.
/// The driven oscillator's islands converge to the lobes of this symbol.
pub fn weyl_symbol_params(p: &EffectiveParams) -> Result<EffectiveParams> {
    EffectiveParams::new(p.kerr, p.eps2, p.delta + 2.0 * p.kerr)
}

/// Area of one separatrix lobe, `½∮ r² dφ`, by Gauss–Legendre quadrature.
pub fn lobe_area(p: &EffectiveParams) -> Result<f64> {
    p.require_double_well()?;
    let phi_m = lobe_half_angle(p);
    let (nodes, weights) = ode::gauss_legendre_unit(40);
    Ok(nodes.iter().zip(&weights).map(|(&s, &w)| w * 0.5 * lobe_radius_sq(p, -phi_m + 2.0 * phi_m * s)).sum::<f64>() * 2.0 * phi_m)
}

/// Velocity `(dx/dt, dp/dt)` of the lab-frame classical symbol
/// `ω₀(x² + p²)/2 + g₃(√2x)³ + g₄(√2x)⁴ + √2 Ω_d p cos ω_d t`.
pub fn driven_classical_eom(t: f64, q: PhasePoint, d: &DriveParams) -> (f64, f64) {
    let x = q.x;
    let dxdt = d.omega0 * q.p + SQRT2 * d.drive * (d.omegad * t).cos();
    let dpdt = -(d.omega0 * x + 6.0 * SQRT2 * d.g3 * x * x + 16.0 * d.g4 * x * x * x);
    (dxdt, dpdt)
}

/// Value of the driven classical symbol.
pub fn driven_classical_energy(t: f64, q: PhasePoint, d: &DriveParams) -> f64 {
    let x = q.x;
    0.5 * d.omega0 * (x * x + q.p * q.p)
        + 2.0 * SQRT2 * d.g3 * x.powi(3)
        + 4.0 * d.g4 * x.powi(4)
        + SQRT2 * d.drive * q.p * (d.omegad * t).cos()
}

fn tangent_rate(x: f64, d: &DriveParams) -> f64 {
    d.omega0 + 12.0 * SQRT2 * d.g3 * x + 48.0 * d.g4 * x * x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectionFrame {
    Rotating,
    Lab,
}

/// Map between lab quadratures and the plotting frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameMap {
    response: (C64, C64),
    theta: f64,
    omegad: f64,
}

impl FrameMap {
    pub fn new(d: &DriveParams) -> Self {
        Self { response: response(d), theta: frame_for(d).theta, omegad: d.omegad }
    }

    /// Linear-response displacement `a_c(t) = A e^{−iω_d t} + B e^{iω_d t}`.
    fn displacement(&self, t: f64) -> C64 {
        let ph = C64::from_polar(1.0, -self.omegad * t);
        self.response.0 * ph + self.response.1 * ph.conj()
    }

    pub fn to_plot(&self, t: f64, lab: PhasePoint) -> PhasePoint {
        let rot = C64::from_polar(1.0, 0.5 * self.omegad * t - self.theta);
        PhasePoint::from_alpha((lab.alpha() - self.displacement(t)) * rot)
    }

    pub fn to_lab(&self, t: f64, plot: PhasePoint) -> PhasePoint {
        let rot = C64::from_polar(1.0, self.theta - 0.5 * self.omegad * t);
        PhasePoint::from_alpha(plot.alpha() * rot + self.displacement(t))
    }
}

fn orbit_options(tol: f64) -> IntegratorOptions {
    IntegratorOptions { rel_tol: tol, abs_tol: tol, ..Default::default() }
}

/// Integrates `y = (x, p)` or `(x, p, δx, δp)` over `[t0, t1]`.
fn advance(d: &DriveParams, y: &mut [f64], t0: f64, t1: f64, tol: f64) -> Result<()> {
    let tangent = y.len() == 4;
    let sys = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (vx, vp) = driven_classical_eom(t, PhasePoint::new(y[0], y[1]), d);
        dy[0] = vx;
        dy[1] = vp;
        if tangent {
            dy[2] = d.omega0 * y[3];
            dy[3] = -tangent_rate(y[0], d) * y[2];
        }
    };
    ode::integrate(IntegratorKind::AdaptiveRungeKutta, &sys, t0, t1, y, &orbit_options(tol)).map_err(|e| Error::Propagation(e.to_string()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    /// Seed in the section frame.
    pub seed: PhasePoint,
    /// Points at `t = kτ`, `k = 0, 1, …`, in the section frame.
    pub points: Vec<PhasePoint>,
    pub escaped: bool,
    pub lyapunov: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareSection {
    pub orbits: Vec<Orbit>,
    pub frame: SectionFrame,
    pub tau: f64,
}

impl PoincareSection {
    /// Columns `seed_id, k, x, p, escaped, lyapunov`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "seed_id,k,x,p,escaped,lyapunov")?;
        for (i, o) in self.orbits.iter().enumerate() {
            let lyap = o.lyapunov.map(fmt_f64).unwrap_or_default();
            for (k, q) in o.points.iter().enumerate() {
                writeln!(w, "{i},{k},{},{},{},{lyap}", fmt_f64(q.x), fmt_f64(q.p), o.escaped)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SectionOptions {
    pub tolerance: f64,
    pub frame: SectionFrame,
    /// Escape radius in the section frame; `None` uses 3× the well separation
    /// of `reference` (or no limit without one).
    pub escape_radius: Option<f64>,
    pub with_lyapunov: bool,
}

impl Default for SectionOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, frame: SectionFrame::Rotating, escape_radius: None, with_lyapunov: false }
    }
}

/// Escape radius of 3× the well separation of `p`.
pub fn default_escape_radius(p: &EffectiveParams) -> f64 {
    6.0 * ((p.delta + 2.0 * p.eps2) / p.kerr).max(0.0).sqrt()
}

fn run_orbit(d: &DriveParams, map: &FrameMap, seed: PhasePoint, n_periods: usize, opts: &SectionOptions) -> Result<Orbit> {
    let tau = d.tau();
    let to_frame = |t: f64, q: PhasePoint| match opts.frame {
        SectionFrame::Rotating => map.to_plot(t, q),
        SectionFrame::Lab => q,
    };
    let lab0 = match opts.frame {
        SectionFrame::Rotating => map.to_lab(0.0, seed),
        SectionFrame::Lab => seed,
    };
    let mut y = vec![lab0.x, lab0.p, SQRT2.recip(), SQRT2.recip()];
    if !opts.with_lyapunov {
        y.truncate(2);
    }
    let mut points = vec![seed];
    let mut escaped = false;
    let mut log_growth = 0.0;
    for k in 0..n_periods {
        let t0 = k as f64 * tau;
        if advance(d, &mut y, t0, t0 + tau, opts.tolerance).is_err() {
            escaped = true;
            break;
        }
        let q = to_frame(t0 + tau, PhasePoint::new(y[0], y[1]));
        if !q.x.is_finite() || opts.escape_radius.is_some_and(|r| q.x.hypot(q.p) > r) {
            escaped = true;
            break;
        }
        points.push(q);
        if opts.with_lyapunov {
            let norm = y[2].hypot(y[3]);
            log_growth += norm.ln();
            y[2] /= norm;
            y[3] /= norm;
        }
    }
    let lyapunov = (opts.with_lyapunov && !escaped && n_periods > 0).then(|| log_growth / (n_periods as f64 * tau));
    Ok(Orbit { seed, points, escaped, lyapunov })
}

/// Stroboscopic section at `τ = 4π/ω_d`, seeds given in the section frame.
pub fn poincare_section(d: &DriveParams, seeds: &[PhasePoint], n_periods: usize, opts: &SectionOptions) -> Result<PoincareSection> {
    d.validate()?;
    let map = FrameMap::new(d);
    let orbits = seeds.par_iter().map(|&s| run_orbit(d, &map, s, n_periods, opts)).collect::<Result<Vec<_>>>()?;
    Ok(PoincareSection { orbits, frame: opts.frame, tau: d.tau() })
}

/// Benettin estimate of the largest Lyapunov exponent per unit time, with
/// the tangent vector renormalized every period. `seed` is in the rotating
/// section frame; escaping orbits return `f64::INFINITY`.
pub fn largest_lyapunov(d: &DriveParams, seed: PhasePoint, n_periods: usize) -> Result<f64> {
    let opts = SectionOptions { with_lyapunov: true, ..Default::default() };
    let o = run_orbit(d, &FrameMap::new(d), seed, n_periods, &opts)?;
    Ok(o.lyapunov.unwrap_or(f64::INFINITY))
}

/// Mean exponential growth factor of nearby orbits (MEGNO) of the
/// stroboscopic map: tends to 2 on invariant tori, 0 at elliptic fixed
/// points and grows like `λτn/2` in chaotic regions.
/// Orbits leaving the disc of radius `escape` (section frame) score infinity.
pub fn megno(d: &DriveParams, seed: PhasePoint, n_periods: usize, escape: Option<f64>) -> Result<f64> {
    let map = FrameMap::new(d);
    let q = map.to_lab(0.0, seed);
    let tau = d.tau();
    let mut y = [q.x, q.p, SQRT2.recip(), SQRT2.recip()];
    let (mut weighted, mut mean) = (0.0, 0.0);
    for k in 1..=n_periods {
        let t0 = (k - 1) as f64 * tau;
        if advance(d, &mut y, t0, t0 + tau, 1e-12).is_err() || !y[0].is_finite() {
            return Ok(f64::INFINITY);
        }
        if let Some(r) = escape {
            let q = map.to_plot(t0 + tau, PhasePoint::new(y[0], y[1]));
            if q.x.hypot(q.p) > r {
                return Ok(f64::INFINITY);
            }
        }
        let norm = y[2].hypot(y[3]);
        y[2] /= norm;
        y[3] /= norm;
        weighted += k as f64 * norm.ln();
        mean += 2.0 * weighted / k as f64;
    }
    Ok(mean / n_periods.max(1) as f64)
}

/// Image of `seed` (section frame) after one period.
pub fn stroboscopic_map(d: &DriveParams, seed: PhasePoint, tol: f64) -> Result<PhasePoint> {
    let map = FrameMap::new(d);
    let q = map.to_lab(0.0, seed);
    let mut y = [q.x, q.p];
    advance(d, &mut y, 0.0, d.tau(), tol)?;
    Ok(map.to_plot(d.tau(), PhasePoint::new(y[0], y[1])))
}

/// Fixed point of the stroboscopic map near `guess`, by Newton iteration
/// with a finite-difference Jacobian.
pub fn stroboscopic_fixed_point(d: &DriveParams, guess: PhasePoint) -> Result<PhasePoint> {
    let mut z = guess;
    let scale = guess.x.hypot(guess.p).max(1.0);
    for _ in 0..30 {
        let f = stroboscopic_map(d, z, 1e-13)?;
        let (rx, rp) = (f.x - z.x, f.p - z.p);
        if rx.hypot(rp) < 1e-11 * scale {
            return Ok(z);
        }
        let h = 1e-6 * scale;
        let fx = stroboscopic_map(d, PhasePoint::new(z.x + h, z.p), 1e-13)?;
        let fp = stroboscopic_map(d, PhasePoint::new(z.x, z.p + h), 1e-13)?;
        let j = [[(fx.x - f.x) / h - 1.0, (fp.x - f.x) / h], [(fx.p - f.p) / h, (fp.p - f.p) / h - 1.0]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        z.x -= (j[1][1] * rx - j[0][1] * rp) / det;
        z.p -= (-j[1][0] * rx + j[0][0] * rp) / det;
    }
    Err(Error::Fit(format!("stroboscopic fixed point near ({}, {}) did not converge", guess.x, guess.p)))
}

/// Shoelace area of a polygon (absolute value).
pub fn polygon_area(pts: &[PhasePoint]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a.x * b.p - b.x * a.p;
    }
    0.5 * s.abs()
}

/// Orders points by angle around `center`, turning an invariant curve
/// sampled stroboscopically into a polygon.
pub fn order_around(center: PhasePoint, pts: &[PhasePoint]) -> Vec<PhasePoint> {
    let mut v = pts.to_vec();
    v.sort_by(|a, b| (a.p - center.p).atan2(a.x - center.x).total_cmp(&(b.p - center.p).atan2(b.x - center.x)));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Well {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IslandGeometry {
    pub area: f64,
    /// Last regular invariant curve, ordered around the island centre.
    pub boundary: Vec<PhasePoint>,
    pub which_well: Well,
    pub center: PhasePoint,
    /// Seed fraction along the centre→saddle ray of the last regular orbit.
    pub boundary_fraction: f64,
    /// MEGNO value above which a seed counts as chaotic.
    pub chaos_threshold: f64,
    pub n_periods: usize,
    pub n_ebk: u64,
}

impl IslandGeometry {
    pub fn write_boundary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,p")?;
        for q in &self.boundary {
            writeln!(w, "{},{}", fmt_f64(q.x), fmt_f64(q.p))?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "A": self.area, "n_ebk": self.n_ebk, "which_well": self.which_well })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IslandOptions {
    pub well: Well,
    /// Integration length in small-oscillation periods of the effective well.
    pub slow_cycles: f64,
    /// Fixed number of drive periods, overriding `slow_cycles`.
    pub n_periods: Option<usize>,
    pub bisection_steps: usize,
    /// Ray fractions of the deep-island reference seeds.
    pub reference_fractions: [f64; 3],
    /// Chaos threshold as a multiple of the reference median.
    pub threshold_factor: f64,
    /// Lowest threshold: quasi-periodic orbits settle at 2.
    pub threshold_floor: f64,
    /// Outermost seed tried, as a fraction of the centre→saddle distance.
    pub outer_fraction: f64,
}

impl Default for IslandOptions {
    fn default() -> Self {
        Self {
            well: Well::Right,
            slow_cycles: 30.0,
            n_periods: None,
            bisection_steps: 12,
            reference_fractions: [0.1, 0.15, 0.2],
            threshold_factor: 5.0,
            threshold_floor: 4.0,
            outer_fraction: 0.999,
        }
    }
}

/// Small-oscillation frequency `√(8ε₂(Δ + 2ε₂))` of the effective wells.
pub fn well_frequency(p: &EffectiveParams) -> Result<f64> {
    p.require_double_well()?;
    Ok((8.0 * p.eps2 * (p.delta + 2.0 * p.eps2)).sqrt())
}

/// Drive periods `τ` spanning `cycles` small-oscillation periods.
pub fn periods_for_cycles(d: &DriveParams, p: &EffectiveParams, cycles: f64) -> Result<usize> {
    let slow = 2.0 * PI / well_frequency(p)?;
    Ok((cycles * slow / d.tau()).ceil().max(1.0) as usize)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Area of the regular island around one well.
///
/// Seeds lie on the ray from the island centre (the stroboscopic fixed
/// point nearest the effective well of `p`) to the saddle. A seed is
/// chaotic when its MEGNO exceeds `threshold_factor` times the median of
/// deep-island references (and at least `threshold_floor`); the boundary
/// between the last regular and first chaotic seed is located by bisection
/// and the orbit of the last regular seed gives the area. `section` must
/// hold at least one bounded orbit.
pub fn island_area(section: &PoincareSection, d: &DriveParams, p: &EffectiveParams, opts: &IslandOptions) -> Result<IslandGeometry> {
    if section.frame != SectionFrame::Rotating {
        return Err(Error::Contract("island search needs a rotating-frame section".into()));
    }
    if section.orbits.iter().all(|o| o.escaped) {
        return Err(Error::Contract("section has no bounded orbit".into()));
    }
    let st = stationary_points(p)?;
    let well = match opts.well {
        Well::Left => st.wells[0],
        Well::Right => st.wells[1],
    };
    let n_periods = match opts.n_periods {
        Some(n) => n,
        None => periods_for_cycles(d, p, opts.slow_cycles)?,
    };
    let center = stroboscopic_fixed_point(d, well).unwrap_or(well);
    let at = |s: f64| PhasePoint::new(center.x + s * (st.saddle.x - center.x), center.p + s * (st.saddle.p - center.p));
    let escape = default_escape_radius(p);
    let indicator = |s: f64| megno(d, at(s), n_periods, Some(escape));

    let refs = opts.reference_fractions.par_iter().map(|&s| indicator(s)).collect::<Result<Vec<_>>>()?;
    let ref_median = median(refs.clone());
    let threshold = if ref_median.is_finite() { (opts.threshold_factor * ref_median).max(opts.threshold_floor) } else { opts.threshold_floor };
    let regular = |s: f64| -> Result<bool> { Ok(indicator(s)? <= threshold) };

    let vanished = IslandGeometry {
        area: 0.0,
        boundary: Vec::new(),
        which_well: opts.well,
        center,
        boundary_fraction: 0.0,
        chaos_threshold: threshold,
        n_periods,
        n_ebk: 0,
    };
    let s0 = opts.reference_fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let refs_regular = refs.iter().all(|r| r.is_finite() && *r <= opts.threshold_floor);
    // With chaotic references the search falls back to the segment between
    // the centre and the innermost reference.
    let (mut lo, mut hi) = if refs_regular { (s0, opts.outer_fraction) } else { (0.0, s0) };
    if refs_regular && regular(hi)? {
        lo = hi;
    } else {
        for _ in 0..opts.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if regular(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if lo == 0.0 {
        return Ok(vanished);
    }
    let sec_opts = SectionOptions { escape_radius: Some(escape), ..Default::default() };
    let orbit = run_orbit(d, &FrameMap::new(d), at(lo), n_periods, &sec_opts)?;
    if orbit.escaped {
        return Ok(vanished);
    }
    let boundary = order_around(center, &orbit.points);
    let area = polygon_area(&boundary);
    Ok(IslandGeometry { area, boundary, boundary_fraction: lo, n_ebk: count_well_states(area), ..vanished })
}

/// EBK count `⌊A/2π + 1/2⌋` (ħ = 1).
pub fn count_well_states(area: f64) -> u64 {
    if !(area > 0.0) {
        return 0;
    }
    (area / (2.0 * PI) + 0.5).floor() as u64
}

/// Convex hull by Andrew's monotone chain, counter-clockwise.
pub fn convex_hull(pts: &[PhasePoint]) -> Vec<PhasePoint> {
    let mut v = pts.to_vec();
    v.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.p.total_cmp(&b.p)));
    if v.len() < 3 {
        return v;
    }
    let cross = |o: PhasePoint, a: PhasePoint, b: PhasePoint| (a.x - o.x) * (b.p - o.p) - (a.p - o.p) * (b.x - o.x);
    let mut hull: Vec<PhasePoint> = Vec::with_capacity(2 * v.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &PhasePoint>> = if pass == 0 { Box::new(v.iter()) } else { Box::new(v.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceChain {
    pub seed_fraction: f64,
    /// Number of separate angular clusters around the island centre.
    pub members: usize,
    /// Convex-hull area of the largest member.
    pub member_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceAudit {
    pub chains: Vec<ResonanceChain>,
    pub largest_area: f64,
    /// `largest_area / 2π`: below one, a chain holds less than a Planck cell.
    pub largest_in_planck_cells: f64,
}

/// Scans regular orbits between the island centre and `max_fraction` of the
/// way to the saddle and flags those whose stroboscopic points split into
/// separate angular clusters, the signature of a resonance chain.
pub fn resonance_audit(d: &DriveParams, p: &EffectiveParams, seeds: usize, n_periods: usize, max_fraction: f64) -> Result<ResonanceAudit> {
    let st = stationary_points(p)?;
    let center = stroboscopic_fixed_point(d, st.wells[1]).unwrap_or(st.wells[1]);
    let map = FrameMap::new(d);
    let fractions: Vec<f64> = (1..=seeds).map(|i| max_fraction * i as f64 / seeds as f64).collect();
    let opts = SectionOptions::default();
    let orbits = fractions
        .par_iter()
        .map(|&s| run_orbit(d, &map, PhasePoint::new(center.x * (1.0 - s), center.p * (1.0 - s)), n_periods, &opts))
        .collect::<Result<Vec<_>>>()?;
    const BINS: usize = 72;
    let mut chains = Vec::new();
    for (s, o) in fractions.iter().zip(&orbits) {
        if o.escaped || o.points.len() < 4 * BINS {
            continue;
        }
        let bin = |q: &PhasePoint| {
            let a = (q.p - center.p).atan2(q.x - center.x) + PI;
            ((a / (2.0 * PI) * BINS as f64) as usize).min(BINS - 1)
        };
        let mut occupied = [false; BINS];
        for q in &o.points {
            occupied[bin(q)] = true;
        }
        let Some(first_gap) = occupied.iter().position(|b| !b) else { continue };
        // Walk the bins once starting after a gap, collecting clusters.
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let mut open = false;
        for k in 1..=BINS {
            let b = (first_gap + k) % BINS;
            if occupied[b] {
                if !open {
                    clusters.push(Vec::new());
                    open = true;
                }
                clusters.last_mut().unwrap().push(b);
            } else {
                open = false;
            }
        }
        if clusters.len() < 2 {
            continue;
        }
        let mut member_area = 0.0f64;
        for c in &clusters {
            let pts: Vec<PhasePoint> = o.points.iter().filter(|q| c.contains(&bin(q))).copied().collect();
            member_area = member_area.max(polygon_area(&convex_hull(&pts)));
        }
        chains.push(ResonanceChain { seed_fraction: *s, members: clusters.len(), member_area });
    }
    let largest_area = chains.iter().map(|c| c.member_area).fold(0.0, f64::max);
    Ok(ResonanceAudit { chains, largest_area, largest_in_planck_cells: largest_area / (2.0 * PI) })
}

/// Symmetric Hausdorff distance between a point set and its reflection
/// through the origin.
pub fn reflection_hausdorff(pts: &[PhasePoint]) -> f64 {
    let reflected: Vec<PhasePoint> = pts.iter().map(|q| PhasePoint::new(-q.x, -q.p)).collect();
    let one_way = |a: &[PhasePoint], b: &[PhasePoint]| {
        a.par_iter().map(|q| b.iter().map(|r| q.dist(*r)).fold(f64::INFINITY, f64::min)).reduce(|| 0.0, f64::max)
    };
    one_way(pts, &reflected).max(one_way(&reflected, pts))
}
