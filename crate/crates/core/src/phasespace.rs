//! Husimi Q distributions and phase-space localization measures.
//!
//! Conventions: `α = (x + ip)/√2` with ħ = 1, and the grid density is
//! normalized so that `Σ Q Δx Δp = 1`. With this choice the participation
//! number `1/Σ Q² Δx Δp` is an occupied area and the Wehrl entropy is the
//! log of one; a coherent state gives `4π` and `1 + ln 2π`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::FloquetSpectrum;
use crate::fockspace::{EffectiveParams, Spectrum, StateVector};
use crate::io::fmt_f64;

/// Largest probability allowed to fall outside the window.
pub const WINDOW_LEAKAGE: f64 = 1e-4;

pub const DEFAULT_RESOLUTION: usize = 256;

/// Uniform grid; both end points are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl GridSpec {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self { x_min: -half_width, x_max: half_width, p_min: -half_width, p_max: half_width, nx: n, np: n }
    }

    /// Square window reaching 1.5 times the well position `√(2(Δ + 2ε₂)/K)`,
    /// and never narrower than a vacuum needs.
    pub fn for_params(p: &EffectiveParams, n: usize) -> Self {
        let reach = (2.0 * (p.delta + 2.0 * p.eps2) / p.kerr).max(0.0).sqrt();
        Self::square((1.5 * reach).max(6.0), n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.np < 2 {
            return Err(Error::Contract(format!("grid needs at least 2 points per axis, got {}×{}", self.nx, self.np)));
        }
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if !ok(self.x_min, self.x_max) || !ok(self.p_min, self.p_max) {
            return Err(Error::Contract(format!("degenerate grid bounds {self:?}")));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.np - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_min + i as f64 * self.dx()).collect()
    }

    pub fn ps(&self) -> Vec<f64> {
        (0..self.np).map(|j| self.p_min + j as f64 * self.dp()).collect()
    }

    /// The same window at twice the resolution (shared end points).
    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx - 1, np: 2 * self.np - 1, ..*self }
    }
}

/// `Q` sampled on a grid, stored row-major with rows indexed by `p`.
#[derive(Clone, Debug)]
pub struct HusimiGrid {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    pub q: Vec<f64>,
    pub dx: f64,
    pub dp: f64,
    /// Raw `Σ q Δx Δp` before normalization: the probability inside the window.
    pub captured: f64,
}

impl HusimiGrid {
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.q[ip * self.xs.len() + ix]
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum::<f64>() * self.dx * self.dp
    }

    /// Grid point of the largest `Q`.
    pub fn peak(&self) -> (f64, f64) {
        let (k, _) = self.q.iter().enumerate().fold((0, f64::MIN), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        let nx = self.xs.len();
        (self.xs[k % nx], self.ps[k / nx])
    }

    /// Long format `x,p,Q`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,p,Q")?;
        for (ip, &p) in self.ps.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                writeln!(w, "{},{},{}", fmt_f64(x), fmt_f64(p), fmt_f64(self.at(ix, ip)))?;
            }
        }
        Ok(())
    }

    /// Raw row-major little-endian `f64`, rows indexed by `p`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(self.q.len() * 8);
        for v in &self.q {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// `⟨α|n⟩ = e^{−|α|²/2} (α*)ⁿ/√n!` for every grid point of one `p` row,
/// as an `nx × dim` block.
fn coherent_row(xs: &[f64], p: f64, dim: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::zeros(xs.len(), dim);
    for (i, &x) in xs.iter().enumerate() {
        let ac = C64::new(x, -p) / 2f64.sqrt();
        let mut term = C64::new((-0.25 * (x * x + p * p)).exp(), 0.0);
        m[(i, 0)] = term;
        for n in 1..dim {
            term = term * ac / (n as f64).sqrt();
            m[(i, n)] = term;
        }
    }
    m
}

/// Husimi grids of several states sharing one window.
pub fn husimi_many(states: &[&StateVector], spec: &GridSpec) -> Result<Vec<HusimiGrid>> {
    spec.validate()?;
    let Some(first) = states.first() else { return Ok(Vec::new()) };
    let dim = first.dim();
    if states.iter().any(|s| s.dim() != dim) {
        return Err(Error::Contract("husimi states must share one dimension".into()));
    }
    let psi = DMatrix::from_fn(dim, states.len(), |n, s| states[s].amplitudes()[n]);
    let (xs, ps) = (spec.xs(), spec.ps());
    let rows: Vec<DMatrix<C64>> = ps.par_iter().map(|&p| coherent_row(&xs, p, dim) * &psi).collect();
    let (dx, dp) = (spec.dx(), spec.dp());
    let mut out = Vec::with_capacity(states.len());
    for s in 0..states.len() {
        let mut q = Vec::with_capacity(xs.len() * ps.len());
        for r in &rows {
            q.extend(r.column(s).iter().map(|z| z.norm_sqr() / (2.0 * PI)));
        }
        let captured = q.iter().sum::<f64>() * dx * dp;
        let leak = 1.0 - captured;
        if leak > WINDOW_LEAKAGE {
            let radius = (2.0 * states[s].mean_photon_number() + 1.0).sqrt();
            let half = spec.x_max.abs().max(spec.x_min.abs()).max(spec.p_max.abs()).max(spec.p_min.abs());
            return Err(Error::Window { boundary_mass: leak, suggested: (1.5 * half).max(2.0 * radius + 6.0) });
        }
        q.iter_mut().for_each(|v| *v /= captured);
        out.push(HusimiGrid { xs: xs.clone(), ps: ps.clone(), q, dx, dp, captured });
    }
    Ok(out)
}

pub fn husimi(psi: &StateVector, spec: &GridSpec) -> Result<HusimiGrid> {
    Ok(husimi_many(&[psi], spec)?.remove(0))
}

/// Participation number `1/Σ Q² Δx Δp`, an effective occupied area.
pub fn ipn(g: &HusimiGrid) -> f64 {
    1.0 / (g.q.iter().map(|v| v * v).sum::<f64>() * g.dx * g.dp)
}

/// `S = −Σ Q ln Q Δx Δp` with `0 ln 0 = 0`.
pub fn wehrl_entropy(g: &HusimiGrid) -> f64 {
    -g.q.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>() * g.dx * g.dp
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    /// Effective index; `None` for an unmatched Floquet mode.
    pub index: Option<usize>,
    pub floquet_index: Option<usize>,
    pub ipn_eff: Option<f64>,
    pub ipn_floquet: Option<f64>,
    pub wehrl_eff: Option<f64>,
    pub wehrl_floquet: Option<f64>,
    pub fidelity: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// One record per requested effective state, in effective order.
    pub states: Vec<LocalizationRecord>,
    /// Floquet modes without an effective partner.
    pub unmatched: Vec<LocalizationRecord>,
    /// Unmatched modes left out because they leak out of the window.
    pub skipped: Vec<usize>,
}

impl LocalizationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,floquet_index,ipn_eff,ipn_floquet,wehrl_eff,wehrl_floquet,fidelity")?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let idx = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
        for r in self.states.iter().chain(&self.unmatched) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                idx(r.index),
                idx(r.floquet_index),
                opt(r.ipn_eff),
                opt(r.ipn_floquet),
                opt(r.wehrl_eff),
                opt(r.wehrl_floquet),
                opt(r.fidelity)
            )?;
        }
        Ok(())
    }
}

/// IPN and Wehrl entropy of the first `count` effective states and their
/// matched Floquet modes. `eff` and `fs.modes` must share one frame.
pub fn localization_compare(eff: &Spectrum, fs: &FloquetSpectrum, spec: &GridSpec, count: usize) -> Result<LocalizationReport> {
    if count > eff.len() {
        return Err(Error::Contract(format!("requested {count} states but the spectrum has {}", eff.len())));
    }
    let eff_states: Vec<&StateVector> = eff.states[..count].iter().collect();
    let eff_grids = husimi_many(&eff_states, spec)?;
    let partners: Vec<usize> = (0..count).filter_map(|i| fs.matched(i).map(|m| m.floquet)).collect();
    let partner_states: Vec<&StateVector> = partners.iter().map(|&k| &fs.modes[k]).collect();
    let mut partner_grids = husimi_many(&partner_states, spec)?.into_iter();

    let mut report = LocalizationReport::default();
    for (i, g) in eff_grids.iter().enumerate() {
        let m = fs.matched(i);
        let fg = m.map(|_| partner_grids.next().expect("one grid per partner"));
        report.states.push(LocalizationRecord {
            index: Some(i),
            floquet_index: m.map(|m| m.floquet),
            ipn_eff: Some(ipn(g)),
            ipn_floquet: fg.as_ref().map(ipn),
            wehrl_eff: Some(wehrl_entropy(g)),
            wehrl_floquet: fg.as_ref().map(wehrl_entropy),
            fidelity: m.map(|m| m.fidelity),
        });
    }
    let grids: Vec<(usize, Result<HusimiGrid>)> = fs.unmatched.par_iter().map(|&k| (k, husimi(&fs.modes[k], spec))).collect();
    for (k, g) in grids {
        match g {
            Ok(g) => report.unmatched.push(LocalizationRecord {
                index: None,
                floquet_index: Some(k),
                ipn_eff: None,
                ipn_floquet: Some(ipn(&g)),
                wehrl_eff: None,
                wehrl_floquet: Some(wehrl_entropy(&g)),
                fidelity: None,
            }),
            Err(Error::Window { .. }) => report.skipped.push(k),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{build_effective_hamiltonian, coherent_state, displacement, eigendecompose};
    use proptest::prelude::*;

    const LIEB: f64 = 1.0 + 1.837_877_066_409_345_5; // 1 + ln 2π

    #[test]
    fn vacuum_is_unit_gaussian() {
        let psi = StateVector::basis(0, 30);
        let g = husimi(&psi, &GridSpec::square(7.0, 141)).unwrap();
        for (ip, &p) in g.ps.iter().enumerate().step_by(17) {
            for (ix, &x) in g.xs.iter().enumerate().step_by(13) {
                let want = (-(x * x + p * p) / 2.0).exp() / (2.0 * PI);
                assert!((g.at(ix, ip) - want).abs() < 1e-8, "({x}, {p})");
            }
        }
        assert!((g.captured - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coherent_state_measures() {
        let alpha = C64::new(1.5, -2.0);
        let psi = coherent_state(alpha, 60).unwrap();
        let g = husimi(&psi, &GridSpec::square(9.0, DEFAULT_RESOLUTION)).unwrap();
        assert!((g.total() - 1.0).abs() < 1e-6);
        let (x, p) = g.peak();
        assert!((x - 2f64.sqrt() * 1.5).abs() <= g.dx);
        assert!((p + 2f64.sqrt() * 2.0).abs() <= g.dp);
        assert!((ipn(&g) / (4.0 * PI) - 1.0).abs() < 0.02, "{}", ipn(&g));
        assert!((wehrl_entropy(&g) / LIEB - 1.0).abs() < 0.01, "{}", wehrl_entropy(&g));
    }

    #[test]
    fn narrow_window_is_rejected() {
        let psi = coherent_state(C64::new(3.0, 0.0), 60).unwrap();
        match husimi(&psi, &GridSpec::square(3.0, 64)) {
            Err(Error::Window { boundary_mass, suggested }) => {
                assert!(boundary_mass > WINDOW_LEAKAGE);
                assert!(suggested > 3.0);
                assert!(husimi(&psi, &GridSpec::square(suggested, 128)).is_ok());
            }
            other => panic!("expected a window error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_density_oracle() {
        let spec = GridSpec::square(2.0, 11);
        let area = 16.0;
        let g = HusimiGrid {
            xs: spec.xs(),
            ps: spec.ps(),
            q: vec![1.0 / (121.0 * spec.dx() * spec.dp()); 121],
            dx: spec.dx(),
            dp: spec.dp(),
            captured: 1.0,
        };
        // 121 samples of a cell of size dx·dp cover (4 + dx)² rather than 16.
        let covered = 121.0 * spec.dx() * spec.dp();
        assert!((ipn(&g) - covered).abs() < 1e-12);
        assert!((wehrl_entropy(&g) - covered.ln()).abs() < 1e-12);
        assert!(covered > area);
    }

    #[test]
    fn displacement_leaves_measures_unchanged() {
        let spec = GridSpec::square(10.0, 201);
        let cat = {
            let a = coherent_state(C64::new(1.2, 0.0), 80).unwrap();
            let b = coherent_state(C64::new(-1.2, 0.0), 80).unwrap();
            StateVector::new(a.amplitudes() + b.amplitudes()).unwrap()
        };
        let moved = cat.evolve(&displacement(C64::new(0.8, 1.1), 80).unwrap()).unwrap();
        let (g0, g1) = (husimi(&cat, &spec).unwrap(), husimi(&moved, &spec).unwrap());
        assert!((ipn(&g0) / ipn(&g1) - 1.0).abs() < 1e-4);
        assert!((wehrl_entropy(&g0) - wehrl_entropy(&g1)).abs() < 1e-4);
        let (p0, p1) = (g0.peak(), g1.peak());
        assert!((p1.1 - p0.1 - 2f64.sqrt() * 1.1).abs() <= 2.0 * g0.dp);
    }

    #[test]
    fn grid_refinement_converges_for_low_eigenstates() {
        let p = EffectiveParams::from_ratios(1e-3, 50.0, 10.0).unwrap();
        let spec = eigendecompose(&build_effective_hamiltonian(&p, 200).unwrap()).unwrap();
        let grid = GridSpec::for_params(&p, DEFAULT_RESOLUTION);
        let states: Vec<&StateVector> = spec.states[..30].iter().collect();
        let coarse = husimi_many(&states, &grid).unwrap();
        let fine = husimi_many(&states, &grid.refined()).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            assert!((ipn(c) / ipn(f) - 1.0).abs() < 5e-3);
            assert!((wehrl_entropy(c) / wehrl_entropy(f) - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn export_formats() {
        let g = husimi(&StateVector::basis(1, 10), &GridSpec::square(6.0, 33)).unwrap();
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 33 * 33 + 1);
        assert!(text.starts_with("x,p,Q\n"));
        let mut bin = Vec::new();
        g.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 33 * 33 * 8);
        let k = 33 + 2;
        assert_eq!(f64::from_le_bytes(bin[8 * k..8 * k + 8].try_into().unwrap()), g.at(2, 1));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn compare_on_identical_states() {
        use crate::floquet::{exact_evolution, floquet_spectrum, match_states, MatchOptions};
        let p = EffectiveParams::new(1e-3, 1e-3, 3e-4).unwrap();
        let h = build_effective_hamiltonian(&p, 24).unwrap();
        let eff = eigendecompose(&h).unwrap();
        let tau = 4.0 * PI;
        let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, 1.0).unwrap();
        match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
        let report = localization_compare(&eff, &fs, &GridSpec::square(12.0, 161), 6).unwrap();
        assert_eq!(report.states.len(), 6);
        assert!(report.unmatched.is_empty());
        for r in &report.states {
            assert!((r.ipn_eff.unwrap() - r.ipn_floquet.unwrap()).abs() < 1e-6 * r.ipn_eff.unwrap());
            assert!((r.wehrl_eff.unwrap() - r.wehrl_floquet.unwrap()).abs() < 1e-6);
        }
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 7);
    }

    fn random_state(re: &[f64], im: &[f64]) -> StateVector {
        let v = nalgebra::DVector::from_iterator(re.len(), re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)));
        StateVector::new(v).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn wehrl_respects_lieb_bound(
            re in proptest::collection::vec(-1.0f64..1.0, 12),
            im in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            prop_assume!(re.iter().chain(&im).any(|v| v.abs() > 1e-3));
            let psi = random_state(&re, &im);
            let g = husimi(&psi, &GridSpec::square(9.0, 128)).unwrap();
            prop_assert!((g.total() - 1.0).abs() < 1e-6);
            prop_assert!(g.q.iter().all(|&v| v >= 0.0));
            prop_assert!(wehrl_entropy(&g) >= LIEB - 1e-3);
            prop_assert!(ipn(&g) > 0.0);
        }
    }
}
