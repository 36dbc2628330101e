//! K sweeps with per-point caching.
//!
//! Pass 1 prepares every uncached point in parallel. Pass 2 walks the grid in
//! order, matching each point against its predecessor's modes, and runs the
//! tunneling analysis. Completed points are stored under `points/` together
//! with their matched modes, so a rerun skips them and still has a
//! continuation seed for whatever follows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use kerrcat::cat::{fit_c0, semiclassical_splitting, write_cat_csv, CatRecord, SemiclassicalModel};
use kerrcat::floquet::{DriveParams, FloquetSpectrum, Match};
use kerrcat::io::fmt_f64;
use kerrcat::ode::IntegratorStats;
use kerrcat::{StateVector, C64};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};
use crate::pipeline::{analyze, island_for, match_point, prepare, Prepared, StageError};
use crate::plot;

/// Everything computed at one `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    pub kerr: f64,
    pub eps2_over_k: f64,
    pub delta_over_k: f64,
    pub de_floquet_over_k: f64,
    pub de_effective_over_k: f64,
    pub unitarity_defect: f64,
    pub fidelity0: f64,
    pub fidelity1: f64,
    pub n_unmatched: usize,
    /// Ground-pair labels assigned below `f_min`.
    pub forced: Vec<usize>,
    pub retained: usize,
    pub n_chaotic: usize,
    pub ipn_onset: Option<usize>,
    pub wehrl_onset: Option<usize>,
    pub gamma0: f64,
    pub de_fgr_over_k: f64,
    pub heisenberg_time: Option<f64>,
    pub below_heisenberg: bool,
    pub area: Option<f64>,
    pub area_error: Option<String>,
    pub basis_eps2_over_k: f64,
    pub basis_delta_over_k: f64,
    pub basis_fidelity: f64,
    pub basis_nominal_fidelity: f64,
    pub drive: DriveParams,
    pub calibration: String,
    pub stats: IntegratorStats,
    pub timings: BTreeMap<String, f64>,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStatus {
    pub index: usize,
    #[serde(rename = "K")]
    pub kerr: f64,
    /// `ok` or `failed:<stage>`.
    pub status: String,
    pub error: Option<String>,
    pub reused: bool,
    pub unitarity_defect: Option<f64>,
    pub wall_seconds: Option<f64>,
}

impl PointStatus {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalSummary {
    pub model: Option<SemiclassicalModel>,
    /// Grid indices used for the fit.
    pub fit_indices: Vec<usize>,
    pub residuals: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub points: Vec<PointStatus>,
    pub semiclassical: SemiclassicalSummary,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.points.iter().all(PointStatus::ok)
    }
}

/// Result of [`run_sweep`].
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub manifest: Manifest,
    pub semiclassical: Vec<Option<f64>>,
    pub csv_path: PathBuf,
}

fn point_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join("points").join(format!("k{index:03}.{ext}"))
}

const MODES_MAGIC: &[u8; 8] = b"KCATMODE";

/// Matched modes only: all the continuation step needs.
fn write_modes(path: &Path, fs: &FloquetSpectrum) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).at(path)?);
    let matched: Vec<(usize, Match)> = fs.matching.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i, m))).collect();
    let dim = fs.modes.first().map_or(0, StateVector::dim);
    let mut buf = Vec::with_capacity(40 + matched.len() * (24 + 16 * dim));
    buf.extend_from_slice(MODES_MAGIC);
    for v in [dim as u64, matched.len() as u64, fs.matching.len() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&fs.tau.to_le_bytes());
    buf.extend_from_slice(&fs.omegad.to_le_bytes());
    for (label, m) in matched {
        buf.extend_from_slice(&(label as u64).to_le_bytes());
        buf.extend_from_slice(&fs.quasienergies[m.floquet].to_le_bytes());
        buf.extend_from_slice(&m.fidelity.to_le_bytes());
        for z in fs.modes[m.floquet].amplitudes().iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf).at(path)?;
    w.flush().at(path)
}

fn read_modes(path: &Path) -> Result<FloquetSpectrum> {
    let mut bytes = Vec::new();
    fs::File::open(path).at(path)?.read_to_end(&mut bytes).at(path)?;
    let bad = || CliError::Core(kerrcat::Error::Contract(format!("{} is not a mode file", path.display())));
    if bytes.len() < 48 || &bytes[..8] != MODES_MAGIC {
        return Err(bad());
    }
    let mut at = 8;
    let mut word = || {
        let v = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        v
    };
    let (dim, count, labels) = (word() as usize, word() as usize, word() as usize);
    let tau = f64::from_bits(word());
    let omegad = f64::from_bits(word());
    if bytes.len() != 48 + count * (24 + 16 * dim) {
        return Err(bad());
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let mut fs = FloquetSpectrum {
        tau,
        omegad,
        quasienergies: Vec::with_capacity(count),
        modes: Vec::with_capacity(count),
        matching: vec![None; labels],
        unmatched: Vec::new(),
        ambiguous: Vec::new(),
        forced: Vec::new(),
        eigen_residual: 0.0,
    };
    let mut pos = 48;
    for j in 0..count {
        let label = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        fs.quasienergies.push(f(pos + 8));
        let fidelity = f(pos + 16);
        pos += 24;
        let amps = (0..dim).map(|n| C64::new(f(pos + 16 * n), f(pos + 16 * n + 8)));
        fs.modes.push(StateVector::new(DVector::from_iterator(dim, amps))?);
        pos += 16 * dim;
        *fs.matching.get_mut(label).ok_or_else(bad)? = Some(Match { floquet: j, fidelity, link: fidelity });
    }
    Ok(fs)
}

fn load_cached(dir: &Path, index: usize, kerr: f64, hash: &str) -> Option<(SweepRecord, FloquetSpectrum)> {
    let text = fs::read_to_string(point_path(dir, index, "json")).ok()?;
    let rec: SweepRecord = serde_json::from_str(&text).ok()?;
    if rec.config_hash != hash || rec.kerr != kerr || rec.index != index {
        return None;
    }
    let modes = read_modes(&point_path(dir, index, "modes")).ok()?;
    Some((rec, modes))
}

fn failed(index: usize, kerr: f64, e: &StageError) -> PointStatus {
    PointStatus {
        index,
        kerr,
        status: format!("failed:{}", e.stage),
        error: Some(e.error.to_string()),
        reused: false,
        unitarity_defect: None,
        wall_seconds: None,
    }
}

fn record_from(cfg: &RunConfig, prep: &Prepared, hash: &str, area: kerrcat::Result<f64>, timings: BTreeMap<String, f64>, a: &crate::pipeline::Analysis) -> SweepRecord {
    let k = prep.kerr;
    let fid = |i: usize| prep.spectrum.matched(i).map_or(0.0, |m| m.fidelity);
    let interval = cfg.rate_period.interval(prep.tau);
    let (area, area_error) = match area {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SweepRecord {
        index: prep.index,
        kerr: k,
        eps2_over_k: cfg.effective.eps2_over_k,
        delta_over_k: cfg.effective.delta_over_k,
        de_floquet_over_k: a.de_floquet / k,
        de_effective_over_k: prep.de_effective / k,
        unitarity_defect: prep.unitarity_defect,
        fidelity0: fid(0),
        fidelity1: fid(1),
        n_unmatched: prep.spectrum.unmatched.len(),
        forced: prep.spectrum.forced.clone(),
        retained: a.classification.retained(),
        n_chaotic: a.classification.n_chaotic(),
        ipn_onset: a.classification.ipn_onset,
        wehrl_onset: a.classification.wehrl_onset,
        gamma0: a.gamma0,
        de_fgr_over_k: kerrcat::cat::splitting_from_rate(a.gamma0, interval) / k,
        heisenberg_time: a.heisenberg.map(|h| h.heisenberg_time),
        below_heisenberg: a.heisenberg.is_some_and(|h| !h.resolvable),
        area,
        area_error,
        basis_eps2_over_k: prep.basis.params.eps2 / k,
        basis_delta_over_k: prep.basis.params.delta / k,
        basis_fidelity: prep.basis.fidelity,
        basis_nominal_fidelity: prep.basis.nominal_fidelity,
        drive: prep.drive,
        calibration: prep.calibration.clone(),
        stats: prep.stats,
        timings,
        config_hash: hash.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub(crate) fn thread_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool")
}

/// Runs (or resumes) the sweep described by `cfg` and writes `sweep.csv`,
/// `cat.csv`, `manifest.json` and `splitting.svg` into `cfg.output_dir`.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    run_sweep_with(cfg, &|_| {})
}

/// [`run_sweep`] reporting one line per finished stage of each point.
pub fn run_sweep_with(cfg: &RunConfig, progress: &(dyn Fn(&str) + Sync)) -> Result<SweepOutcome> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(dir.join("points")).at(&dir)?;
    fs::create_dir_all(dir.join("localization")).at(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let hash = cfg.physics_hash();
    let grid = &cfg.k_grid;

    let cached: Vec<Option<(SweepRecord, FloquetSpectrum)>> = grid.iter().enumerate().map(|(i, &k)| load_cached(&dir, i, k, &hash)).collect();
    let todo: Vec<usize> = (0..grid.len()).filter(|&i| cached[i].is_none()).collect();
    let pool = thread_pool(cfg.workers);

    // Pass 1: independent stages.
    let mut prepared: BTreeMap<usize, std::result::Result<(Prepared, kerrcat::Result<f64>, f64), StageError>> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let t = std::time::Instant::now();
                let out = prepare(cfg, i, grid[i]).map(|mut p| {
                    let t_area = std::time::Instant::now();
                    let area = island_for(cfg, &p.params, &p.drive);
                    p.timings.insert("island".into(), t_area.elapsed().as_secs_f64());
                    (p, area, t.elapsed().as_secs_f64())
                });
                match &out {
                    Ok((_, _, secs)) => progress(&format!("K[{i}] = {:e}: prepared in {secs:.1} s", grid[i])),
                    Err(e) => progress(&format!("K[{i}] = {:e}: failed ({e})", grid[i])),
                }
                (i, out)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    });

    // Pass 2: ordered matching and analysis.
    let mut records: Vec<Option<SweepRecord>> = vec![None; grid.len()];
    let mut statuses = Vec::with_capacity(grid.len());
    let mut previous: Option<FloquetSpectrum> = None;
    for (i, &k) in grid.iter().enumerate() {
        if let Some((rec, modes)) = cached[i].clone() {
            statuses.push(PointStatus {
                index: i,
                kerr: k,
                status: "ok".into(),
                error: None,
                reused: true,
                unitarity_defect: Some(rec.unitarity_defect),
                wall_seconds: Some(rec.timings.values().sum()),
            });
            records[i] = Some(rec);
            previous = Some(modes);
            continue;
        }
        let (mut prep, area, _) = match prepared.remove(&i).expect("every uncached point was prepared") {
            Ok(v) => v,
            Err(e) => {
                statuses.push(failed(i, k, &e));
                continue;
            }
        };
        let mut timings = std::mem::take(&mut prep.timings);
        let t = std::time::Instant::now();
        let matched = match_point(cfg, &mut prep, previous.as_ref()).map_err(|e| StageError { stage: "matching", error: e.into() });
        timings.insert("matching".into(), t.elapsed().as_secs_f64());
        let analysis = matched.and_then(|_| pool.install(|| analyze(cfg, &prep, &mut timings)));
        match analysis {
            Ok(a) => {
                let rec = record_from(cfg, &prep, &hash, area, timings, &a);
                let mut loc = Vec::new();
                a.report.write_csv(&mut loc)?;
                let loc_path = dir.join("localization").join(format!("k{i:03}.csv"));
                fs::write(&loc_path, loc).at(&loc_path)?;
                write_modes(&point_path(&dir, i, "modes"), &prep.spectrum)?;
                write_json(&point_path(&dir, i, "json"), &rec)?;
                statuses.push(PointStatus {
                    index: i,
                    kerr: k,
                    status: "ok".into(),
                    error: None,
                    reused: false,
                    unitarity_defect: Some(rec.unitarity_defect),
                    wall_seconds: Some(rec.timings.values().sum()),
                });
                progress(&format!("K[{i}] = {k:e}: analyzed"));
                records[i] = Some(rec);
                previous = Some(prep.spectrum);
            }
            Err(e) => {
                progress(&format!("K[{i}] = {k:e}: failed ({e})"));
                statuses.push(failed(i, k, &e));
            }
        }
    }

    let ok: Vec<&SweepRecord> = records.iter().flatten().collect();
    let (summary, semiclassical) = semiclassical_fit(cfg, &ok);
    let manifest = Manifest { config_hash: hash, config: cfg.clone(), points: statuses, semiclassical: summary };
    let csv_path = dir.join("sweep.csv");
    let mut csv = Vec::new();
    write_sweep_csv(cfg, &records, &semiclassical, manifest.semiclassical.model.map(|m| m.c0), &manifest.points, &mut csv)?;
    fs::write(&csv_path, &csv).at(&csv_path)?;
    let cat: Vec<CatRecord> = records
        .iter()
        .zip(&semiclassical)
        .filter_map(|(r, s)| {
            r.as_ref().map(|r| CatRecord {
                kerr: r.kerr,
                n_chaotic: r.n_chaotic,
                gamma0: r.gamma0,
                de_fgr_over_k: r.de_fgr_over_k,
                area: r.area.unwrap_or(f64::NAN),
                de_semiclassical_over_k: *s,
                c0: manifest.semiclassical.model.map(|m| m.c0),
                below_heisenberg: r.below_heisenberg,
            })
        })
        .collect();
    let cat_path = dir.join("cat.csv");
    let mut buf = Vec::new();
    write_cat_csv(&cat, &mut buf)?;
    fs::write(&cat_path, buf).at(&cat_path)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    if !ok.is_empty() {
        let svg = plot::splitting_svg(&plot::read_series(&csv_path)?)?;
        let svg_path = dir.join("splitting.svg");
        fs::write(&svg_path, svg).at(&svg_path)?;
    }
    Ok(SweepOutcome { records: records.into_iter().flatten().collect(), manifest, semiclassical, csv_path })
}

/// Points used for the `c₀` fit: the first `fit_points` records with a
/// positive island area from the sustained onset on, i.e. past the last point
/// within ten times the smallest-K floor. Isolated floor fluctuations above
/// that level are not taken for the start of the rise.
pub fn fit_selection(records: &[&SweepRecord], fit_points: usize) -> Vec<usize> {
    let Some(first) = records.first() else { return Vec::new() };
    let floor = first.de_floquet_over_k;
    let start = records.iter().rposition(|r| !(r.de_floquet_over_k > 10.0 * floor)).map_or(0, |j| j + 1);
    (start..records.len()).filter(|&j| records[j].area.is_some_and(|a| a > 0.0)).take(fit_points).collect()
}

fn semiclassical_fit(cfg: &RunConfig, ok: &[&SweepRecord]) -> (SemiclassicalSummary, Vec<Option<f64>>) {
    let chosen = fit_selection(ok, cfg.semiclassical.fit_points);
    let pairs: Vec<(f64, f64)> = chosen.iter().map(|&j| (ok[j].area.unwrap(), ok[j].de_floquet_over_k * ok[j].kerr)).collect();
    let fit_indices = chosen.iter().map(|&j| ok[j].index).collect();
    let n = cfg.k_grid.len();
    match fit_c0(&pairs, cfg.semiclassical.hbar, cfg.semiclassical.area_source) {
        Ok(fit) => {
            let mut pred = vec![None; n];
            for r in ok {
                pred[r.index] = r.area.and_then(|a| semiclassical_splitting(a, &fit.model).ok()).map(|de| de / r.kerr);
            }
            (SemiclassicalSummary { model: Some(fit.model), fit_indices, residuals: fit.residuals, error: None }, pred)
        }
        Err(e) => (SemiclassicalSummary { model: None, fit_indices, residuals: Vec::new(), error: Some(e.to_string()) }, vec![None; n]),
    }
}

pub const SWEEP_COLUMNS: [&str; 22] = [
    "K",
    "eps2_over_K",
    "delta_over_K",
    "dE_floquet_over_K",
    "dE_effective_over_K",
    "unitarity_defect",
    "fidelity0",
    "fidelity1",
    "n_unmatched",
    "N_ch",
    "gamma0",
    "dE_fgr_over_K",
    "A",
    "dE_semiclassical_over_K",
    "c0",
    "t_H_flag",
    "ipn_onset",
    "wehrl_onset",
    "basis_eps2_over_K",
    "basis_delta_over_K",
    "basis_fidelity",
    "status",
];

fn write_sweep_csv<W: Write>(
    cfg: &RunConfig,
    records: &[Option<SweepRecord>],
    semiclassical: &[Option<f64>],
    c0: Option<f64>,
    statuses: &[PointStatus],
    mut w: W,
) -> Result<()> {
    let io = |e| CliError::Io { path: "sweep.csv".into(), source: e };
    writeln!(w, "{}", SWEEP_COLUMNS.join(",")).map_err(io)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let idx = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
    for (i, &k) in cfg.k_grid.iter().enumerate() {
        let status = &statuses.iter().find(|s| s.index == i).expect("one status per point").status;
        let head = format!("{},{},{}", fmt_f64(k), fmt_f64(cfg.effective.eps2_over_k), fmt_f64(cfg.effective.delta_over_k));
        let line = match &records[i] {
            Some(r) => format!(
                "{head},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{status}",
                fmt_f64(r.de_floquet_over_k),
                fmt_f64(r.de_effective_over_k),
                fmt_f64(r.unitarity_defect),
                fmt_f64(r.fidelity0),
                fmt_f64(r.fidelity1),
                r.n_unmatched,
                r.n_chaotic,
                fmt_f64(r.gamma0),
                fmt_f64(r.de_fgr_over_k),
                opt(r.area),
                opt(semiclassical[i]),
                opt(c0),
                u8::from(r.below_heisenberg),
                idx(r.ipn_onset),
                idx(r.wehrl_onset),
                fmt_f64(r.basis_eps2_over_k),
                fmt_f64(r.basis_delta_over_k),
                fmt_f64(r.basis_fidelity),
            ),
            None => format!("{head}{}{status}", ",".repeat(SWEEP_COLUMNS.len() - 3)),
        };
        writeln!(w, "{line}").map_err(io)?;
    }
    Ok(())
}
