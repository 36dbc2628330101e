//! Non-sweep run modes. Points are independent here (no continuation), so
//! they run in parallel and fail individually.

use std::fs;
use std::path::Path;

use kerrcat::classical::{island_area, poincare_section, stationary_points, PhasePoint, SectionOptions};
use kerrcat::phasespace::husimi;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, IoContext, Result};
use crate::pipeline::{analyze, drive_for, grid_for, match_point, prepare, StageError};
use crate::plot;
use crate::sweep::{run_sweep_with, thread_pool, PointStatus};

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).at(path)
}

fn stage<T, E: Into<CliError>>(name: &'static str, r: std::result::Result<T, E>) -> std::result::Result<T, StageError> {
    r.map_err(|e| StageError { stage: name, error: e.into() })
}

fn poincare_point(cfg: &RunConfig, dir: &Path, i: usize, k: f64) -> std::result::Result<(), StageError> {
    let p = stage("drive", cfg.params(k))?;
    let (d, _, _) = stage("drive", drive_for(cfg, &p))?;
    let st = stage("section", stationary_points(&p))?;
    let reach = 1.4 * st.wells[1].x;
    let n = cfg.poincare.seeds.max(1);
    let seeds: Vec<PhasePoint> = (0..n).map(|j| PhasePoint::new(-reach + 2.0 * reach * (j as f64 + 0.5) / n as f64, 0.0)).collect();
    let sec = stage("section", poincare_section(&d, &seeds, cfg.poincare.n_periods, &SectionOptions::default()))?;
    let mut buf = Vec::new();
    stage("write", sec.write_csv(&mut buf))?;
    stage("write", write_bytes(&dir.join(format!("k{i:03}_section.csv")), &buf))?;
    let island = stage("island", island_area(&sec, &d, &p, &cfg.island))?;
    let mut buf = Vec::new();
    stage("write", island.write_boundary_csv(&mut buf))?;
    stage("write", write_bytes(&dir.join(format!("k{i:03}_island.csv")), &buf))?;
    let summary = serde_json::to_string_pretty(&island.summary_json()).expect("json") + "\n";
    stage("write", write_bytes(&dir.join(format!("k{i:03}_island.json")), summary.as_bytes()))
}

fn husimi_point(cfg: &RunConfig, dir: &Path, i: usize, k: f64) -> std::result::Result<(), StageError> {
    let mut prep = prepare(cfg, i, k)?;
    stage("matching", match_point(cfg, &mut prep, None))?;
    let spec = grid_for(cfg, &prep.params);
    for n in 0..cfg.husimi.states.min(cfg.fock_dim) {
        let mut buf = Vec::new();
        let g = stage("husimi", husimi(&prep.basis.spectrum.states[n], &spec))?;
        stage("write", g.write_csv(&mut buf))?;
        stage("write", write_bytes(&dir.join(format!("k{i:03}_eff{n:03}.csv")), &buf))?;
        if let Some(m) = prep.spectrum.matched(n) {
            let mut buf = Vec::new();
            let g = stage("husimi", husimi(&prep.spectrum.modes[m.floquet], &spec))?;
            stage("write", g.write_csv(&mut buf))?;
            stage("write", write_bytes(&dir.join(format!("k{i:03}_floquet{n:03}.csv")), &buf))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ClassificationSummary<'a> {
    #[serde(rename = "K")]
    kerr: f64,
    ipn_onset: Option<usize>,
    wehrl_onset: Option<usize>,
    disagreements: &'a [usize],
    chaotic_indices: &'a [usize],
    gamma0: f64,
}

fn classify_point(cfg: &RunConfig, dir: &Path, i: usize, k: f64) -> std::result::Result<(), StageError> {
    let mut prep = prepare(cfg, i, k)?;
    stage("matching", match_point(cfg, &mut prep, None))?;
    let mut timings = Default::default();
    let a = analyze(cfg, &prep, &mut timings)?;
    let mut buf = Vec::new();
    stage("write", a.report.write_csv(&mut buf))?;
    stage("write", write_bytes(&dir.join(format!("k{i:03}_localization.csv")), &buf))?;
    let c = &a.classification;
    let summary = ClassificationSummary {
        kerr: k,
        ipn_onset: c.ipn_onset,
        wehrl_onset: c.wehrl_onset,
        disagreements: &c.disagreements,
        chaotic_indices: &c.chaotic_indices,
        gamma0: a.gamma0,
    };
    let text = serde_json::to_string_pretty(&summary).expect("json") + "\n";
    stage("write", write_bytes(&dir.join(format!("k{i:03}_classification.json")), text.as_bytes()))
}

/// Runs `cfg.mode` and returns the per-point statuses (empty for `curve`).
/// `progress` receives one line per point event.
pub fn run(cfg: &RunConfig, progress: &(dyn Fn(&str) + Sync)) -> Result<Vec<PointStatus>> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).at(&dir)?;
    let point: fn(&RunConfig, &Path, usize, f64) -> std::result::Result<(), StageError> = match cfg.mode {
        Mode::Sweep => return Ok(run_sweep_with(cfg, progress)?.manifest.points),
        Mode::Curve => {
            let svg = plot::splitting_svg(&plot::read_series(&dir.join("sweep.csv"))?)?;
            write_bytes(&dir.join("splitting.svg"), svg.as_bytes())?;
            return Ok(Vec::new());
        }
        Mode::Poincare => poincare_point,
        Mode::Husimi => husimi_point,
        Mode::Classify => classify_point,
    };
    let name = serde_json::to_value(cfg.mode).expect("mode").as_str().unwrap_or("mode").to_string();
    let sub = dir.join(&name);
    fs::create_dir_all(&sub).at(&sub)?;
    let statuses: Vec<PointStatus> = thread_pool(cfg.workers).install(|| {
        cfg.k_grid
            .par_iter()
            .enumerate()
            .map(|(i, &k)| {
                let t = std::time::Instant::now();
                let r = point(cfg, &sub, i, k);
                match &r {
                    Ok(()) => progress(&format!("K[{i}] = {k:e}: done in {:.1} s", t.elapsed().as_secs_f64())),
                    Err(e) => progress(&format!("K[{i}] = {k:e}: failed ({e})")),
                }
                PointStatus {
                    index: i,
                    kerr: k,
                    status: r.as_ref().map_or_else(|e| format!("failed:{}", e.stage), |_| "ok".into()),
                    error: r.err().map(|e| e.error.to_string()),
                    reused: false,
                    unitarity_defect: None,
                    wall_seconds: Some(t.elapsed().as_secs_f64()),
                }
            })
            .collect()
    });
    let text = serde_json::to_string_pretty(&statuses)? + "\n";
    write_bytes(&sub.join("manifest.json"), text.as_bytes())?;
    Ok(statuses)
}
