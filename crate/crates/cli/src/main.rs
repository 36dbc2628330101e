use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kerrcat_cli::{load_config, modes, Mode};

/// Floquet sweeps and chaos-assisted tunneling analysis of the driven Kerr
/// parametric oscillator.
#[derive(Parser)]
#[command(name = "kerrcat", version)]
struct Args {
    /// What to compute for each K of the grid.
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; overrides KERRCAT_THREADS and the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    cfg.mode = args.mode;
    if let Some(w) = args.workers.or_else(|| std::env::var("KERRCAT_THREADS").ok().and_then(|v| v.parse().ok())) {
        cfg.workers = w.max(1);
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    eprintln!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
    match modes::run(&cfg, &|line| eprintln!("{line}")) {
        Ok(points) => {
            let bad: Vec<_> = points.iter().filter(|p| !p.ok()).collect();
            for p in &bad {
                eprintln!("K = {:e}: {} ({})", p.kerr, p.status, p.error.as_deref().unwrap_or(""));
            }
            if !points.is_empty() {
                eprintln!("{} of {} points ok", points.len() - bad.len(), points.len());
            }
            eprintln!("output in {}", cfg.output_dir.display());
            if bad.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
