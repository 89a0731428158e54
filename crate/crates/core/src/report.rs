//! CSV and text outputs of an experiment run.
//!
//! Every file has a header row, fixed column order and `\n` line endings.
//! Floats use Rust's shortest round-trip decimal form.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiments::{arm_id, boundary_grid, ExperimentConfig, ExperimentReport, Grid};
use crate::loss::LossConfig;
use crate::network::EpochStats;

pub const REPORT_HEADER: &str =
    "arm,t1,t2,seed,acc_train_clean,acc_train_noisy,acc_test,status";

/// One row per (arm, seed). Diverged runs have NaN accuracies and the
/// diagnostic in `status`.
pub fn write_report_csv(w: &mut impl Write, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for run in &report.runs {
        let (clean, noisy, test, status) = match &run.outcome {
            Ok(m) => (m.acc_train_clean, m.acc_train_noisy, m.acc_test, "ok".to_string()),
            Err(msg) => (f64::NAN, f64::NAN, f64::NAN, format!("diverged: {}", msg.replace([',', '\n'], ";"))),
        };
        writeln!(
            w,
            "{},{},{},{},{clean},{noisy},{test},{status}",
            arm_id(&run.temps),
            run.temps.t1(),
            run.temps.t2(),
            run.seed
        )?;
    }
    Ok(())
}

pub fn write_history_csv(w: &mut impl Write, history: &[EpochStats]) -> Result<()> {
    writeln!(w, "epoch,loss,acc")?;
    for h in history {
        writeln!(w, "{},{},{}", h.epoch, h.loss, h.accuracy)?;
    }
    Ok(())
}

pub fn write_grid_csv(w: &mut impl Write, grid: &Grid) -> Result<()> {
    writeln!(w, "x,y,p1")?;
    for (x, y, p) in grid.cells() {
        writeln!(w, "{x},{y},{p}")?;
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Writes `report.csv`, `config.resolved`, and for every run that finished
/// `history_<arm>_<seed>.csv` and `grid_<arm>_<seed>.csv` (the selected
/// model's class-1 probabilities). Returns the paths written.
pub fn write_experiment(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("config.resolved");
    fs::write(&path, cfg.to_resolved_string())?;
    written.push(path);

    let path = dir.join("report.csv");
    write_file(&path, |b| write_report_csv(b, report))?;
    written.push(path);

    for run in &report.runs {
        let Ok(m) = &run.outcome else { continue };
        let stem = format!("{}_{}", arm_id(&run.temps), run.seed);
        let path = dir.join(format!("history_{stem}.csv"));
        write_file(&path, |b| write_history_csv(b, &m.history))?;
        written.push(path);

        let grid = boundary_grid(&m.params, &LossConfig::from_temps(run.temps), cfg.bounds(), cfg.grid_resolution)?;
        let path = dir.join(format!("grid_{stem}.csv"));
        write_file(&path, |b| write_grid_csv(b, &grid))?;
        written.push(path);
    }
    Ok(written)
}
