//! Report files: `report.csv` (one row per check) and `report.json` (rows, fitted constants,
//! configuration).

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use frd::report::BoundsReport;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Serialize)]
struct CsvRow<'a> {
    suite: &'a str,
    k: Option<usize>,
    j: Option<usize>,
    quantity: &'a str,
    measured: f64,
    bound: f64,
    ratio: f64,
    pass: bool,
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    command: &'a str,
    all_pass: bool,
    failures: usize,
    config: &'a RunConfig,
    report: &'a BoundsReport,
}

pub fn write_csv(path: &Path, rep: &BoundsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &rep.rows {
        w.serialize(CsvRow {
            suite: &r.suite,
            k: r.k,
            j: r.j,
            quantity: &r.quantity,
            measured: r.measured,
            bound: r.bound,
            ratio: r.ratio,
            pass: r.pass,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both report files into `dir`.
pub fn write_report(dir: &Path, command: &str, cfg: &RunConfig, rep: &BoundsReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join("report.csv"), rep)?;
    let doc = JsonDoc { command, all_pass: rep.all_pass(), failures: rep.failures().count(), config: cfg, report: rep };
    // NaN and infinities are not JSON numbers; serde_json writes them as null
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(dir.join("report.json"), text + "\n")?;
    Ok(())
}

/// Human-readable summary on stdout. A closed pipe is not an error.
pub fn print_summary(command: &str, rep: &BoundsReport) {
    let _ = summary(&mut std::io::stdout().lock(), command, rep);
}

fn summary(w: &mut impl Write, command: &str, rep: &BoundsReport) -> std::io::Result<()> {
    let fails: Vec<_> = rep.failures().collect();
    writeln!(w, "{command}: {} checks, {} failed", rep.rows.len(), fails.len())?;
    for r in fails.iter().take(20) {
        writeln!(
            w,
            "  FAIL {} k={} j={} {}: measured {:.6e} bound {:.6e}",
            r.suite,
            r.k.map_or("-".into(), |v| v.to_string()),
            r.j.map_or("-".into(), |v| v.to_string()),
            r.quantity,
            r.measured,
            r.bound
        )?;
    }
    for (name, v) in &rep.fitted {
        writeln!(w, "  fitted {name} = {v:.6e}")?;
    }
    Ok(())
}
