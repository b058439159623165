//! CSV and summary emission. Floats are written in shortest round-trip form, so equal
//! results give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::lemma_lab::ClockLawReport;

use super::experiments::{ConvergeResult, FitOutcome, SchemeTrajectory, W2Row};

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<fs::File>, PathBuf)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((csv::Writer::from_path(&path)?, path))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Columns `scheme, replica, time, particle, coordinate, value`.
pub fn write_simulate(dir: &Path, trajectories: &[SchemeTrajectory]) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, "simulate.csv")?;
    w.write_record([
        "scheme",
        "replica",
        "time",
        "particle",
        "coordinate",
        "value",
    ])?;
    for traj in trajectories {
        for snap in &traj.snapshots {
            let d = snap.dimension();
            for (k, v) in snap.positions().iter().enumerate() {
                w.write_record([
                    traj.scheme.as_str().to_string(),
                    traj.replica.to_string(),
                    num(snap.time),
                    (k / d).to_string(),
                    (k % d).to_string(),
                    num(*v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

/// One `kappa` row per step size, then one `fit` (or `degenerate`) row.
pub fn write_converge(dir: &Path, result: &ConvergeResult) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, "converge.csv")?;
    w.write_record([
        "kind",
        "kappa",
        "error",
        "se",
        "sup_time",
        "slope",
        "intercept",
        "r_squared",
        "note",
    ])?;
    for r in &result.rows {
        w.write_record([
            "kappa".to_string(),
            num(r.kappa),
            num(r.error),
            num(r.se),
            num(r.sup_time),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    match &result.fit {
        FitOutcome::Fitted(f) => w.write_record([
            "fit".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            num(f.slope),
            num(f.intercept),
            num(f.r_squared),
            String::new(),
        ])?,
        FitOutcome::Degenerate(why) => w.write_record([
            "degenerate",
            "",
            "",
            "",
            "",
            "",
            "",
            "",
            &format!("degenerate: {why}"),
        ])?,
    }
    w.flush()?;
    Ok(path)
}

/// Columns `statistic, n, p, empirical, analytic, se, pass`.
pub fn write_lemmas(dir: &Path, rows: &[ClockLawReport]) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, "lemmas.csv")?;
    w.write_record(["statistic", "n", "p", "empirical", "analytic", "se", "pass"])?;
    for r in rows {
        w.write_record([
            r.statistic.clone(),
            r.n.to_string(),
            r.p.to_string(),
            num(r.empirical),
            num(r.analytic),
            num(r.se),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

/// Columns `kappa, time, w2, coupled_error, se, dominated`.
pub fn write_wasserstein(dir: &Path, rows: &[W2Row]) -> Result<PathBuf> {
    let (mut w, path) = writer(dir, "wasserstein.csv")?;
    w.write_record(["kappa", "time", "w2", "coupled_error", "se", "dominated"])?;
    for r in rows {
        w.write_record([
            num(r.kappa),
            num(r.time),
            num(r.w2),
            num(r.coupled_error),
            num(r.se),
            r.dominated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn write_summary(dir: &Path, lines: &[String]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("summary.txt");
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
