use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Aggregate, MeanSeries, MetricsSeries};
use crate::sim::Snapshot;

pub const CSV_HEADER: &str = "step,tracking_error,cum_collisions,grad_norm,bytes";

/// Floats are written with `{}`, the shortest representation that parses
/// back to the same value.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One row per step, numbered from 1 (the state after that step).
pub fn emit_csv(series: &MetricsSeries, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(40 * (series.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for t in 0..series.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            t + 1,
            series.tracking_error[t],
            series.cumulative_collisions[t],
            series.grad_norm[t],
            series.bytes[t]
        );
    }
    write_file(path, &s)
}

fn emit_columns(cols: [&MeanSeries; 4], path: &Path, pick: fn(&MeanSeries) -> &[f64]) -> Result<()> {
    let len = pick(cols[0]).len();
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for t in 0..len {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            t + 1,
            pick(cols[0])[t],
            pick(cols[1])[t],
            pick(cols[2])[t],
            pick(cols[3])[t]
        );
    }
    write_file(path, &s)
}

/// Writes the pointwise means to `mean.csv` and the 95% half-widths to
/// `ci95.csv` inside `dir`.
pub(crate) fn emit_aggregate(agg: &Aggregate, dir: &Path) -> Result<()> {
    let cols = [&agg.tracking_error, &agg.cumulative_collisions, &agg.grad_norm, &agg.bytes];
    emit_columns(cols, &dir.join("mean.csv"), |m| &m.mean)?;
    emit_columns(cols, &dir.join("ci95.csv"), |m| &m.half_width)
}

/// Reads a metrics CSV back as rows of numbers.
pub fn parse_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Input(format!(
                "{}: unexpected header {other:?}",
                path.display()
            )))
        }
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            line.split(',')
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Input(format!("{}: line {}: bad number `{f}`", path.display(), k + 2))
                    })
                })
                .collect()
        })
        .collect()
}

/// `step,agent,x_0..x_{d-1},target_0..target_{d-1}`, one row per agent per
/// step.
pub fn write_trajectory(snapshots: &[Snapshot], dim: usize, path: &Path) -> Result<()> {
    let mut s = String::from("step,agent");
    for k in 0..dim {
        let _ = write!(s, ",x_{k}");
    }
    for k in 0..dim {
        let _ = write!(s, ",target_{k}");
    }
    s.push('\n');
    for snap in snapshots {
        for i in 0..snap.agents.len() / dim {
            let _ = write!(s, "{},{i}", snap.step);
            for v in &snap.agents[i * dim..(i + 1) * dim] {
                let _ = write!(s, ",{v}");
            }
            for v in &snap.targets[i * dim..(i + 1) * dim] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    write_file(path, &s)
}
