use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, Aggregate, MeanSeries, MetricsSeries};
use crate::rng::{label, RngStream};
use crate::sim::{simulate, Method, SimParams, Snapshot, TargetMotion};
use crate::synthetic::run_synthetic;
use crate::tracking::{init_world, WorldState};

use super::output::{emit_aggregate, emit_csv, write_file, write_trajectory};
use super::{point_label, ExperimentConfig, Scenario};

/// Results for one method at one sweep point.
#[derive(Clone, Debug)]
pub struct PointReport {
    pub label: String,
    pub assignments: Vec<(String, String)>,
    pub method: Method,
    pub series: Vec<MetricsSeries>,
    pub aggregate: Aggregate,
    /// `(threshold, mean, half width)` of the extra pair-distance totals.
    pub thresholds: Vec<(f64, f64, f64)>,
    /// Mean and half width of the average squared gradient norm, and the
    /// bound it is compared against (synthetic scenario only).
    pub synthetic: Option<((f64, f64), f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub points: Vec<PointReport>,
}

impl ExperimentReport {
    pub fn find(&self, label: &str, method: &str) -> Option<&PointReport> {
        self.points
            .iter()
            .find(|p| p.label == label && p.method.to_string() == method)
    }
}

struct RunResult {
    metrics: MetricsSeries,
    trajectory: Vec<Snapshot>,
    synthetic: Option<(f64, f64)>,
}

fn run_once(cfg: &ExperimentConfig, method: &Method, seed: u64, inner_parallel: bool) -> Result<RunResult> {
    let root = RngStream::from_seed(seed);
    let mut world_rng = root.derive(label::WORLD_INIT);
    let (initial, motion, params) = match cfg.scenario {
        Scenario::SyntheticQuadratic => {
            let Method::FedZo {
                compressor,
                error_feedback,
            } = method
            else {
                return Err(Error::Config(format!("method {method} is not single-agent")));
            };
            let mut syn = cfg.synthetic.clone();
            syn.compressor = *compressor;
            syn.error_feedback = *error_feedback;
            let out = run_synthetic(&syn, seed)?;
            let mut metrics = MetricsSeries {
                initial_error: syn.initial_norm,
                ..Default::default()
            };
            for t in 0..out.grad_sq.len() {
                metrics.push(out.distance[t], 0, out.grad_sq[t].sqrt(), out.bytes[t]);
            }
            return Ok(RunResult {
                metrics,
                trajectory: Vec::new(),
                synthetic: Some((out.mean_grad_sq, out.bound)),
            });
        }
        Scenario::Tracking => {
            let t = &cfg.tracking;
            let params = SimParams {
                sensing_radius: t.sensing_radius,
                collision_radius: t.collision_radius,
                extra_thresholds: Vec::new(),
                lambda: t.lambda,
                neighbor_dropout: t.neighbor_dropout,
                steps: t.steps,
                schedule: cfg.schedule()?,
                method: method.clone(),
                routing: cfg.routing,
                parallel: inner_parallel,
                record_trajectory: cfg.trajectories,
            };
            (init_world(t, &mut world_rng), TargetMotion::Evasion { beta: t.beta }, params)
        }
        Scenario::Coverage => {
            let c = &cfg.coverage;
            let routes = c.routes();
            let agents = c.initial_positions(&routes, &mut world_rng);
            let targets = crate::coverage::route_targets(&routes, 0);
            let len = agents.len();
            let ws = WorldState {
                dim: 2,
                agent_positions: agents,
                source_positions: targets,
                agent_velocities: vec![0.0; len],
                source_velocities: vec![0.0; len],
                step: 0,
                collision_count: 0,
            };
            let params = SimParams {
                sensing_radius: c.sensing_radius(),
                collision_radius: c.violation_distance,
                extra_thresholds: c.extra_thresholds.clone(),
                lambda: c.lambda,
                neighbor_dropout: c.neighbor_dropout,
                steps: c.steps,
                schedule: cfg.schedule()?,
                method: method.clone(),
                routing: cfg.routing,
                parallel: inner_parallel,
                record_trajectory: cfg.trajectories,
            };
            (ws, TargetMotion::Routes(routes), params)
        }
    };
    let out = simulate(&params, initial, &motion, &root)?;
    Ok(RunResult {
        metrics: out.metrics,
        trajectory: out.trajectory,
        synthetic: None,
    })
}

/// Runs every seed of one method on a configuration with no sweep left.
/// Seeds run concurrently when `cfg.parallel` is set; results come back in
/// run order either way.
pub fn run_point(cfg: &ExperimentConfig, method: &Method) -> Result<Vec<MetricsSeries>> {
    Ok(run_all(cfg, method)?.into_iter().map(|r| r.metrics).collect())
}

fn run_all(cfg: &ExperimentConfig, method: &Method) -> Result<Vec<RunResult>> {
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| cfg.base_seed.wrapping_add(r)).collect();
    if cfg.parallel {
        let inner = cfg.runs == 1;
        seeds.par_iter().map(|&s| run_once(cfg, method, s, inner)).collect()
    } else {
        seeds.iter().map(|&s| run_once(cfg, method, s, false)).collect()
    }
}

/// Runs every (sweep point, method) pair and, when `cfg.out` is set, writes
///
/// ```text
/// <out>/<point>/<method>/run_<r>.csv   per-run metrics
/// <out>/<point>/<method>/mean.csv      pointwise mean over non-diverged runs
/// <out>/<point>/<method>/ci95.csv      95% half-widths
/// <out>/summary.csv                    one row per (point, method)
/// ```
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::default();
    for assignments in cfg.sweep_points()? {
        let point_cfg = cfg.at_point(&assignments)?;
        point_cfg.validate()?;
        let label = point_label(&assignments);
        for method in &point_cfg.methods {
            let results = run_all(&point_cfg, method)?;
            let series: Vec<MetricsSeries> = results.iter().map(|r| r.metrics.clone()).collect();
            let agg = aggregate(&series)?;
            let kept: Vec<&MetricsSeries> = series.iter().filter(|s| !s.diverged()).collect();
            let thresholds = threshold_means(&kept);
            let synthetic = synthetic_summary(&results);

            if let Some(out) = &cfg.out {
                let dir = out.join(&label).join(method.slug());
                for (r, res) in results.iter().enumerate() {
                    emit_csv(&res.metrics, &dir.join(format!("run_{r}.csv")))?;
                    if cfg.trajectories && !res.trajectory.is_empty() {
                        let dim = res.trajectory[0].agents.len() / point_cfg.n_agents();
                        write_trajectory(&res.trajectory, dim, &dir.join(format!("trajectory_{r}.csv")))?;
                    }
                }
                emit_aggregate(&agg, &dir)?;
            }
            report.points.push(PointReport {
                label: label.clone(),
                assignments: assignments.clone(),
                method: method.clone(),
                series,
                aggregate: agg,
                thresholds,
                synthetic,
            });
        }
    }
    if let Some(out) = &cfg.out {
        write_summary(&report, &out.join("summary.csv"))?;
    }
    Ok(report)
}

impl ExperimentConfig {
    fn n_agents(&self) -> usize {
        match self.scenario {
            Scenario::Tracking => self.tracking.n_agents,
            Scenario::Coverage => self.coverage.n_agents,
            Scenario::SyntheticQuadratic => 1,
        }
    }
}

fn threshold_means(kept: &[&MetricsSeries]) -> Vec<(f64, f64, f64)> {
    let Some(first) = kept.first() else {
        return Vec::new();
    };
    (0..first.threshold_totals.len())
        .map(|k| {
            let mut v: Vec<f64> = kept.iter().map(|s| s.threshold_totals[k].1 as f64).collect();
            v.sort_by(f64::total_cmp);
            let (m, h) = MeanSeries::of(&v);
            (first.threshold_totals[k].0, m, h)
        })
        .collect()
}

fn synthetic_summary(results: &[RunResult]) -> Option<((f64, f64), f64)> {
    let pairs: Vec<(f64, f64)> = results.iter().filter_map(|r| r.synthetic).collect();
    if pairs.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    v.sort_by(f64::total_cmp);
    Some((MeanSeries::of(&v), pairs[0].1))
}

fn write_summary(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut s = String::from(
        "point,method,runs,diverged,collisions_mean,collisions_ci,final_error_mean,final_error_ci,initial_error_mean,converged_fraction",
    );
    let first = report.points.first();
    if let Some(p) = first {
        for (t, _, _) in &p.thresholds {
            let _ = write!(s, ",pairs_within_{t}_mean,pairs_within_{t}_ci");
        }
        if p.synthetic.is_some() {
            s.push_str(",grad_sq_mean,grad_sq_ci,bound");
        }
    }
    s.push('\n');
    for p in &report.points {
        let a = &p.aggregate;
        let initial: f64 = p.series.iter().filter(|s| !s.diverged()).map(|s| s.initial_error).sum::<f64>()
            / a.runs as f64;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            p.label,
            p.method,
            a.runs,
            a.diverged,
            a.total_collisions.0,
            a.total_collisions.1,
            a.final_error.0,
            a.final_error.1,
            initial,
            a.converged_fraction
        );
        for (_, m, h) in &p.thresholds {
            let _ = write!(s, ",{m},{h}");
        }
        if let Some(((m, h), b)) = p.synthetic {
            let _ = write!(s, ",{m},{h},{b}");
        }
        s.push('\n');
    }
    write_file(path, &s)
}
