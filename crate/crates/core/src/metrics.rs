//! Per-run metric series, cross-run aggregation and the convergence test.

use crate::error::{Error, Result};

/// Per-step records of one simulation run. Entry `t` describes the state
/// after step `t` has been applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsSeries {
    pub tracking_error: Vec<f64>,
    pub cumulative_collisions: Vec<u64>,
    /// Mean over agents of the norm of their uploaded (pre-compression)
    /// gradient estimate.
    pub grad_norm: Vec<f64>,
    /// Bytes sent to the server in that step (all agents).
    pub bytes: Vec<u64>,
    /// Tracking error of the initial state.
    pub initial_error: f64,
    /// Step at which the run was aborted for divergence.
    pub diverged_at: Option<usize>,
    /// Cumulative pair counts for additional distance thresholds, as
    /// `(threshold, total)`.
    pub threshold_totals: Vec<(f64, u64)>,
}

impl MetricsSeries {
    pub fn len(&self) -> usize {
        self.tracking_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracking_error.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_error(&self) -> f64 {
        self.tracking_error.last().copied().unwrap_or(self.initial_error)
    }

    pub fn total_collisions(&self) -> u64 {
        self.cumulative_collisions.last().copied().unwrap_or(0)
    }

    pub fn push(&mut self, error: f64, cumulative: u64, grad_norm: f64, bytes: u64) {
        self.tracking_error.push(error);
        self.cumulative_collisions.push(cumulative);
        self.grad_norm.push(grad_norm);
        self.bytes.push(bytes);
    }
}

/// Pointwise mean with a 95% normal confidence half-width.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanSeries {
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl MeanSeries {
    /// Mean and half-width of a set of samples.
    pub fn of(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return (mean, 0.0);
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, 1.96 * (var / n).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub tracking_error: MeanSeries,
    pub cumulative_collisions: MeanSeries,
    pub grad_norm: MeanSeries,
    pub bytes: MeanSeries,
    /// Runs that entered the mean.
    pub runs: usize,
    /// Runs left out because they diverged.
    pub diverged: usize,
    pub total_collisions: (f64, f64),
    pub final_error: (f64, f64),
    pub converged_fraction: f64,
}

/// Averages the non-diverged runs step by step. Runs are summed in the order
/// given after sorting each column, so the result does not depend on run
/// order.
pub fn aggregate(series: &[MetricsSeries]) -> Result<Aggregate> {
    if series.is_empty() {
        return Err(Error::Input("nothing to aggregate".into()));
    }
    let kept: Vec<&MetricsSeries> = series.iter().filter(|s| !s.diverged()).collect();
    if kept.is_empty() {
        return Err(Error::Input(format!("all {} runs diverged", series.len())));
    }
    let len = kept[0].len();
    if kept.iter().any(|s| s.len() != len) {
        return Err(Error::Input("runs have different lengths".into()));
    }
    let column = |f: &dyn Fn(&MetricsSeries, usize) -> f64| -> MeanSeries {
        let mut mean = Vec::with_capacity(len);
        let mut half_width = Vec::with_capacity(len);
        for t in 0..len {
            let mut col: Vec<f64> = kept.iter().map(|s| f(s, t)).collect();
            col.sort_by(f64::total_cmp);
            let (m, h) = MeanSeries::of(&col);
            mean.push(m);
            half_width.push(h);
        }
        MeanSeries { mean, half_width }
    };
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        MeanSeries::of(&v)
    };
    let converged = kept.iter().filter(|s| converged(s).converged).count();
    Ok(Aggregate {
        tracking_error: column(&|s, t| s.tracking_error[t]),
        cumulative_collisions: column(&|s, t| s.cumulative_collisions[t] as f64),
        grad_norm: column(&|s, t| s.grad_norm[t]),
        bytes: column(&|s, t| s.bytes[t] as f64),
        runs: kept.len(),
        diverged: series.len() - kept.len(),
        total_collisions: sorted(kept.iter().map(|s| s.total_collisions() as f64).collect()),
        final_error: sorted(kept.iter().map(|s| s.final_error()).collect()),
        converged_fraction: converged as f64 / kept.len() as f64,
    })
}

/// Length of the trailing window the error floor is taken over.
pub const FLOOR_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convergence {
    /// Smallest error over the trailing window.
    pub floor: f64,
    /// First step from which the error never again exceeds twice the floor.
    pub settle_step: Option<usize>,
    pub converged: bool,
}

/// A curve has converged when it settles below twice its trailing floor
/// before the trailing window starts and that floor is at most a tenth of
/// the initial error.
pub fn convergence_of(errors: &[f64], initial: f64) -> Convergence {
    let n = errors.len();
    if n == 0 {
        return Convergence {
            floor: initial,
            settle_step: None,
            converged: false,
        };
    }
    let window = &errors[n.saturating_sub(FLOOR_WINDOW)..];
    let floor = window.iter().copied().fold(f64::INFINITY, f64::min);
    let band = 2.0 * floor;
    let settle_step = match errors.iter().rposition(|&e| e > band) {
        None => Some(0),
        Some(k) if k + 1 < n => Some(k + 1),
        Some(_) => None,
    };
    let converged = settle_step.is_some_and(|s| s + FLOOR_WINDOW <= n) && floor <= 0.1 * initial;
    Convergence {
        floor,
        settle_step,
        converged,
    }
}

pub fn converged(s: &MetricsSeries) -> Convergence {
    convergence_of(&s.tracking_error, s.initial_error)
}
