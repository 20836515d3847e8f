//! Experiment configuration, parameter sweeps, seeded multi-run execution
//! and CSV output.

mod output;
mod run;

pub use output::{emit_csv, parse_csv, write_trajectory, CSV_HEADER};
pub use run::{run_experiment, run_point, PointReport, ExperimentReport};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compressors::CompressorSpec;
use crate::coverage::CoverageConfig;
use crate::error::{Error, Result};
use crate::optimizers::{Normalization, StepSchedule};
use crate::sim::Method;
use crate::synthetic::SyntheticConfig;
use crate::tracking::TrackingConfig;
use crate::zo::NeighborBlocks;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Tracking,
    Coverage,
    SyntheticQuadratic,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracking" => Ok(Scenario::Tracking),
            "coverage" => Ok(Scenario::Coverage),
            "synthetic-quadratic" | "synthetic" => Ok(Scenario::SyntheticQuadratic),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (valid: tracking, coverage, synthetic-quadratic)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Step size (default 1). The synthetic scenario always uses the
    /// bound's own schedule.
    pub eta: Option<f64>,
    pub mu: f64,
    pub normalize: Normalization,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            eta: None,
            mu: 0.05,
            normalize: Normalization::PerAgent,
        }
    }
}

/// One sweep axis. `param` may join several names with `/`, in which case
/// each value joins the same number of parts (`n/eta` with `"5/0.5"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<SweepValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v}"),
            SweepValue::Text(v) => f.write_str(v),
        }
    }
}

impl SweepAxis {
    /// Parses the command-line form `name=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (param, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep `{spec}` is not of the form name=v1,v2,...")))?;
        let values: Vec<SweepValue> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| SweepValue::Text(v.to_string()))
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("sweep `{spec}` has no values")));
        }
        Ok(SweepAxis {
            param: param.trim().to_string(),
            values,
        })
    }

    /// `(name, value)` assignments for the `k`-th value.
    pub fn assignments(&self, k: usize) -> Result<Vec<(String, String)>> {
        let names: Vec<&str> = self.param.split('/').collect();
        let value = self.values[k].to_string();
        let parts: Vec<&str> = if names.len() == 1 {
            vec![value.as_str()]
        } else {
            value.split('/').collect()
        };
        if parts.len() != names.len() {
            return Err(Error::Config(format!(
                "sweep value `{value}` does not match parameters `{}`",
                self.param
            )));
        }
        Ok(names
            .iter()
            .zip(parts)
            .map(|(n, v)| (n.trim().to_string(), v.trim().to_string()))
            .collect())
    }
}

/// Names accepted by [`ExperimentConfig::set`] and sweeps.
pub const PARAMETERS: &[&str] = &[
    "lambda", "n", "eta", "mu", "steps", "bits", "delta", "method", "dropout", "beta", "threshold",
    "routing", "sigma", "dim", "normalize",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Independent runs per method and sweep point; run `r` uses seed
    /// `base_seed + r` for every method.
    pub runs: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub routing: NeighborBlocks,
    pub schedule: ScheduleConfig,
    pub tracking: TrackingConfig,
    pub coverage: CoverageConfig,
    pub synthetic: SyntheticConfig,
    pub sweep: Vec<SweepAxis>,
    pub out: Option<PathBuf>,
    /// Run seeds concurrently (results are identical either way).
    pub parallel: bool,
    /// Also write per-run position dumps.
    pub trajectories: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Tracking,
            runs: 1,
            base_seed: 0,
            methods: vec![Method::FedZo {
                compressor: CompressorSpec::Qsgd { bits: 1 },
                error_feedback: true,
            }],
            routing: NeighborBlocks::Repulsive,
            schedule: ScheduleConfig::default(),
            tracking: TrackingConfig::default(),
            coverage: CoverageConfig::default(),
            synthetic: SyntheticConfig::default(),
            sweep: Vec::new(),
            out: None,
            parallel: true,
            trajectories: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        match self.scenario {
            Scenario::Tracking => self.tracking.validate()?,
            Scenario::Coverage => self.coverage.validate()?,
            Scenario::SyntheticQuadratic => {
                self.synthetic.validate()?;
                if self.methods.iter().any(|m| !matches!(m, Method::FedZo { .. })) {
                    return Err(Error::Config(
                        "the synthetic scenario runs single-agent zeroth-order methods only".into(),
                    ));
                }
            }
        }
        if self.scenario != Scenario::SyntheticQuadratic {
            self.schedule()?;
        }
        for axis in &self.sweep {
            for k in 0..axis.values.len() {
                let mut probe = self.clone();
                for (name, value) in axis.assignments(k)? {
                    probe.set(&name, &value)?;
                }
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.schedule.eta.unwrap_or(1.0)
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.eta(), self.schedule.mu, self.schedule.normalize)
    }

    pub fn steps(&self) -> usize {
        match self.scenario {
            Scenario::Tracking => self.tracking.steps,
            Scenario::Coverage => self.coverage.steps,
            Scenario::SyntheticQuadratic => self.synthetic.horizon,
        }
    }

    /// Sets one named parameter from its string form.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{name}: `{value}` is not a number")))
        };
        let int = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{name}: `{value}` is not a non-negative integer")))
        };
        match name {
            "lambda" => {
                let v = num()?;
                self.tracking.lambda = v;
                self.coverage.lambda = v;
            }
            "n" | "n_agents" | "n-agents" => {
                let v = int()?;
                self.tracking.n_agents = v;
                self.coverage.n_agents = v;
            }
            "eta" => self.schedule.eta = Some(num()?),
            "mu" => self.schedule.mu = num()?,
            "steps" => {
                let v = int()?;
                self.tracking.steps = v;
                self.coverage.steps = v;
                self.synthetic.horizon = v;
            }
            "bits" => {
                let bits = value
                    .parse::<u32>()
                    .map_err(|_| Error::Config(format!("bits: `{value}` is not an integer")))?;
                let mut touched = false;
                for m in &mut self.methods {
                    if let Some(CompressorSpec::Qsgd { bits: b }) = compressor_mut(m) {
                        *b = bits;
                        touched = true;
                    }
                }
                if let CompressorSpec::Qsgd { bits: b } = &mut self.synthetic.compressor {
                    *b = bits;
                    touched = true;
                }
                if !touched {
                    return Err(Error::Config("bits sweep needs a qsgd method".into()));
                }
            }
            "delta" => {
                // Drop probability of the biased dropout compressor.
                let drop = num()?;
                if !(0.0..1.0).contains(&drop) {
                    return Err(Error::Config(format!("delta: drop probability {drop} outside [0, 1)")));
                }
                let mut touched = false;
                for m in &mut self.methods {
                    if let Some(CompressorSpec::DropoutBiased { p }) = compressor_mut(m) {
                        *p = 1.0 - drop;
                        touched = true;
                    }
                }
                if !touched {
                    return Err(Error::Config("delta sweep needs a dropout-b method".into()));
                }
            }
            "method" | "compressor" => {
                let methods = value
                    .split(';')
                    .map(str::parse)
                    .collect::<Result<Vec<Method>>>()?;
                if self.scenario == Scenario::SyntheticQuadratic {
                    if let [Method::FedZo {
                        compressor,
                        error_feedback,
                    }] = methods.as_slice()
                    {
                        self.synthetic.compressor = *compressor;
                        self.synthetic.error_feedback = *error_feedback;
                    }
                }
                self.methods = methods;
            }
            "dropout" => {
                let v = num()?;
                self.tracking.neighbor_dropout = v;
                self.coverage.neighbor_dropout = v;
            }
            "beta" => self.tracking.beta = num()?,
            "threshold" => self.coverage.violation_distance = num()?,
            "routing" => {
                self.routing = match value {
                    "as-written" => NeighborBlocks::AsWritten,
                    "repulsive" => NeighborBlocks::Repulsive,
                    _ => return Err(Error::Config(format!("routing: `{value}` (valid: as-written, repulsive)"))),
                }
            }
            "normalize" => {
                self.schedule.normalize = match value {
                    "off" => Normalization::Off,
                    "global" => Normalization::Global,
                    "per-agent" => Normalization::PerAgent,
                    _ => return Err(Error::Config(format!("normalize: `{value}` (valid: off, global, per-agent)"))),
                }
            }
            "sigma" => self.synthetic.sigma = num()?,
            "dim" => {
                let v = int()?;
                self.synthetic.dim = v;
                self.tracking.dim = v;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown parameter `{other}` (valid: {})",
                    PARAMETERS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, each point as its list of
    /// assignments. No sweep gives a single empty point.
    pub fn sweep_points(&self) -> Result<Vec<Vec<(String, String)>>> {
        let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for p in &points {
                for k in 0..axis.values.len() {
                    let mut q = p.clone();
                    q.extend(axis.assignments(k)?);
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(points)
    }

    pub fn at_point(&self, assignments: &[(String, String)]) -> Result<Self> {
        let mut cfg = self.clone();
        for (name, value) in assignments {
            cfg.set(name, value)?;
        }
        cfg.sweep.clear();
        Ok(cfg)
    }
}

fn compressor_mut(m: &mut Method) -> Option<&mut CompressorSpec> {
    match m {
        Method::FedZo { compressor, .. } | Method::FoFedAvg { compressor, .. } => Some(compressor),
        Method::Sgdm { .. } => None,
    }
}

/// Directory-name form of a sweep point.
pub fn point_label(assignments: &[(String, String)]) -> String {
    if assignments.is_empty() {
        return "base".into();
    }
    assignments
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join("_")
        .replace([':', '+', ';', '/'], "-")
}
