//! The multi-agent simulation loop shared by the tracking and coverage
//! scenarios.
//!
//! One step: target velocities, neighbour sensing, the method's update,
//! agent velocities from the applied displacement, target motion, then the
//! pair counters and metrics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressors::CompressorSpec;
use crate::coverage::{route_targets, Route};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::MetricsSeries;
use crate::optimizers::{
    fed_ef_zo_sgd_round, fo_fedavg_ef_round, sgdm_baseline_step, AgentStreams, FedClient,
    RoundReport, ServerState, SgdmAgent, StepSchedule, DIVERGENCE_NORM,
};
use crate::rng::{label, RngStream};
use crate::tracking::{count_collisions, evasion_velocities, neighbor_sets, tracking_error, WorldState};
use crate::zo::{NeighborBlocks, WorldView};

/// How the agent positions are updated each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Federated zeroth-order SGD with compressed uploads.
    FedZo {
        compressor: CompressorSpec,
        error_feedback: bool,
    },
    /// Federated averaging of exact local-loss gradients.
    FoFedAvg {
        compressor: CompressorSpec,
        error_feedback: bool,
    },
    /// Independent momentum SGD on each agent's own source term.
    Sgdm { beta: f64 },
}

impl Method {
    pub fn compressor(&self) -> Option<&CompressorSpec> {
        match self {
            Method::FedZo { compressor, .. } | Method::FoFedAvg { compressor, .. } => Some(compressor),
            Method::Sgdm { .. } => None,
        }
    }

    /// File-system friendly name.
    pub fn slug(&self) -> String {
        self.to_string().replace([':', '+'], "_")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sgdm { beta } => write!(f, "sgdm:{beta}"),
            Method::FedZo {
                compressor,
                error_feedback,
            } => write!(f, "{compressor}{}", if *error_feedback { "+ef" } else { "" }),
            Method::FoFedAvg {
                compressor,
                error_feedback,
            } => write!(f, "fo:{compressor}{}", if *error_feedback { "+ef" } else { "" }),
        }
    }
}

/// Grammar: `sgdm[:beta]`, `[fo:]<compressor>[+ef]`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("sgdm") {
            let beta = match rest.strip_prefix(':') {
                Some(b) => b
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad momentum in method `{s}`")))?,
                None if rest.is_empty() => 0.9,
                None => return Err(Error::Config(format!("unknown method `{s}`"))),
            };
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {beta}")));
            }
            return Ok(Method::Sgdm { beta });
        }
        let (first_order, rest) = match s.strip_prefix("fo:") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (comp, error_feedback) = match rest.strip_suffix("+ef") {
            Some(c) => (c, true),
            None => (rest, false),
        };
        let compressor: CompressorSpec = comp.parse()?;
        Ok(if first_order {
            Method::FoFedAvg {
                compressor,
                error_feedback,
            }
        } else {
            Method::FedZo {
                compressor,
                error_feedback,
            }
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// How the targets move.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetMotion {
    /// Each source flees its own tracker at speed `beta`.
    Evasion { beta: f64 },
    /// Each target follows a fixed circular route.
    Routes(Vec<Route>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub sensing_radius: f64,
    /// Distance at or below which a pair of agents is counted.
    pub collision_radius: f64,
    pub extra_thresholds: Vec<f64>,
    pub lambda: f64,
    pub neighbor_dropout: f64,
    pub steps: usize,
    pub schedule: StepSchedule,
    pub method: Method,
    pub routing: NeighborBlocks,
    pub parallel: bool,
    pub record_trajectory: bool,
}

/// Agent and target positions after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub agents: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    pub metrics: MetricsSeries,
    pub trajectory: Vec<Snapshot>,
    pub final_state: WorldState,
}

enum Agents {
    Federated {
        clients: Vec<FedClient>,
        server: ServerState,
    },
    Local(Vec<(SgdmAgent, AgentStreams)>),
}

/// Runs the loop from `initial` with every random draw taken from `root`'s
/// named substreams. Divergence ends the run early and is recorded in the
/// metrics; other errors are returned.
pub fn simulate(
    params: &SimParams,
    initial: WorldState,
    motion: &TargetMotion,
    root: &RngStream,
) -> Result<SimOutcome> {
    let dim = initial.dim;
    let n = initial.n_agents();
    if n == 0 {
        return Err(Error::Config("simulation needs at least one agent".into()));
    }
    if initial.source_positions.len() != n * dim {
        return Err(Error::Config("agent and target counts differ".into()));
    }
    if let TargetMotion::Routes(routes) = motion {
        if routes.len() != n || dim != 2 {
            return Err(Error::Config("routes need one planar route per agent".into()));
        }
    }
    if let Some(c) = params.method.compressor() {
        c.validate(n * dim)?;
    }
    linalg::ensure_finite(&initial.agent_positions, "initial agent positions")?;
    linalg::ensure_finite(&initial.source_positions, "initial target positions")?;

    let mut ws = initial;
    let mut dropout = root.derive(label::NEIGHBOR_DROPOUT);
    let mut agents = match &params.method {
        Method::Sgdm { .. } => Agents::Local(
            (0..n)
                .map(|i| (SgdmAgent::new(dim), AgentStreams::for_agent(root, i)))
                .collect(),
        ),
        _ => Agents::Federated {
            clients: (0..n)
                .map(|i| FedClient::new(n * dim, AgentStreams::for_agent(root, i)))
                .collect(),
            server: ServerState {
                positions: ws.agent_positions.clone(),
                step: 0,
            },
        },
    };

    let mut metrics = MetricsSeries {
        initial_error: tracking_error(&ws.agent_positions, &ws.source_positions, dim, false),
        threshold_totals: params.extra_thresholds.iter().map(|&t| (t, 0)).collect(),
        ..Default::default()
    };
    let mut trajectory = Vec::new();

    for step in 0..params.steps {
        ws.source_velocities = match motion {
            TargetMotion::Evasion { beta } => evasion_velocities(&ws, *beta),
            TargetMotion::Routes(routes) => {
                linalg::sub(&route_targets(routes, step + 1), &route_targets(routes, step))
            }
        };
        let neighbors = neighbor_sets(
            &ws.agent_positions,
            dim,
            params.sensing_radius,
            params.neighbor_dropout,
            &mut dropout,
        );
        let view = WorldView {
            dim,
            positions: &ws.agent_positions,
            targets: &ws.source_positions,
            target_velocities: &ws.source_velocities,
            agent_velocities: &ws.agent_velocities,
            neighbors: &neighbors,
            lambda: params.lambda,
            radius: params.sensing_radius,
            step,
        };

        let report = match advance(&mut agents, &view, params) {
            Ok(r) => r,
            Err(Error::Divergence { step: s, .. }) => {
                metrics.diverged_at = Some(s);
                break;
            }
            Err(e) => return Err(e),
        };

        linalg::axpy(1.0, &report.displacement, &mut ws.agent_positions);
        ws.agent_velocities = report.displacement.iter().map(|v| v / params.schedule.eta).collect();
        match motion {
            TargetMotion::Evasion { .. } => {
                linalg::axpy(1.0, &ws.source_velocities, &mut ws.source_positions)
            }
            TargetMotion::Routes(routes) => ws.source_positions = route_targets(routes, step + 1),
        }
        ws.step = step + 1;
        ws.collision_count += count_collisions(&ws.agent_positions, dim, params.collision_radius);
        for (threshold, total) in &mut metrics.threshold_totals {
            *total += count_collisions(&ws.agent_positions, dim, *threshold);
        }
        metrics.push(
            tracking_error(&ws.agent_positions, &ws.source_positions, dim, false),
            ws.collision_count,
            report.mean_estimate_norm,
            report.bytes as u64,
        );
        if params.record_trajectory {
            trajectory.push(Snapshot {
                step: ws.step,
                agents: ws.agent_positions.clone(),
                targets: ws.source_positions.clone(),
            });
        }
    }

    Ok(SimOutcome {
        metrics,
        trajectory,
        final_state: ws,
    })
}

fn advance(agents: &mut Agents, view: &WorldView<'_>, params: &SimParams) -> Result<RoundReport> {
    let sched = &params.schedule;
    match (agents, &params.method) {
        (
            Agents::Federated { clients, server },
            Method::FedZo {
                compressor,
                error_feedback,
            },
        ) => fed_ef_zo_sgd_round(
            clients,
            server,
            view,
            sched,
            compressor,
            *error_feedback,
            params.routing,
            params.parallel,
        ),
        (
            Agents::Federated { clients, server },
            Method::FoFedAvg {
                compressor,
                error_feedback,
            },
        ) => fo_fedavg_ef_round(clients, server, view, sched, compressor, *error_feedback, params.parallel),
        (Agents::Local(locals), Method::Sgdm { beta }) => {
            let work = |(i, (agent, streams)): (usize, &mut (SgdmAgent, AgentStreams))| {
                sgdm_baseline_step(i, agent, view, sched, *beta, &mut streams.estimator)
            };
            let steps: Vec<(Vec<f64>, f64)> = if params.parallel {
                locals.par_iter_mut().enumerate().map(work).collect::<Result<_>>()?
            } else {
                locals.iter_mut().enumerate().map(work).collect::<Result<_>>()?
            };
            let n = steps.len();
            let mut displacement = Vec::with_capacity(n * view.dim);
            let mut norm_sum = 0.0;
            for (d, g) in steps {
                displacement.extend(d);
                norm_sum += g;
            }
            let mut next = view.positions.to_vec();
            linalg::axpy(1.0, &displacement, &mut next);
            let norm = linalg::norm(&next);
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    step: view.step,
                    norm,
                });
            }
            Ok(RoundReport {
                aggregate: Vec::new(),
                displacement,
                bytes: 0,
                mean_estimate_norm: norm_sum / n as f64,
            })
        }
        _ => unreachable!("agent state always matches the method"),
    }
}
