//! Comparison methods: purely local momentum SGD with no server, and a
//! first-order federated average that sees exact local-loss gradients.

use crate::compressors::CompressorSpec;
use crate::error::Result;
use crate::linalg;
use crate::rng::RngStream;
use crate::tracking;
use crate::zo::{source_estimate, WorldView};

use super::{federated_round, FedClient, RoundReport, ServerState, StepSchedule};

/// Momentum buffer of one locally optimising agent (`dim` long).
#[derive(Clone, Debug, PartialEq)]
pub struct SgdmAgent {
    pub momentum: Vec<f64>,
}

impl SgdmAgent {
    pub fn new(dim: usize) -> Self {
        Self {
            momentum: vec![0.0; dim],
        }
    }
}

/// `m <- beta m + g`, returns the displacement `-eta m / ||m||` (zero when
/// `m = 0`).
pub fn momentum_update(agent: &mut SgdmAgent, g: &[f64], eta: f64, beta_m: f64) -> Vec<f64> {
    for (m, gi) in agent.momentum.iter_mut().zip(g) {
        *m = beta_m * *m + gi;
    }
    let norm = linalg::norm(&agent.momentum);
    if norm > 0.0 {
        agent.momentum.iter().map(|m| -eta * m / norm).collect()
    } else {
        vec![0.0; g.len()]
    }
}

/// Agent `i` estimates the gradient of its own source term only and takes a
/// normalised momentum step. Returns the displacement of its block.
pub fn sgdm_baseline_step(
    i: usize,
    agent: &mut SgdmAgent,
    world: &WorldView<'_>,
    sched: &StepSchedule,
    beta_m: f64,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, f64)> {
    let g = source_estimate(i, world, sched.smoothing(), rng)?;
    let g_norm = linalg::norm(&g);
    Ok((momentum_update(agent, &g, sched.eta, beta_m), g_norm))
}

/// Federated round where each client uploads the exact gradient of its local
/// loss (no lookahead), compressed with error feedback as usual.
#[allow(clippy::too_many_arguments)]
pub fn fo_fedavg_ef_round(
    clients: &mut [FedClient],
    server: &mut ServerState,
    world: &WorldView<'_>,
    sched: &StepSchedule,
    comp: &CompressorSpec,
    error_feedback: bool,
    parallel: bool,
) -> Result<RoundReport> {
    federated_round(
        clients,
        server,
        world.dim,
        sched,
        comp,
        error_feedback,
        parallel,
        |i, _| Ok(tracking::local_loss_gradient(i, world, &world.neighbors[i])),
    )
}
