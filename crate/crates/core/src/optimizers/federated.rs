use rayon::prelude::*;

use crate::compressors::CompressorSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::zo::{structured_agent_estimate, NeighborBlocks, WorldView};

use super::{guard_divergence, AgentStreams, Normalization, StepSchedule};

/// Client-side state: error-feedback memory over the full `N * dim` vector.
#[derive(Clone, Debug)]
pub struct FedClient {
    pub memory: Vec<f64>,
    pub streams: AgentStreams,
}

impl FedClient {
    pub fn new(len: usize, streams: AgentStreams) -> Self {
        Self {
            memory: vec![0.0; len],
            streams,
        }
    }
}

/// Concatenated agent positions held by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub positions: Vec<f64>,
    pub step: usize,
}

/// What one client sends in a round.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub transmitted: Vec<f64>,
    pub bytes: usize,
    pub estimate_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    /// Mean of the uploads before any normalisation.
    pub aggregate: Vec<f64>,
    /// Change applied to the positions.
    pub displacement: Vec<f64>,
    pub bytes: usize,
    pub mean_estimate_norm: f64,
}

/// `p = g + e`, transmit `C(p)`, keep `p - C(p)` (memory untouched when
/// error feedback is off).
pub fn client_upload(
    client: &mut FedClient,
    g: &[f64],
    comp: &CompressorSpec,
    error_feedback: bool,
) -> Result<Upload> {
    let mut p = g.to_vec();
    if error_feedback {
        linalg::axpy(1.0, &client.memory, &mut p);
    }
    let c = comp.compress(&p, &mut client.streams.compressor)?;
    if error_feedback {
        client.memory = linalg::sub(&p, &c);
    }
    Ok(Upload {
        bytes: comp.transmitted_bytes(&c),
        transmitted: c,
        estimate_norm: linalg::norm(g),
    })
}

/// Averages the uploads in ascending client order, applies the schedule's
/// normalisation and moves the positions. A zero aggregate (or zero block,
/// for per-agent normalisation) means no movement.
pub fn server_update(
    server: &mut ServerState,
    uploads: &[Upload],
    block_dim: usize,
    sched: &StepSchedule,
) -> Result<RoundReport> {
    let len = server.positions.len();
    if uploads.is_empty() {
        return Err(Error::Config("server round with no clients".into()));
    }
    let mut aggregate = vec![0.0; len];
    for up in uploads {
        if up.transmitted.len() != len {
            return Err(Error::Config(format!(
                "upload has {} components, server holds {len}",
                up.transmitted.len()
            )));
        }
        linalg::axpy(1.0, &up.transmitted, &mut aggregate);
    }
    let n = uploads.len() as f64;
    for v in &mut aggregate {
        *v /= n;
    }

    let mut displacement = vec![0.0; len];
    match sched.normalize {
        Normalization::Off => linalg::axpy(-sched.eta, &aggregate, &mut displacement),
        Normalization::Global => {
            let norm = linalg::norm(&aggregate);
            if norm > 0.0 {
                linalg::axpy(-sched.eta / norm, &aggregate, &mut displacement);
            }
        }
        Normalization::PerAgent => {
            for b in 0..len / block_dim {
                let g = linalg::block(&aggregate, b, block_dim);
                let norm = linalg::norm(g);
                if norm > 0.0 {
                    linalg::axpy(-sched.eta / norm, g, linalg::block_mut(&mut displacement, b, block_dim));
                }
            }
        }
    }
    linalg::axpy(1.0, &displacement, &mut server.positions);
    guard_divergence(&server.positions, server.step)?;
    server.step += 1;

    Ok(RoundReport {
        aggregate,
        displacement,
        bytes: uploads.iter().map(|u| u.bytes).sum(),
        mean_estimate_norm: uploads.iter().map(|u| u.estimate_norm).sum::<f64>() / n,
    })
}

/// One synchronous round with an arbitrary per-client gradient source.
///
/// `estimate(i, rng)` produces client `i`'s estimate from its estimator
/// stream. Clients run in parallel when `parallel` is set; uploads are always
/// reduced in client order, so both modes give bit-identical results.
pub fn federated_round<F>(
    clients: &mut [FedClient],
    server: &mut ServerState,
    block_dim: usize,
    sched: &StepSchedule,
    comp: &CompressorSpec,
    error_feedback: bool,
    parallel: bool,
    estimate: F,
) -> Result<RoundReport>
where
    F: Fn(usize, &mut RngStream) -> Result<Vec<f64>> + Sync,
{
    let work = |(i, client): (usize, &mut FedClient)| -> Result<Upload> {
        let g = estimate(i, &mut client.streams.estimator)?;
        client_upload(client, &g, comp, error_feedback)
    };
    let uploads: Vec<Upload> = if parallel {
        clients.par_iter_mut().enumerate().map(work).collect::<Result<_>>()?
    } else {
        clients.iter_mut().enumerate().map(work).collect::<Result<_>>()?
    };
    server_update(server, &uploads, block_dim, sched)
}

/// A federated round where every client uses the sparse structured ZO
/// estimate of its local tracking loss.
#[allow(clippy::too_many_arguments)]
pub fn fed_ef_zo_sgd_round(
    clients: &mut [FedClient],
    server: &mut ServerState,
    world: &WorldView<'_>,
    sched: &StepSchedule,
    comp: &CompressorSpec,
    error_feedback: bool,
    routing: NeighborBlocks,
    parallel: bool,
) -> Result<RoundReport> {
    let sp = sched.smoothing();
    federated_round(
        clients,
        server,
        world.dim,
        sched,
        comp,
        error_feedback,
        parallel,
        |i, rng| structured_agent_estimate(i, world, sp, routing, rng),
    )
}
