//! Error-feedback zeroth-order SGD (single agent and federated), the two
//! experiment baselines, and the convergence-bound calculators.

mod baselines;
mod ef;
mod federated;
pub mod bounds;

pub use baselines::{fo_fedavg_ef_round, momentum_update, sgdm_baseline_step, SgdmAgent};
pub use ef::{ef_apply, ef_zo_sgd_step, EfState, EfStep};
pub use federated::{
    client_upload, fed_ef_zo_sgd_round, federated_round, server_update, FedClient, RoundReport,
    ServerState, Upload,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{label, RngStream};

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// How the server rescales the averaged upload before stepping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `x -= eta * G`
    Off,
    /// `x -= eta * G / ||G||` over the whole concatenated vector.
    Global,
    /// Each agent block of `G` is rescaled to unit norm separately, so every
    /// agent with a nonzero block moves exactly `eta`.
    #[default]
    PerAgent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub eta: f64,
    pub mu: f64,
    pub normalize: Normalization,
}

impl StepSchedule {
    pub fn new(eta: f64, mu: f64, normalize: Normalization) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) || !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!(
                "step size and smoothing radius must be positive (eta = {eta}, mu = {mu})"
            )));
        }
        Ok(Self { eta, mu, normalize })
    }

    pub fn smoothing(&self) -> crate::zo::SmoothingParams {
        crate::zo::SmoothingParams { mu: self.mu }
    }
}

/// The two random streams an agent owns: one for estimator directions, one
/// for compressor randomness.
#[derive(Clone, Debug)]
pub struct AgentStreams {
    pub estimator: RngStream,
    pub compressor: RngStream,
}

impl AgentStreams {
    pub fn for_agent(root: &RngStream, agent: usize) -> Self {
        Self {
            estimator: root.derive(label::ESTIMATOR).derive_index(agent as u64),
            compressor: root.derive(label::COMPRESSOR).derive_index(agent as u64),
        }
    }
}

pub(crate) fn guard_divergence(x: &[f64], step: usize) -> Result<()> {
    let n = linalg::norm(x);
    if !n.is_finite() || n > DIVERGENCE_NORM {
        Err(Error::Divergence { step, norm: n })
    } else {
        Ok(())
    }
}
