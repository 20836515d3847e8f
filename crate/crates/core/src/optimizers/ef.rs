use crate::compressors::CompressorSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::zo::{two_point_estimate, StochasticLoss};

use super::{guard_divergence, AgentStreams, StepSchedule};

/// Iterate, error-feedback memory and step counter of a single agent.
#[derive(Clone, Debug, PartialEq)]
pub struct EfState {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub t: usize,
}

impl EfState {
    pub fn new(x0: Vec<f64>) -> Self {
        let e = vec![0.0; x0.len()];
        Self { x: x0, e, t: 0 }
    }

    /// `x - eta * e`, the iterate the memory has not yet been applied to.
    pub fn virtual_iterate(&self, eta: f64) -> Vec<f64> {
        let mut v = self.x.clone();
        linalg::axpy(-eta, &self.e, &mut v);
        v
    }
}

/// What one step computed, for inspection by callers and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct EfStep {
    pub estimate: Vec<f64>,
    pub transmitted: Vec<f64>,
}

/// One step of compressed error-feedback ZO-SGD:
///
/// ```text
/// u ~ N(0, I);  g = (l(x + mu u) - l(x)) / mu * u
/// p = g + e;    x <- x - eta C(p);    e <- p - C(p)
/// ```
///
/// With `error_feedback = false` the memory stays zero and `p = g`.
/// `sched.normalize` is ignored here; normalisation is a server-side choice.
pub fn ef_zo_sgd_step<L: StochasticLoss + ?Sized>(
    st: &mut EfState,
    loss: &L,
    sched: &StepSchedule,
    comp: &CompressorSpec,
    error_feedback: bool,
    streams: &mut AgentStreams,
) -> Result<EfStep> {
    if st.e.len() != st.x.len() {
        return Err(Error::Config("memory and iterate dimensions differ".into()));
    }
    let u = streams.estimator.normal_vec(st.x.len());
    let g = two_point_estimate(loss, &st.x, st.t, sched.smoothing(), &u)?;
    let transmitted = ef_apply(st, &g, sched.eta, comp, error_feedback, streams)?;
    Ok(EfStep {
        estimate: g,
        transmitted,
    })
}

/// The update half of [`ef_zo_sgd_step`] for a given estimate `g`; returns
/// the compressed vector `C(p)`.
pub fn ef_apply(
    st: &mut EfState,
    g: &[f64],
    eta: f64,
    comp: &CompressorSpec,
    error_feedback: bool,
    streams: &mut AgentStreams,
) -> Result<Vec<f64>> {
    let mut p = g.to_vec();
    if error_feedback {
        linalg::axpy(1.0, &st.e, &mut p);
    }
    let c = comp.compress(&p, &mut streams.compressor)?;
    linalg::axpy(-eta, &c, &mut st.x);
    if error_feedback {
        st.e = linalg::sub(&p, &c);
    }
    guard_divergence(&st.x, st.t)?;
    st.t += 1;
    Ok(c)
}
