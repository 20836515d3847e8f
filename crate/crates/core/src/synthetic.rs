//! A time-varying noisy quadratic stream whose smoothness, noise and drift
//! constants are known exactly, for checking the single-agent bound.
//!
//! `l~_t(x) = 1/2 x^T A x - z_t^T x + c_t` with `A` diagonal (largest
//! eigenvalue 1), `z_t ~ N(0, sigma^2 / d I)` and `c_t = a sin(2 pi t / P)`.
//! Then `l_t(x) = 1/2 x^T A x + c_t`, `E ||grad l~_t||^2 = ||grad l_t||^2 +
//! sigma^2` (so `M = 1`), and `|l_t - l_{t+1}| = |c_t - c_{t+1}|` uniformly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::compressors::CompressorSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizers::bounds::{single_agent_bound, single_agent_schedule, BoundParams};
use crate::optimizers::{ef_zo_sgd_step, AgentStreams, EfState, Normalization, StepSchedule};
use crate::rng::{label, RngStream};
use crate::zo::StochasticLoss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub horizon: usize,
    pub sigma: f64,
    /// Smallest eigenvalue of `A`; the others are evenly spaced up to 1.
    pub eigen_min: f64,
    /// Norm of the starting point, which lies along the all-ones direction.
    pub initial_norm: f64,
    pub drift_amplitude: f64,
    pub drift_period: f64,
    pub compressor: CompressorSpec,
    pub error_feedback: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            horizon: 1000,
            sigma: 1.0,
            eigen_min: 0.1,
            initial_norm: 3.0,
            drift_amplitude: 0.01,
            drift_period: 500.0,
            compressor: CompressorSpec::TopK(crate::compressors::Keep::Fraction(0.3)),
            error_feedback: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.horizon == 0 {
            return Err(Error::Config("dim and horizon must be positive".into()));
        }
        if !(self.sigma > 0.0) || !(self.eigen_min > 0.0 && self.eigen_min <= 1.0) {
            return Err(Error::Config("need sigma > 0 and eigen_min in (0, 1]".into()));
        }
        if !(self.drift_amplitude >= 0.0) || !(self.drift_period > 0.0) || !(self.initial_norm >= 0.0) {
            return Err(Error::Config("drift amplitude, period and initial norm out of range".into()));
        }
        self.compressor.validate(self.dim)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim;
        if d == 1 {
            return vec![1.0];
        }
        (0..d)
            .map(|k| self.eigen_min + (1.0 - self.eigen_min) * k as f64 / (d - 1) as f64)
            .collect()
    }

    pub fn initial_point(&self) -> Vec<f64> {
        vec![self.initial_norm / (self.dim as f64).sqrt(); self.dim]
    }

    fn offset(&self, t: usize) -> f64 {
        self.drift_amplitude * (2.0 * PI * t as f64 / self.drift_period).sin()
    }

    /// `sum_{t < T} |c_t - c_{t+1}|`.
    pub fn omega_bar(&self) -> f64 {
        (0..self.horizon).map(|t| (self.offset(t) - self.offset(t + 1)).abs()).sum()
    }

    /// `l_0(x_0) - min_x l_T(x)`.
    pub fn gap(&self) -> f64 {
        let x0 = self.initial_point();
        let quad: f64 = self.eigenvalues().iter().zip(&x0).map(|(a, x)| a * x * x).sum();
        0.5 * quad + self.offset(0) - self.offset(self.horizon)
    }

    /// Bound constants for this stream with the compressor's analytic
    /// contraction constant.
    pub fn bound_params(&self) -> Result<BoundParams> {
        let delta = self.compressor.analytic_delta(self.dim).ok_or_else(|| {
            Error::Config(format!("compressor {} has no closed-form delta", self.compressor))
        })?;
        Ok(BoundParams {
            gap: self.gap().max(0.0),
            sigma: self.sigma,
            m: 1.0,
            l: 1.0,
            d: self.dim as f64,
            t: self.horizon as f64,
            delta,
            omega_bar: self.omega_bar(),
            ..BoundParams::default()
        })
    }
}

/// The stream itself; noise for step `t` comes from a substream indexed by
/// `t`, so both evaluations of a step see the same sample.
pub struct QuadraticStream {
    cfg: SyntheticConfig,
    eigen: Vec<f64>,
    noise: RngStream,
}

impl QuadraticStream {
    pub fn new(cfg: &SyntheticConfig, root: &RngStream) -> Self {
        Self {
            eigen: cfg.eigenvalues(),
            cfg: cfg.clone(),
            noise: root.derive(label::NOISE),
        }
    }

    pub fn sample(&self, t: usize) -> Vec<f64> {
        let scale = self.cfg.sigma / (self.cfg.dim as f64).sqrt();
        let mut z = self.noise.derive_index(t as u64).normal_vec(self.cfg.dim);
        linalg::scale(scale, &mut z);
        z
    }

    /// `grad l_t(x) = A x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eigen.iter().zip(x).map(|(a, x)| a * x).collect()
    }
}

impl StochasticLoss for QuadraticStream {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn eval(&self, x: &[f64], t: usize) -> f64 {
        let z = self.sample(t);
        let quad: f64 = self.eigen.iter().zip(x).map(|(a, x)| a * x * x).sum();
        0.5 * quad - linalg::dot(&z, x) + self.cfg.offset(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOutcome {
    /// `||grad l_t(x_t)||^2` for `t = 0..T`.
    pub grad_sq: Vec<f64>,
    /// `||x_t||`, the distance to the (fixed) minimiser.
    pub distance: Vec<f64>,
    pub bytes: Vec<u64>,
    pub mean_grad_sq: f64,
    pub params: BoundParams,
    pub bound: f64,
    pub eta: f64,
    pub mu: f64,
}

/// Runs EF-ZO-SGD over the horizon with the bound's own step size and
/// smoothing radius.
pub fn run_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticOutcome> {
    cfg.validate()?;
    let params = cfg.bound_params()?;
    let (eta, mu) = single_agent_schedule(&params)?;
    let sched = StepSchedule::new(eta, mu, Normalization::Off)?;
    let root = RngStream::from_seed(seed);
    let stream = QuadraticStream::new(cfg, &root);
    let mut streams = AgentStreams::for_agent(&root, 0);
    let mut st = EfState::new(cfg.initial_point());

    let mut grad_sq = Vec::with_capacity(cfg.horizon);
    let mut distance = Vec::with_capacity(cfg.horizon);
    let mut bytes = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        grad_sq.push(linalg::norm_sq(&stream.gradient(&st.x)));
        let step = ef_zo_sgd_step(&mut st, &stream, &sched, &cfg.compressor, cfg.error_feedback, &mut streams)?;
        distance.push(linalg::norm(&st.x));
        bytes.push(cfg.compressor.transmitted_bytes(&step.transmitted) as u64);
    }
    let mean_grad_sq = grad_sq.iter().sum::<f64>() / cfg.horizon as f64;
    Ok(SyntheticOutcome {
        grad_sq,
        distance,
        bytes,
        mean_grad_sq,
        bound: single_agent_bound(&params)?,
        params,
        eta,
        mu,
    })
}
