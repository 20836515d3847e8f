//! Two-point Gaussian-smoothing gradient estimators.
//!
//! [`two_point_estimate`] is the generic single-direction estimator
//! `(l(x + mu u) - l(x)) / mu * u`, an unbiased estimate of the gradient of
//! the smoothed loss `l_mu(x) = E_u[l(x + mu u)]`. [`structured_agent_estimate`]
//! is the sparse per-neighbour variant used by each tracking agent: one
//! independent direction per populated block, everything else exactly zero.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::tracking;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingParams {
    pub mu: f64,
}

impl SmoothingParams {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self { mu })
        } else {
            Err(Error::Config(format!("smoothing radius must be positive, got {mu}")))
        }
    }
}

/// A stochastic loss stream `l~_t(x)`. Implementations fix the data sample for
/// step `t`, so two evaluations at the same `t` see the same sample.
pub trait StochasticLoss {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], t: usize) -> f64;
}

/// Adapts a closure `(x, t) -> l~_t(x)` into a [`StochasticLoss`].
pub struct FnLoss<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], usize) -> f64> FnLoss<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], usize) -> f64> StochasticLoss for FnLoss<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], t: usize) -> f64 {
        (self.f)(x, t)
    }
}

/// `(l~_t(x + mu u) - l~_t(x)) / mu * u` with exactly two loss evaluations.
pub fn two_point_estimate<L: StochasticLoss + ?Sized>(
    loss: &L,
    x: &[f64],
    t: usize,
    sp: SmoothingParams,
    u: &[f64],
) -> Result<Vec<f64>> {
    if u.len() != x.len() || x.len() != loss.dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: x {}, u {}, loss {}",
            x.len(),
            u.len(),
            loss.dim()
        )));
    }
    let base = loss.eval(x, t);
    let shifted: Vec<f64> = x.iter().zip(u).map(|(xi, ui)| xi + sp.mu * ui).collect();
    let plus = loss.eval(&shifted, t);
    if !base.is_finite() || !plus.is_finite() {
        return Err(Error::Numerical {
            step: t,
            agent: None,
            detail: format!("loss values {base} / {plus} at x = {x:?}"),
        });
    }
    let coeff = (plus - base) / sp.mu;
    Ok(u.iter().map(|ui| coeff * ui).collect())
}

/// Read-only snapshot of the multi-agent world an agent estimates against.
/// All vectors are concatenated `N * dim` blocks.
#[derive(Clone, Copy, Debug)]
pub struct WorldView<'a> {
    pub dim: usize,
    pub positions: &'a [f64],
    pub targets: &'a [f64],
    pub target_velocities: &'a [f64],
    pub agent_velocities: &'a [f64],
    /// `neighbors[i]` is the (sorted) sensed set of agent `i`.
    pub neighbors: &'a [Vec<usize>],
    pub lambda: f64,
    pub radius: f64,
    pub step: usize,
}

impl WorldView<'_> {
    pub fn n_agents(&self) -> usize {
        self.positions.len() / self.dim
    }
}

/// Which block the neighbour-regulariser difference quotient is written to,
/// and with which sign.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborBlocks {
    /// Block `j` gets `-(r+ - r)/mu * u^{ij}` exactly as written in the
    /// estimator's defining formula. Because the quotient perturbs `x^i`,
    /// applying it to `x^j` pulls `j` towards `i`.
    AsWritten,
    /// Block `j` gets `+(r+ - r)/mu * u^{ij}`, the estimate of
    /// `grad_{x^j} l^i` (the regulariser is antisymmetric in `x^i - x^j`),
    /// which pushes `j` away from `i`.
    #[default]
    Repulsive,
}

/// Sparse per-agent estimate of length `N * dim`.
///
/// Directions are drawn from `rng` one block at a time in ascending block
/// order over `{i} U D^i`. Block `i` carries the source-term quotient with
/// target lookahead `z + 0.5 zeta`; each neighbour block carries the
/// regulariser quotient with lookahead `x^j + 0.5 xi^j`; all other blocks are
/// zero.
pub fn structured_agent_estimate(
    i: usize,
    world: &WorldView<'_>,
    sp: SmoothingParams,
    routing: NeighborBlocks,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let d = world.dim;
    let n = world.n_agents();
    let neighbors = &world.neighbors[i];

    let mut order: Vec<usize> = neighbors.clone();
    order.push(i);
    order.sort_unstable();
    order.dedup();

    let mut directions = vec![0.0; n * d];
    for &j in &order {
        rng.fill_normal(linalg::block_mut(&mut directions, j, d));
    }
    let blocks: Vec<(usize, &[f64])> = order
        .iter()
        .map(|&j| (j, linalg::block(&directions, j, d)))
        .collect();
    let terms = tracking::local_loss_plus(i, world, neighbors, sp.mu, &blocks);

    let mut g = vec![0.0; n * d];
    let source_coeff = (terms.source_plus - terms.source) / sp.mu;
    check_finite(source_coeff, world.step, i)?;
    linalg::axpy(
        source_coeff,
        linalg::block(&directions, i, d),
        linalg::block_mut(&mut g, i, d),
    );
    for nt in &terms.neighbors {
        let quotient = (nt.reg_plus - nt.reg) / sp.mu;
        check_finite(quotient, world.step, i)?;
        let coeff = match routing {
            NeighborBlocks::AsWritten => -quotient,
            NeighborBlocks::Repulsive => quotient,
        };
        linalg::axpy(
            coeff,
            linalg::block(&directions, nt.j, d),
            linalg::block_mut(&mut g, nt.j, d),
        );
    }
    Ok(g)
}

/// Agent `i`'s own-block estimate of the source term alone (no neighbours),
/// length `dim`. Uses the same lookahead as [`structured_agent_estimate`].
pub fn source_estimate(
    i: usize,
    world: &WorldView<'_>,
    sp: SmoothingParams,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let u = rng.normal_vec(world.dim);
    let terms = tracking::local_loss_plus(i, world, &[], sp.mu, &[(i, &u)]);
    let coeff = (terms.source_plus - terms.source) / sp.mu;
    check_finite(coeff, world.step, i)?;
    Ok(u.iter().map(|v| coeff * v).collect())
}

fn check_finite(v: f64, step: usize, agent: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            step,
            agent: Some(agent),
            detail: format!("difference quotient {v}"),
        })
    }
}

/// `f(x) = 1/2 x^T A x + b^T x` with `A` symmetric, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if a.len() != dim * dim {
            return Err(Error::Config(format!(
                "matrix has {} entries, expected {}",
                a.len(),
                dim * dim
            )));
        }
        for r in 0..dim {
            for c in 0..r {
                if (a[r * dim + c] - a[c * dim + r]).abs() > 1e-12 {
                    return Err(Error::Config("quadratic matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { dim, a, b })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Self {
        let dim = diag.len();
        let mut a = vec![0.0; dim * dim];
        for (k, v) in diag.iter().enumerate() {
            a[k * dim + k] = *v;
        }
        Self { dim, a, b }
    }

    fn a_times(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| linalg::dot(&self.a[r * self.dim..(r + 1) * self.dim], x))
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * linalg::dot(x, &self.a_times(x)) + linalg::dot(&self.b, x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.a_times(x);
        linalg::axpy(1.0, &self.b, &mut g);
        g
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|k| self.a[k * self.dim + k]).sum()
    }
}

/// Exact Gaussian smoothing of a quadratic: `f_mu = f + mu^2/2 tr(A)` and
/// `grad f_mu = grad f`.
pub fn smoothed_quadratic_oracle(q: &Quadratic, x: &[f64], mu: f64) -> (f64, Vec<f64>) {
    (q.value(x) + 0.5 * mu * mu * q.trace(), q.gradient(x))
}
