//! Evasive target tracking world: `N` agents each chase their own source,
//! sources flee their tracker at constant speed, agents sense neighbours
//! within a radius subject to random detection dropout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::zo::WorldView;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub n_agents: usize,
    pub dim: usize,
    /// Sensing radius `r`.
    pub sensing_radius: f64,
    /// Collision radius `R`.
    pub collision_radius: f64,
    pub lambda: f64,
    /// Source speed.
    pub beta: f64,
    /// Probability that a within-radius neighbour goes undetected.
    pub neighbor_dropout: f64,
    pub agent_box: [f64; 2],
    pub source_box: [f64; 2],
    pub steps: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            n_agents: 20,
            dim: 2,
            sensing_radius: 10.0,
            collision_radius: 3.0,
            lambda: 1.0,
            beta: 0.1,
            neighbor_dropout: 0.5,
            agent_box: [-100.0, 100.0],
            source_box: [200.0, 400.0],
            steps: 1000,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 || self.dim == 0 {
            return fail("n_agents and dim must be at least 1".into());
        }
        if !(self.sensing_radius > self.collision_radius && self.collision_radius > 0.0) {
            return fail(format!(
                "need sensing_radius > collision_radius > 0, got r = {}, R = {}",
                self.sensing_radius, self.collision_radius
            ));
        }
        if !(self.beta >= 0.0) || !(self.lambda >= 0.0) {
            return fail("beta and lambda must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.neighbor_dropout) {
            return fail(format!("neighbor_dropout {} outside [0, 1]", self.neighbor_dropout));
        }
        for (name, b) in [("agent_box", self.agent_box), ("source_box", self.source_box)] {
            if !(b[0] <= b[1]) {
                return fail(format!("{name} bounds out of order: {b:?}"));
            }
        }
        Ok(())
    }
}

/// Positions and velocities of all agents and sources, `N * dim` each.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub dim: usize,
    pub agent_positions: Vec<f64>,
    pub source_positions: Vec<f64>,
    pub agent_velocities: Vec<f64>,
    pub source_velocities: Vec<f64>,
    pub step: usize,
    pub collision_count: u64,
}

impl WorldState {
    pub fn n_agents(&self) -> usize {
        self.agent_positions.len() / self.dim
    }
}

/// Agents uniform in the agent box, then sources uniform in the source box,
/// drawn coordinate by coordinate in agent order.
pub fn init_world(cfg: &TrackingConfig, rng: &mut RngStream) -> WorldState {
    let len = cfg.n_agents * cfg.dim;
    let agent_positions: Vec<f64> = (0..len)
        .map(|_| rng.uniform_in(cfg.agent_box[0], cfg.agent_box[1]))
        .collect();
    let source_positions: Vec<f64> = (0..len)
        .map(|_| rng.uniform_in(cfg.source_box[0], cfg.source_box[1]))
        .collect();
    WorldState {
        dim: cfg.dim,
        agent_positions,
        source_positions,
        agent_velocities: vec![0.0; len],
        source_velocities: vec![0.0; len],
        step: 0,
        collision_count: 0,
    }
}

/// Each source's velocity `beta (z - x) / ||z - x||` directly away from its
/// tracker; zero when the two coincide.
pub fn evasion_velocities(ws: &WorldState, beta: f64) -> Vec<f64> {
    let d = ws.dim;
    let mut v = vec![0.0; ws.source_positions.len()];
    for i in 0..ws.n_agents() {
        let x = linalg::block(&ws.agent_positions, i, d);
        let z = linalg::block(&ws.source_positions, i, d);
        let away = linalg::sub(z, x);
        let len = linalg::norm(&away);
        if len > 0.0 {
            let out = linalg::block_mut(&mut v, i, d);
            for (o, a) in out.iter_mut().zip(&away) {
                *o = beta * a / len;
            }
        }
    }
    v
}

/// Moves every source by its evasion velocity and records that velocity.
pub fn evasion_step(ws: &WorldState, beta: f64) -> WorldState {
    let mut next = ws.clone();
    next.source_velocities = evasion_velocities(ws, beta);
    linalg::axpy(1.0, &next.source_velocities, &mut next.source_positions);
    next
}

/// Directed neighbour sets with detection dropout.
///
/// For each agent `i` (ascending) and each `j != i` (ascending) within
/// distance `r`, one draw `X` in `(0, 1]` decides whether `j` enters `D^i`
/// (`X > p`). The relation is therefore not symmetric for `p > 0`.
pub fn neighbor_sets(
    positions: &[f64],
    dim: usize,
    r: f64,
    p: f64,
    rng: &mut RngStream,
) -> Vec<Vec<usize>> {
    let n = positions.len() / dim;
    let r_sq = r * r;
    let mut sets = vec![Vec::new(); n];
    for (i, set) in sets.iter_mut().enumerate() {
        let xi = linalg::block(positions, i, dim);
        for j in 0..n {
            if j == i || linalg::dist_sq(xi, linalg::block(positions, j, dim)) > r_sq {
                continue;
            }
            let x = 1.0 - rng.uniform();
            if x > p {
                set.push(j);
            }
        }
    }
    sets
}

/// `l^i = 1/2 ||x^i - z^i||^2 - lambda * sum_{j in D} (||x^i - x^j||^2 - r^2)`.
pub fn local_loss(i: usize, world: &WorldView<'_>, neighbors: &[usize]) -> f64 {
    let d = world.dim;
    let xi = linalg::block(world.positions, i, d);
    let source = 0.5 * linalg::dist_sq(xi, linalg::block(world.targets, i, d));
    let reg: f64 = neighbors
        .iter()
        .map(|&j| regularizer(world, xi, linalg::block(world.positions, j, d)))
        .sum();
    source - reg
}

fn regularizer(world: &WorldView<'_>, xi: &[f64], xj: &[f64]) -> f64 {
    world.lambda * (linalg::dist_sq(xi, xj) - world.radius * world.radius)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborTerm {
    pub j: usize,
    /// `r^{ij}` at the current positions.
    pub reg: f64,
    /// `r^{ij}` with `x^i` perturbed by `mu u^{ij}` and `x^j` advanced by
    /// half its velocity.
    pub reg_plus: f64,
}

/// The individual terms of the local loss and of its perturbed lookahead
/// counterpart, so each block's difference quotient can be formed separately.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub source: f64,
    /// `1/2 ||x^i + mu u^{ii} - (z^i + 0.5 zeta^i)||^2`
    pub source_plus: f64,
    pub neighbors: Vec<NeighborTerm>,
}

impl LossTerms {
    pub fn loss(&self) -> f64 {
        self.source - self.neighbors.iter().map(|n| n.reg).sum::<f64>()
    }

    pub fn loss_plus(&self) -> f64 {
        self.source_plus - self.neighbors.iter().map(|n| n.reg_plus).sum::<f64>()
    }
}

/// `directions` lists `(block, u)` pairs; it must contain `i` and every
/// member of `neighbors`.
pub fn local_loss_plus(
    i: usize,
    world: &WorldView<'_>,
    neighbors: &[usize],
    mu: f64,
    directions: &[(usize, &[f64])],
) -> LossTerms {
    let d = world.dim;
    let dir = |j: usize| -> &[f64] {
        directions
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, u)| *u)
            .expect("direction supplied for every populated block")
    };
    let xi = linalg::block(world.positions, i, d);
    let perturbed = |u: &[f64]| -> Vec<f64> { xi.iter().zip(u).map(|(x, u)| x + mu * u).collect() };

    let z = linalg::block(world.targets, i, d);
    let zeta = linalg::block(world.target_velocities, i, d);
    let z_ahead: Vec<f64> = z.iter().zip(zeta).map(|(z, v)| z + 0.5 * v).collect();
    let source = 0.5 * linalg::dist_sq(xi, z);
    let source_plus = 0.5 * linalg::dist_sq(&perturbed(dir(i)), &z_ahead);

    let neighbors = neighbors
        .iter()
        .map(|&j| {
            let xj = linalg::block(world.positions, j, d);
            let xj_vel = linalg::block(world.agent_velocities, j, d);
            let xj_ahead: Vec<f64> = xj.iter().zip(xj_vel).map(|(x, v)| x + 0.5 * v).collect();
            NeighborTerm {
                j,
                reg: regularizer(world, xi, xj),
                reg_plus: regularizer(world, &perturbed(dir(j)), &xj_ahead),
            }
        })
        .collect();
    LossTerms {
        source,
        source_plus,
        neighbors,
    }
}

/// Exact gradient of the local loss over all `N * dim` coordinates.
pub fn local_loss_gradient(i: usize, world: &WorldView<'_>, neighbors: &[usize]) -> Vec<f64> {
    let d = world.dim;
    let mut g = vec![0.0; world.positions.len()];
    let xi = linalg::block(world.positions, i, d);
    let z = linalg::block(world.targets, i, d);
    for k in 0..d {
        g[i * d + k] = xi[k] - z[k];
    }
    for &j in neighbors {
        let xj = linalg::block(world.positions, j, d);
        for k in 0..d {
            let diff = 2.0 * world.lambda * (xi[k] - xj[k]);
            g[i * d + k] -= diff;
            g[j * d + k] += diff;
        }
    }
    g
}

/// Unordered agent pairs at distance `<= radius`.
pub fn count_collisions(positions: &[f64], dim: usize, radius: f64) -> u64 {
    let n = positions.len() / dim;
    let r_sq = radius * radius;
    let mut count = 0;
    for i in 0..n {
        let xi = linalg::block(positions, i, dim);
        for j in i + 1..n {
            if linalg::dist_sq(xi, linalg::block(positions, j, dim)) <= r_sq {
                count += 1;
            }
        }
    }
    count
}

/// Mean over agents of the distance to their own target (or of its square).
pub fn tracking_error(positions: &[f64], targets: &[f64], dim: usize, squared: bool) -> f64 {
    let n = positions.len() / dim;
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let sq = linalg::dist_sq(linalg::block(positions, i, dim), linalg::block(targets, i, dim));
            if squared {
                sq
            } else {
                sq.sqrt()
            }
        })
        .sum();
    total / n as f64
}
