//! Area coverage world: each agent patrols a circular route inside its own
//! disk, neighbouring disks overlap, and agents should stay out of each
//! other's way in the shared regions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub n_agents: usize,
    pub disk_radius: f64,
    /// Fraction of one disk's area shared with the next disk on the line.
    pub overlap: f64,
    /// Route radius as a fraction of the disk radius.
    pub route_fraction: f64,
    /// Full route cycles completed over `steps`.
    pub cycles: f64,
    pub lambda: f64,
    pub steps: usize,
    /// Pair distance at or below which a step counts as an area violation.
    pub violation_distance: f64,
    /// Further thresholds reported alongside the main one.
    pub extra_thresholds: Vec<f64>,
    pub neighbor_dropout: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            disk_radius: 5.0,
            overlap: 0.175,
            route_fraction: 0.7,
            cycles: 4.0,
            lambda: 100.0,
            steps: 7000,
            violation_distance: 3.0,
            extra_thresholds: vec![5.0, 10.0],
            neighbor_dropout: 0.5,
        }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return fail("coverage needs at least one agent".into());
        }
        if !(self.disk_radius > 0.0) {
            return fail(format!("disk_radius must be positive, got {}", self.disk_radius));
        }
        if !(self.overlap > 0.0 && self.overlap < 1.0) {
            return fail(format!("overlap must lie in (0, 1), got {}", self.overlap));
        }
        if !(self.route_fraction > 0.0 && self.route_fraction < 1.0) {
            return fail(format!("route_fraction must lie in (0, 1), got {}", self.route_fraction));
        }
        if !(self.cycles > 0.0) || self.steps == 0 {
            return fail("cycles and steps must be positive".into());
        }
        if !(self.violation_distance > 0.0) || self.extra_thresholds.iter().any(|t| !(*t > 0.0)) {
            return fail("violation thresholds must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.neighbor_dropout) {
            return fail("need lambda >= 0 and neighbor_dropout in [0, 1]".into());
        }
        Ok(())
    }

    /// Neighbour sensing radius: a full disk diameter.
    pub fn sensing_radius(&self) -> f64 {
        2.0 * self.disk_radius
    }

    /// Per-step angular speed of every route.
    pub fn angular_speed(&self) -> f64 {
        2.0 * PI * self.cycles / self.steps as f64
    }

    pub fn spacing(&self) -> f64 {
        spacing_for_overlap(self.disk_radius, self.overlap)
    }

    pub fn routes(&self) -> Vec<Route> {
        let s = self.spacing();
        (0..self.n_agents)
            .map(|i| Route {
                center: [i as f64 * s, 0.0],
                radius: self.route_fraction * self.disk_radius,
                omega: self.angular_speed(),
                phase: 2.0 * PI * i as f64 / self.n_agents as f64,
            })
            .collect()
    }

    /// Agents start uniformly in a square of half-width half the route
    /// radius around their disk centre.
    pub fn initial_positions(&self, routes: &[Route], rng: &mut RngStream) -> Vec<f64> {
        let half = 0.5 * self.route_fraction * self.disk_radius;
        routes
            .iter()
            .flat_map(|r| r.center)
            .map(|c| c + rng.uniform_in(-half, half))
            .collect::<Vec<_>>()
    }
}

/// Area shared by two circles of radius `r` at centre distance `s`.
pub fn lens_area(r: f64, s: f64) -> f64 {
    if s >= 2.0 * r {
        return 0.0;
    }
    2.0 * r * r * (s / (2.0 * r)).acos() - 0.5 * s * (4.0 * r * r - s * s).sqrt()
}

/// Centre distance at which the lens covers `fraction` of one disk.
pub fn spacing_for_overlap(r: f64, fraction: f64) -> f64 {
    let target = fraction * PI * r * r;
    let (mut lo, mut hi) = (0.0, 2.0 * r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lens_area(r, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Circular patrol route in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub center: [f64; 2],
    pub radius: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Route {
    pub fn position(&self, t: usize) -> [f64; 2] {
        let a = self.phase + self.omega * t as f64;
        [
            self.center[0] + self.radius * a.cos(),
            self.center[1] + self.radius * a.sin(),
        ]
    }
}

/// Concatenated route targets of all agents at step `t`.
pub fn route_targets(routes: &[Route], t: usize) -> Vec<f64> {
    routes.iter().flat_map(|r| r.position(t)).collect()
}

/// Unordered pairs within `distance` of each other.
pub fn count_violations(positions: &[f64], distance: f64) -> u64 {
    crate::tracking::count_collisions(positions, 2, distance)
}
