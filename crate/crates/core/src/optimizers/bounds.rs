//! Step-size/smoothing schedules and the right-hand sides of the
//! non-asymptotic bounds on the average squared gradient norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem constants entering the bounds.
///
/// `gap` is the loss gap `l_1(x_1) - l_{T+1}(x*_{T+1})`, `sigma`/`m` the
/// stochastic-gradient growth constants, `l` the smoothness constant,
/// `delta` the compressor contraction constant and `omega_bar` the summed
/// drift. `q` and `z` are the heterogeneity constants, used only by the
/// federated bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub gap: f64,
    pub sigma: f64,
    pub m: f64,
    pub l: f64,
    pub d: f64,
    pub t: f64,
    pub delta: f64,
    pub omega_bar: f64,
    pub q: f64,
    pub z: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            gap: 1.0,
            sigma: 1.0,
            m: 1.0,
            l: 1.0,
            d: 2.0,
            t: 1e6,
            delta: 1.0,
            omega_bar: 0.0,
            q: 1.0,
            z: 1.0,
        }
    }
}

impl BoundParams {
    fn validate(&self, federated: bool) -> Result<()> {
        let mut positive = vec![
            ("sigma", self.sigma),
            ("M", self.m),
            ("L", self.l),
            ("d", self.d),
            ("T", self.t),
        ];
        if federated {
            positive.push(("Q", self.q));
            positive.push(("Z", self.z));
        }
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gap", self.gap), ("omega_bar", self.omega_bar)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        Ok(())
    }
}

/// `eta = 1 / (sigma sqrt((d+4) M T L))`, `mu = 1 / ((d+4) sqrt(T))`.
pub fn single_agent_schedule(p: &BoundParams) -> Result<(f64, f64)> {
    p.validate(false)?;
    let eta = 1.0 / (p.sigma * ((p.d + 4.0) * p.m * p.t * p.l).sqrt());
    Ok((eta, smoothing_schedule(p)))
}

/// `eta = 1 / (sigma sqrt((d+4) M Q T L))`, same `mu` as the single-agent case.
pub fn federated_schedule(p: &BoundParams) -> Result<(f64, f64)> {
    p.validate(true)?;
    let eta = 1.0 / (p.sigma * ((p.d + 4.0) * p.m * p.q * p.t * p.l).sqrt());
    Ok((eta, smoothing_schedule(p)))
}

fn smoothing_schedule(p: &BoundParams) -> f64 {
    1.0 / ((p.d + 4.0) * p.t.sqrt())
}

/// The eight terms of the single-agent bound, in order.
pub fn single_agent_terms(p: &BoundParams) -> Result<[f64; 8]> {
    p.validate(false)?;
    let BoundParams {
        gap,
        sigma,
        m,
        l,
        d,
        t,
        delta,
        omega_bar,
        ..
    } = *p;
    let sq = f64::sqrt;
    let pw = f64::powf;
    Ok([
        8.0 * gap * sigma * sq(d + 4.0) * sq(m) * sq(l) / sq(t),
        8.0 * sigma * d * pw(l, 1.5) * sq(m) / (pw(t, 1.5) * pw(d + 3.0, 1.5)),
        2.0 * pw(d + 6.0, 1.5) * pw(l, 2.5) / (sigma * pw(d + 4.0, 2.5) * pw(t, 1.5) * sq(m)),
        8.0 * sigma * sq(d + 4.0) * sq(l) / (sq(m) * sq(t)),
        pw(d + 3.0, 3.0) * l * l / ((d + 2.0) * (d + 2.0) * t),
        32.0 * l / (delta * delta * sigma * sigma * m * t),
        8.0 * pw(d + 6.0, 3.0) * pw(l, 3.0)
            / (delta * delta * sigma * sigma * pw(d + 4.0, 3.0) * m * t * t),
        8.0 * omega_bar * sigma * sq(d + 4.0) * sq(m) * sq(l) / sq(t),
    ])
}

pub fn single_agent_bound(p: &BoundParams) -> Result<f64> {
    Ok(single_agent_terms(p)?.iter().sum())
}

/// The nine terms of the federated bound, in order.
pub fn federated_terms(p: &BoundParams) -> Result<[f64; 9]> {
    p.validate(true)?;
    let BoundParams {
        gap,
        sigma,
        m,
        l,
        d,
        t,
        delta,
        omega_bar,
        q,
        z,
    } = *p;
    let sq = f64::sqrt;
    let pw = f64::powf;
    Ok([
        8.0 * gap * sigma * sq(d + 4.0) * sq(m) * sq(q) * sq(l) / sq(t),
        8.0 * pw(l, 1.5) * d * sigma * sq(m) * sq(q) / (pw(d + 4.0, 1.5) * pw(t, 1.5)),
        8.0 * sq(l) * sq(d + 4.0) * sq(m) * z * z / (sigma * sq(q) * sq(t)),
        8.0 * sq(l) * sq(d + 4.0) * sigma / (sq(m) * sq(q) * sq(t)),
        2.0 * pw(l, 2.5) * pw(d + 6.0, 3.0) / (pw(d + 4.0, 1.5) * pw(t, 1.5) * sigma * sq(m) * sq(q)),
        32.0 * l * z * z / (sigma * sigma * q * t * delta * delta),
        32.0 * l / (m * q * t * delta * delta),
        8.0 * pw(l, 3.0) * pw(d + 6.0, 3.0) / (pw(d + 4.0, 3.0) * t * t * sigma * sigma * m * q),
        8.0 * omega_bar * sigma * sq(d + 4.0) * sq(m) * sq(q) * sq(l) / sq(t),
    ])
}

pub fn federated_bound(p: &BoundParams) -> Result<f64> {
    Ok(federated_terms(p)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_term_hand_value() {
        let terms = single_agent_terms(&BoundParams::default()).unwrap();
        let expected = 8.0 * 6f64.sqrt() / 1e3;
        assert!((terms[0] - expected).abs() < 1e-15);
        assert!((terms[0] - 0.0196).abs() < 1e-4);
        assert_eq!(terms[7], 0.0);
    }

    #[test]
    fn hand_evaluated_terms() {
        // d = 2, T = 1e6, all other constants 1
        let t: [f64; 8] = single_agent_terms(&BoundParams::default()).unwrap();
        let hand = [
            8.0 * 6f64.sqrt() / 1e3,
            16.0 / (1e9 * 5f64.powf(1.5)),
            2.0 * 8f64.powf(1.5) / (6f64.powf(2.5) * 1e9),
            8.0 * 6f64.sqrt() / 1e3,
            125.0 / (16.0 * 1e6),
            32.0 / 1e6,
            8.0 * 512.0 / (216.0 * 1e12),
            0.0,
        ];
        for (a, b) in t.iter().zip(hand) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn bounds_decrease_in_horizon() {
        let mut prev1 = f64::INFINITY;
        let mut prev2 = f64::INFINITY;
        for k in 2..=8 {
            let p = BoundParams {
                t: 10f64.powi(k),
                ..BoundParams::default()
            };
            let b1 = single_agent_bound(&p).unwrap();
            let b2 = federated_bound(&p).unwrap();
            assert!(b1 < prev1 && b2 < prev2);
            prev1 = b1;
            prev2 = b2;
        }
    }

    #[test]
    fn only_delta_terms_move_with_delta() {
        let a = single_agent_terms(&BoundParams::default()).unwrap();
        let b = single_agent_terms(&BoundParams {
            delta: 0.1,
            ..BoundParams::default()
        })
        .unwrap();
        for k in 0..8 {
            if k == 5 || k == 6 {
                assert!((b[k] / a[k] - 100.0).abs() < 1e-9);
            } else {
                assert_eq!(a[k], b[k]);
            }
        }
    }

    #[test]
    fn invalid_constants_rejected() {
        for bad in [
            BoundParams { sigma: 0.0, ..BoundParams::default() },
            BoundParams { delta: 0.0, ..BoundParams::default() },
            BoundParams { delta: 1.5, ..BoundParams::default() },
            BoundParams { l: -1.0, ..BoundParams::default() },
        ] {
            assert!(matches!(single_agent_bound(&bad), Err(Error::Config(_))));
        }
        assert!(federated_bound(&BoundParams { q: 0.0, ..BoundParams::default() }).is_err());
    }

    #[test]
    fn schedules() {
        let p = BoundParams {
            d: 10.0,
            t: 1e4,
            ..BoundParams::default()
        };
        let (eta, mu) = single_agent_schedule(&p).unwrap();
        assert!((eta - 1.0 / (14.0 * 1e4f64).sqrt()).abs() < 1e-15);
        assert!((mu - 1.0 / (14.0 * 100.0)).abs() < 1e-15);
        let (eta2, _) = federated_schedule(&BoundParams { q: 4.0, ..p }).unwrap();
        assert!((eta2 - eta / 2.0).abs() < 1e-15);
    }
}
