//! Compression operators applied to transmitted gradient estimates.
//!
//! All operators map `R^d -> R^d`. Randomized operators draw from the caller's
//! [`RngStream`], so a call is a pure function of `(spec, x, stream state)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;

/// How many components a sparsifier keeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Keep {
    Count(usize),
    /// Fraction of the input dimension, resolved as `ceil(f * d)`.
    Fraction(f64),
}

impl Keep {
    pub fn resolve(self, dim: usize) -> Result<usize> {
        match self {
            Keep::Count(k) if k <= dim => Ok(k),
            Keep::Count(k) => Err(Error::Config(format!(
                "k = {k} exceeds input dimension {dim}"
            ))),
            Keep::Fraction(f) if (0.0..=1.0).contains(&f) => {
                // guard against 0.3 * 10 = 3.0000000000000004
                let raw = f * dim as f64;
                let k = (raw - 1e-9).ceil().max(0.0) as usize;
                Ok(k.min(dim))
            }
            Keep::Fraction(f) => Err(Error::Config(format!(
                "keep fraction {f} outside [0, 1]"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CompressorSpec {
    Identity,
    TopK(Keep),
    RandK(Keep),
    /// Keeps each component independently with probability `p`.
    DropoutBiased { p: f64 },
    /// Keeps each component with probability `p` and rescales it by `1/p`.
    DropoutUnbiased { p: f64 },
    Qsgd { bits: u32 },
}

impl CompressorSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            CompressorSpec::Identity => Ok(()),
            CompressorSpec::TopK(keep) | CompressorSpec::RandK(keep) => keep.resolve(dim).map(|_| ()),
            CompressorSpec::DropoutBiased { p } => check_probability(p),
            CompressorSpec::DropoutUnbiased { p } => {
                check_probability(p)?;
                if p == 0.0 {
                    return Err(Error::Config(
                        "dropout-u requires p > 0 (rescaling by 1/p)".into(),
                    ));
                }
                Ok(())
            }
            CompressorSpec::Qsgd { bits } if (1..=30).contains(&bits) => Ok(()),
            CompressorSpec::Qsgd { bits } => Err(Error::Config(format!(
                "qsgd bits must be in 1..=30, got {bits}"
            ))),
        }
    }

    /// Applies the operator. Deterministic given the stream state; the
    /// deterministic operators (identity, top-k) never touch `rng`.
    pub fn compress(&self, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        self.validate(x.len())?;
        linalg::ensure_finite(x, "compressor input")?;
        let out = match *self {
            CompressorSpec::Identity => x.to_vec(),
            CompressorSpec::TopK(keep) => top_k(x, keep.resolve(x.len())?),
            CompressorSpec::RandK(keep) => rand_k(x, keep.resolve(x.len())?, rng),
            CompressorSpec::DropoutBiased { p } => dropout(x, p, 1.0, rng),
            CompressorSpec::DropoutUnbiased { p } => dropout(x, p, 1.0 / p, rng),
            CompressorSpec::Qsgd { bits } => qsgd(x, bits, rng),
        };
        Ok(out)
    }

    /// Closed-form contraction constant `delta` with
    /// `E||C(x) - x||^2 <= (1 - delta) ||x||^2`, where one is known.
    pub fn analytic_delta(&self, dim: usize) -> Option<f64> {
        match *self {
            CompressorSpec::Identity => Some(1.0),
            CompressorSpec::TopK(keep) | CompressorSpec::RandK(keep) => keep
                .resolve(dim)
                .ok()
                .map(|k| k as f64 / dim as f64),
            CompressorSpec::DropoutBiased { p } => Some(p),
            CompressorSpec::DropoutUnbiased { .. } | CompressorSpec::Qsgd { .. } => None,
        }
    }

    /// Bytes a client would send for `compressed` (accounting proxy only).
    pub fn transmitted_bytes(&self, compressed: &[f64]) -> usize {
        match *self {
            CompressorSpec::Identity => compressed.len() * 8,
            CompressorSpec::Qsgd { bits } => (compressed.len() * bits as usize).div_ceil(8) + 8,
            _ => compressed.iter().filter(|v| **v != 0.0).count() * 8,
        }
    }

    /// True for operators whose output components are either `x_i` or 0.
    pub fn is_selection(&self) -> bool {
        matches!(
            self,
            CompressorSpec::Identity
                | CompressorSpec::TopK(_)
                | CompressorSpec::RandK(_)
                | CompressorSpec::DropoutBiased { .. }
        )
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("probability {p} outside [0, 1]")))
    }
}

/// Keeps the `k` largest-magnitude components; equal magnitudes resolve to
/// the lower index.
fn top_k(x: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; x.len()];
    for &i in &order[..k] {
        out[i] = x[i];
    }
    out
}

fn rand_k(x: &[f64], k: usize, rng: &mut RngStream) -> Vec<f64> {
    let d = x.len();
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = i + rng.below(d - i);
        idx.swap(i, j);
    }
    let mut out = vec![0.0; d];
    for &i in &idx[..k] {
        out[i] = x[i];
    }
    out
}

fn dropout(x: &[f64], p: f64, gain: f64, rng: &mut RngStream) -> Vec<f64> {
    x.iter()
        .map(|&v| if rng.uniform() < p { gain * v } else { 0.0 })
        .collect()
}

/// Stochastic rounding levels `floor(2^b |x_i| / ||x|| + u_i)`, before the
/// sign and `||x|| / (2^b w)` scaling. All zeros for the zero vector.
pub fn qsgd_levels(x: &[f64], bits: u32, rng: &mut RngStream) -> Vec<f64> {
    let norm = linalg::norm(x);
    let s = 2f64.powi(bits as i32);
    x.iter()
        .map(|&v| {
            let u = rng.uniform();
            if norm == 0.0 {
                0.0
            } else {
                (s * v.abs() / norm + u).floor()
            }
        })
        .collect()
}

/// The `w` normaliser `1 + min(sqrt(d) / 2^b, d / 2^(2b))`.
pub fn qsgd_w(dim: usize, bits: u32) -> f64 {
    let s = 2f64.powi(bits as i32);
    let d = dim as f64;
    1.0 + (d.sqrt() / s).min(d / (s * s))
}

fn qsgd(x: &[f64], bits: u32, rng: &mut RngStream) -> Vec<f64> {
    let norm = linalg::norm(x);
    let levels = qsgd_levels(x, bits, rng);
    if norm == 0.0 {
        return vec![0.0; x.len()];
    }
    let unit = norm / (2f64.powi(bits as i32) * qsgd_w(x.len(), bits));
    x.iter()
        .zip(levels)
        .map(|(&v, level)| v.signum() * unit * level)
        .collect()
}

/// Monte-Carlo estimate of the contraction constant.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionEstimate {
    /// `1 - max_x mean(||C(x) - x||^2) / ||x||^2` over the probed directions.
    pub delta_hat: f64,
    /// Standard error of the mean ratio at the worst direction.
    pub std_error: f64,
    pub trials: usize,
    pub directions: usize,
    pub dim: usize,
    /// `delta_hat` exceeds three standard errors.
    pub contractive: bool,
}

/// Probes axis directions, random sign vectors and at least 20 Gaussian
/// directions, `trials` compressions each, and reports the worst mean ratio.
pub fn estimate_contraction(
    spec: &CompressorSpec,
    dim: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<ContractionEstimate> {
    if dim == 0 || trials == 0 {
        return Err(Error::Config("contraction estimate needs dim >= 1 and trials >= 1".into()));
    }
    spec.validate(dim)?;

    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        directions.push(e);
    }
    directions.push(vec![1.0; dim]);
    for _ in 0..4 {
        directions.push((0..dim).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect());
    }
    for _ in 0..20 {
        directions.push(rng.normal_vec(dim));
    }

    let mut worst = f64::NEG_INFINITY;
    let mut worst_se = 0.0;
    for x in &directions {
        let x_sq = linalg::norm_sq(x);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let c = spec.compress(x, rng)?;
            let ratio = linalg::dist_sq(&c, x) / x_sq;
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = if trials > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        if mean > worst {
            worst = mean;
            worst_se = (var / n).sqrt();
        }
    }
    let delta_hat = 1.0 - worst;
    Ok(ContractionEstimate {
        delta_hat,
        std_error: worst_se,
        trials,
        directions: directions.len(),
        dim,
        contractive: delta_hat > 3.0 * worst_se,
    })
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn keep(k: &Keep) -> String {
            match k {
                Keep::Count(c) => c.to_string(),
                Keep::Fraction(x) => format!("{x:?}"),
            }
        }
        match self {
            CompressorSpec::Identity => write!(f, "none"),
            CompressorSpec::TopK(k) => write!(f, "topk:{}", keep(k)),
            CompressorSpec::RandK(k) => write!(f, "randk:{}", keep(k)),
            CompressorSpec::DropoutBiased { p } => write!(f, "dropout-b:{p:?}"),
            CompressorSpec::DropoutUnbiased { p } => write!(f, "dropout-u:{p:?}"),
            CompressorSpec::Qsgd { bits } => write!(f, "qsgd:{bits}"),
        }
    }
}

impl FromStr for CompressorSpec {
    type Err = Error;

    /// Parses `none`, `topk:<k>`, `randk:<k>`, `dropout-b:<p>`,
    /// `dropout-u:<p>`, `qsgd:<bits>`. A `<k>` containing `.` is a fraction
    /// of the input dimension, otherwise a component count.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| {
            Error::Config(format!(
                "invalid compressor '{s}': {why} (expected none, topk:<k>, randk:<k>, dropout-b:<p>, dropout-u:<p>, qsgd:<bits>)"
            ))
        };
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let parse_keep = |a: Option<&str>| -> Result<Keep> {
            let a = a.ok_or_else(|| bad("missing k"))?;
            if a.contains('.') || a.contains('e') {
                let f: f64 = a.parse().map_err(|_| bad("k is not a number"))?;
                Ok(Keep::Fraction(f))
            } else {
                a.parse().map(Keep::Count).map_err(|_| bad("k is not an integer"))
            }
        };
        let parse_p = |a: Option<&str>| -> Result<f64> {
            let p: f64 = a
                .ok_or_else(|| bad("missing p"))?
                .parse()
                .map_err(|_| bad("p is not a number"))?;
            check_probability(p)?;
            Ok(p)
        };
        let spec = match kind {
            "none" | "identity" => {
                if arg.is_some() {
                    return Err(bad("'none' takes no parameter"));
                }
                CompressorSpec::Identity
            }
            "topk" => CompressorSpec::TopK(parse_keep(arg)?),
            "randk" => CompressorSpec::RandK(parse_keep(arg)?),
            "dropout-b" => CompressorSpec::DropoutBiased { p: parse_p(arg)? },
            "dropout-u" => CompressorSpec::DropoutUnbiased { p: parse_p(arg)? },
            "qsgd" => {
                let bits: u32 = arg
                    .ok_or_else(|| bad("missing bits"))?
                    .parse()
                    .map_err(|_| bad("bits is not an integer"))?;
                CompressorSpec::Qsgd { bits }
            }
            _ => return Err(bad("unknown kind")),
        };
        if let CompressorSpec::TopK(Keep::Fraction(f)) | CompressorSpec::RandK(Keep::Fraction(f)) = spec {
            if !(0.0..=1.0).contains(&f) {
                return Err(bad("fraction outside [0, 1]"));
            }
        }
        if let CompressorSpec::Qsgd { bits } = spec {
            if !(1..=30).contains(&bits) {
                return Err(bad("bits must be in 1..=30"));
            }
        }
        Ok(spec)
    }
}

impl TryFrom<String> for CompressorSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CompressorSpec> for String {
    fn from(c: CompressorSpec) -> String {
        c.to_string()
    }
}
