//! Analytic cost models for point-to-point exchanges, reductions and local
//! work. All times are in seconds; sizes are in bytes unless noted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::{CommStats, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Network latency per message.
    pub alpha: f64,
    /// On-node latency per message.
    pub alpha_local: f64,
    /// Per-node injection bandwidth.
    pub rate_injection: f64,
    /// Per-process network bandwidth.
    pub rate_process: f64,
    /// On-node bandwidth.
    pub rate_local: f64,
    /// Seconds per flop.
    pub gamma: f64,
    /// Bytes per float.
    pub f: usize,
    pub ppn: usize,
}

/// Placeholder values; nothing in the crate depends on them beyond positivity.
impl Default for MachineParams {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            alpha_local: 3e-7,
            rate_injection: 2e9,
            rate_process: 1e9,
            rate_local: 5e9,
            gamma: 1e-10,
            f: 8,
            ppn: 16,
        }
    }
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("alpha", self.alpha),
            ("alpha_local", self.alpha_local),
            ("rate_injection", self.rate_injection),
            ("rate_process", self.rate_process),
            ("rate_local", self.rate_local),
            ("gamma", self.gamma),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.alpha < self.alpha_local {
            return Err(Error::InvalidArgument(format!(
                "alpha ({:e}) must not be below alpha_local ({:e})",
                self.alpha, self.alpha_local
            )));
        }
        if self.f == 0 || self.ppn == 0 {
            return Err(Error::InvalidArgument("f and ppn must be positive".into()));
        }
        Ok(())
    }

    pub fn with_ppn(self, ppn: usize) -> Self {
        Self { ppn, ..self }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let real = || value.parse::<f64>().map_err(|_| format!("invalid number '{value}'"));
        let int = || value.parse::<usize>().map_err(|_| format!("invalid integer '{value}'"));
        match key {
            "alpha" => self.alpha = real()?,
            "alpha_local" => self.alpha_local = real()?,
            "rate_injection" => self.rate_injection = real()?,
            "rate_process" => self.rate_process = real()?,
            "rate_local" => self.rate_local = real()?,
            "gamma" => self.gamma = real()?,
            "f" => self.f = int()?,
            "ppn" => self.ppn = int()?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

impl fmt::Display for MachineParams {
    /// The `key = value` format accepted by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha = {:e}", self.alpha)?;
        writeln!(f, "alpha_local = {:e}", self.alpha_local)?;
        writeln!(f, "rate_injection = {:e}", self.rate_injection)?;
        writeln!(f, "rate_process = {:e}", self.rate_process)?;
        writeln!(f, "rate_local = {:e}", self.rate_local)?;
        writeln!(f, "gamma = {:e}", self.gamma)?;
        writeln!(f, "f = {}", self.f)?;
        writeln!(f, "ppn = {}", self.ppn)
    }
}

impl FromStr for MachineParams {
    type Err = Error;

    /// Flat `key = value` lines over the defaults; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self> {
        let mut params = MachineParams::default();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected 'key = value'".into(),
            })?;
            params
                .set(key.trim(), value.trim())
                .map_err(|message| Error::Parse {
                    line: i + 1,
                    message,
                })?;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Network,
    OnNode,
}

/// `alpha m + s / R_b`, or the on-node analogue.
pub fn postal_time(m: f64, s: f64, params: &MachineParams, link: Link) -> f64 {
    match link {
        Link::Network => params.alpha * m + s / params.rate_process,
        Link::OnNode => params.alpha_local * m + s / params.rate_local,
    }
}

/// `alpha m + max(ppn s / R_N, s / R_b)`.
pub fn maxrate_time(m: f64, s: f64, params: &MachineParams) -> f64 {
    let ppn = params.ppn as f64;
    params.alpha * m + (ppn * s / params.rate_injection).max(s / params.rate_process)
}

/// Direct exchange of a width-`t` block under the max-rate model.
pub fn model_standard(stats: &CommStats, t: usize, params: &MachineParams) -> f64 {
    let u = stats.unit_width();
    maxrate_time(u.m as f64, (t * u.s) as f64, params)
}

/// Per-node payloads straight to the paired remote rank, then on-node redistribution.
pub fn model_2step(stats: &CommStats, t: usize, params: &MachineParams) -> f64 {
    let u = stats.unit_width();
    let t = t as f64;
    let ppn = params.ppn as f64;
    params.alpha * u.m_proc_to_node as f64
        + (t * u.s_node as f64 / params.rate_injection).max(t * u.s_proc as f64 / params.rate_process)
        + params.alpha_local * (ppn - 1.0)
        + t * u.s_proc as f64 / params.rate_local
}

/// On-node gather, one message per node pair, on-node redistribution.
pub fn model_3step(stats: &CommStats, t: usize, params: &MachineParams) -> f64 {
    let u = stats.unit_width();
    let t = t as f64;
    let ppn = params.ppn as f64;
    params.alpha * u.m_node_to_node as f64 / ppn
        + (t * u.s_node as f64 / params.rate_injection).max(t * u.s_proc as f64 / params.rate_process)
        + 2.0 * (params.alpha_local * (ppn - 1.0) + t * u.s_node_to_node as f64 / params.rate_local)
}

/// Modeled exchange time of `scheme` for the plan statistics `stats`.
///
/// Plans without off-node traffic are all charged the on-node postal cost,
/// so every scheme ties on them.
pub fn scheme_time(scheme: Scheme, stats: &CommStats, t: usize, params: &MachineParams) -> f64 {
    let u = stats.unit_width();
    if u.total_internode_bytes == 0 {
        return postal_time(u.m as f64, (t * u.s) as f64, params, Link::OnNode);
    }
    match scheme {
        Scheme::Standard => model_standard(stats, t, params),
        Scheme::TwoStep => model_2step(stats, t, params),
        Scheme::ThreeStep | Scheme::NodalOptimal => model_3step(stats, t, params),
    }
}

/// Both reductions of one iteration: `2 alpha ceil(log2 p) + f 4 t^2 / R_b`.
pub fn collective_time(p: usize, t: usize, params: &MachineParams) -> f64 {
    let rounds = if p <= 1 { 0 } else { usize::BITS - (p - 1).leading_zeros() };
    let t = t as f64;
    2.0 * params.alpha * rounds as f64 + params.f as f64 * 4.0 * t * t / params.rate_process
}

/// Flops per rank per iteration:
/// `(2 + 2t) nnz/p + (4t + 4t^2) n/p + t^2/2 + t^3/6`.
pub fn computation_flops(nnz_per_rank: f64, n_per_rank: f64, t: usize) -> f64 {
    let t = t as f64;
    (2.0 + 2.0 * t) * nnz_per_rank
        + (4.0 * t + 4.0 * t * t) * n_per_rank
        + t * t / 2.0
        + t * t * t / 6.0
}

pub fn computation_time(nnz_per_rank: f64, n_per_rank: f64, t: usize, params: &MachineParams) -> f64 {
    params.gamma * computation_flops(nnz_per_rank, n_per_rank, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    Postal,
    MaxRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    PointToPoint,
    Collective,
    Computation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub point_to_point: f64,
    pub collective: f64,
    pub computation: f64,
    pub total: f64,
    pub dominant: Component,
}

/// Inputs for one modeled ECG iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationShape {
    pub n: usize,
    pub nnz: usize,
    pub p: usize,
    pub t: usize,
}

/// Modeled time of one ECG iteration with the standard exchange described by
/// `stats`. `Postal` leaves computation out; `MaxRate` includes it.
pub fn ecg_iteration_model(
    stats: &CommStats,
    shape: IterationShape,
    params: &MachineParams,
    variant: ModelVariant,
) -> ModelPrediction {
    let u = stats.unit_width();
    let (m, s) = (u.m as f64, (shape.t * u.s) as f64);
    let collective = collective_time(shape.p, shape.t, params);
    let (point_to_point, computation) = match variant {
        ModelVariant::Postal => (postal_time(m, s, params, Link::Network), 0.0),
        ModelVariant::MaxRate => {
            let p = shape.p.max(1) as f64;
            (
                maxrate_time(m, s, params),
                computation_time(shape.nnz as f64 / p, shape.n as f64 / p, shape.t, params),
            )
        }
    };
    let mut dominant = Component::PointToPoint;
    let mut best = point_to_point;
    for (c, v) in [
        (Component::Collective, collective),
        (Component::Computation, computation),
    ] {
        if v > best {
            best = v;
            dominant = c;
        }
    }
    ModelPrediction {
        point_to_point,
        collective,
        computation,
        total: point_to_point + collective + computation,
        dominant,
    }
}
