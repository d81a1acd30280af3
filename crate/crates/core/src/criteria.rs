//! Frequency and rotor-angle security metrics and case classification.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsim::{DynamicResponse, NetworkModel};

#[derive(Debug, Error, PartialEq)]
pub enum CriteriaError {
    #[error("trace of {duration} s is too short for a {window} s window")]
    TraceTooShort { duration: f64, window: f64 },
    #[error("trace is not uniformly sampled")]
    NonUniform,
    #[error("trace is empty after the event")]
    EmptyTrace,
    #[error("angle margin needs two machines in one island")]
    SingleMachine,
    #[error("angle margin needs the dc_network model, got {0:?}")]
    NetworkModel(NetworkModel),
    #[error("invalid security limits: {0}")]
    Limits(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityLimits {
    /// Hz/s, applied symmetrically.
    pub rocof_limit: f64,
    pub nadir_limit: f64,
    pub zenith_limit: f64,
    pub rocof_window: f64,
    pub blanking: f64,
    /// Degrees.
    pub angle_threshold: f64,
}

impl Default for SecurityLimits {
    fn default() -> Self {
        Self {
            rocof_limit: 0.9,
            nadir_limit: 49.0,
            zenith_limit: 50.8,
            rocof_window: 0.5,
            blanking: 0.1,
            angle_threshold: 180.0,
        }
    }
}

impl SecurityLimits {
    pub fn validate(&self, nominal_hz: f64) -> Result<(), CriteriaError> {
        let bad = |m: String| Err(CriteriaError::Limits(m));
        if !(self.rocof_limit > 0.0) {
            return bad(format!("rocof_limit must be positive, got {}", self.rocof_limit));
        }
        if !(self.nadir_limit < nominal_hz && nominal_hz < self.zenith_limit) {
            return bad(format!(
                "need nadir_limit < {nominal_hz} < zenith_limit, got {} and {}",
                self.nadir_limit, self.zenith_limit
            ));
        }
        if !(self.rocof_window > 0.0) {
            return bad(format!("rocof_window must be positive, got {}", self.rocof_window));
        }
        if !(self.blanking >= 0.0) {
            return bad(format!("blanking must be non-negative, got {}", self.blanking));
        }
        if !(self.angle_threshold > 0.0) {
            return bad(format!("angle_threshold must be positive, got {}", self.angle_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Binding {
    #[serde(rename = "RoCoF+")]
    RocofPlus,
    #[serde(rename = "RoCoF-")]
    RocofMinus,
    Nadir,
    Zenith,
    RotorAngle,
    Voltage,
}

impl Binding {
    pub const ALL: [Binding; 6] = [
        Binding::RocofPlus,
        Binding::RocofMinus,
        Binding::Nadir,
        Binding::Zenith,
        Binding::RotorAngle,
        Binding::Voltage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Binding::RocofPlus => "RoCoF+",
            Binding::RocofMinus => "RoCoF-",
            Binding::Nadir => "Nadir",
            Binding::Zenith => "Zenith",
            Binding::RotorAngle => "RotorAngle",
            Binding::Voltage => "Voltage",
        }
    }

    /// Accepts labels (`RoCoF+`) and snake-case names (`rocof_plus`).
    pub fn parse(s: &str) -> Option<Binding> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        Some(match norm.as_str() {
            "rocof+" | "rocof_plus" => Binding::RocofPlus,
            "rocof_" | "rocof_minus" => Binding::RocofMinus,
            "nadir" => Binding::Nadir,
            "zenith" => Binding::Zenith,
            "rotorangle" | "rotor_angle" => Binding::RotorAngle,
            "voltage" => Binding::Voltage,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Binding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Component metrics before classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricInputs {
    pub rocof_max: f64,
    pub rocof_min: f64,
    pub nadir: f64,
    pub zenith: f64,
    /// `None` when not applicable (single machine per island).
    pub angle_margin: Option<f64>,
    pub voltage_secure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityMetrics {
    pub rocof_max: f64,
    pub rocof_min: f64,
    pub nadir: f64,
    pub zenith: f64,
    pub angle_margin: Option<f64>,
    pub voltage_secure: bool,
    pub binding: BTreeSet<Binding>,
}

impl SecurityMetrics {
    pub fn insecure(&self) -> bool {
        !self.binding.is_empty()
    }
}

fn sample_step(time: &[f64]) -> Result<f64, CriteriaError> {
    if time.len() < 2 {
        return Err(CriteriaError::TraceTooShort {
            duration: 0.0,
            window: 0.0,
        });
    }
    let dt = time[1] - time[0];
    let span = time[time.len() - 1] - time[0];
    let expected = dt * (time.len() - 1) as f64;
    if !(dt > 0.0) || (span - expected).abs() > 1e-6 * span.max(dt) {
        return Err(CriteriaError::NonUniform);
    }
    Ok(dt)
}

/// Most positive and most negative windowed slope `(f(t) − f(t − w)) / w`.
///
/// Post-event samples before `event_time + blanking` never serve as a window
/// endpoint. The sample at `event_time` itself is the pre-switch state
/// (frequency is continuous through the event) and stays eligible.
pub fn rocof(
    time: &[f64],
    freq: &[f64],
    window: f64,
    blanking: f64,
    event_time: f64,
) -> Result<(f64, f64), CriteriaError> {
    assert_eq!(time.len(), freq.len(), "time and frequency lengths differ");
    let duration = time.last().zip(time.first()).map_or(0.0, |(b, a)| b - a);
    if !(duration > window) {
        return Err(CriteriaError::TraceTooShort { duration, window });
    }
    let dt = sample_step(time)?;
    let w = (window / dt).round().max(1.0) as usize;
    let t0 = time[0];
    let ev = ((event_time - t0) / dt).round() as isize;
    let blank_end = ev + (blanking / dt).round() as isize;
    let blanked = |k: usize| (k as isize) > ev && (k as isize) < blank_end;

    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in w..time.len() {
        if (k as isize) < blank_end || blanked(k) || blanked(k - w) {
            continue;
        }
        let s = (freq[k] - freq[k - w]) / (time[k] - time[k - w]);
        hi = hi.max(s);
        lo = lo.min(s);
    }
    if hi == f64::NEG_INFINITY {
        return Err(CriteriaError::TraceTooShort { duration, window });
    }
    Ok((hi, lo))
}

/// Minimum and maximum of the trace at or after `event_time`.
pub fn nadir_zenith(time: &[f64], freq: &[f64], event_time: f64) -> Result<(f64, f64), CriteriaError> {
    let mut out: Option<(f64, f64)> = None;
    for (&t, &f) in time.iter().zip(freq) {
        if t + 1e-12 < event_time {
            continue;
        }
        out = Some(match out {
            None => (f, f),
            Some((lo, hi)) => (lo.min(f), hi.max(f)),
        });
    }
    out.ok_or(CriteriaError::EmptyTrace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleMargin {
    /// Largest pairwise separation within an island after the event, degrees.
    pub delta_max_deg: f64,
    pub margin: f64,
}

pub fn margin_from_separation(threshold_deg: f64, delta_max_deg: f64) -> f64 {
    (threshold_deg - delta_max_deg) / (threshold_deg + delta_max_deg)
}

/// Rotor-angle margin `(θ − Δmax) / (θ + Δmax)` over machine pairs that end
/// the simulation in the same island.
pub fn angle_margin(resp: &DynamicResponse, threshold_deg: f64) -> Result<AngleMargin, CriteriaError> {
    if resp.network_model != NetworkModel::DcNetwork {
        return Err(CriteriaError::NetworkModel(resp.network_model));
    }
    let mut delta_max: Option<f64> = None;
    for island in resp.islands.iter().filter(|i| i.machines.len() >= 2) {
        for k in 0..resp.time.len() {
            if resp.time[k] <= resp.event_time {
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &island.machines {
                if resp.is_online(i, k) {
                    lo = lo.min(resp.delta[i][k]);
                    hi = hi.max(resp.delta[i][k]);
                }
            }
            if hi >= lo {
                let d = (hi - lo).to_degrees();
                delta_max = Some(delta_max.map_or(d, |m: f64| m.max(d)));
            }
        }
    }
    let delta_max_deg = delta_max.ok_or(CriteriaError::SingleMachine)?;
    Ok(AngleMargin {
        delta_max_deg,
        margin: margin_from_separation(threshold_deg, delta_max_deg),
    })
}

/// Strict-inequality classification: a value on its limit is secure.
pub fn classify(m: &MetricInputs, limits: &SecurityLimits) -> SecurityMetrics {
    let mut binding = BTreeSet::new();
    if m.rocof_max > limits.rocof_limit {
        binding.insert(Binding::RocofPlus);
    }
    if m.rocof_min < -limits.rocof_limit {
        binding.insert(Binding::RocofMinus);
    }
    if m.nadir < limits.nadir_limit {
        binding.insert(Binding::Nadir);
    }
    if m.zenith > limits.zenith_limit {
        binding.insert(Binding::Zenith);
    }
    if m.angle_margin.is_some_and(|a| a < 0.0) {
        binding.insert(Binding::RotorAngle);
    }
    if !m.voltage_secure {
        binding.insert(Binding::Voltage);
    }
    SecurityMetrics {
        rocof_max: m.rocof_max,
        rocof_min: m.rocof_min,
        nadir: m.nadir,
        zenith: m.zenith,
        angle_margin: m.angle_margin,
        voltage_secure: m.voltage_secure,
        binding,
    }
}

/// Frequency metrics of one island's COI trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMetrics {
    pub rocof_max: f64,
    pub rocof_min: f64,
    pub nadir: f64,
    pub zenith: f64,
}

impl FrequencyMetrics {
    /// Worst value of each metric across both operands.
    pub fn worst(self, other: Self) -> Self {
        Self {
            rocof_max: self.rocof_max.max(other.rocof_max),
            rocof_min: self.rocof_min.min(other.rocof_min),
            nadir: self.nadir.min(other.nadir),
            zenith: self.zenith.max(other.zenith),
        }
    }
}

pub fn frequency_metrics(
    time: &[f64],
    freq: &[f64],
    event_time: f64,
    limits: &SecurityLimits,
) -> Result<FrequencyMetrics, CriteriaError> {
    let (rocof_max, rocof_min) = rocof(time, freq, limits.rocof_window, limits.blanking, event_time)?;
    let (nadir, zenith) = nadir_zenith(time, freq, event_time)?;
    Ok(FrequencyMetrics {
        rocof_max,
        rocof_min,
        nadir,
        zenith,
    })
}

/// Per-island evaluation; the worst island represents the response.
pub fn island_frequency_metrics(
    resp: &DynamicResponse,
    limits: &SecurityLimits,
) -> Result<FrequencyMetrics, CriteriaError> {
    let mut worst: Option<FrequencyMetrics> = None;
    for island in &resp.islands {
        let m = frequency_metrics(&resp.time, &island.f_coi, resp.event_time, limits)?;
        worst = Some(worst.map_or(m, |w| w.worst(m)));
    }
    match worst {
        Some(w) => Ok(w),
        None => frequency_metrics(&resp.time, &resp.f_coi, resp.event_time, limits),
    }
}
