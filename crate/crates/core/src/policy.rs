//! Operational policy limits: SNSP ceiling, RoCoF limit, inertia floor and
//! minimum number of large units online.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Region, SystemMetrics};
use crate::screener::{CaseResult, CaseStatus};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid policy limits: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuonMode {
    #[default]
    SystemWide,
    PerRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLimits {
    #[serde(default)]
    pub profile: String,
    pub snsp_max_pct: f64,
    pub rocof_limit_hz_s: f64,
    pub inertia_floor_mws: f64,
    pub muon_min: u32,
    #[serde(default)]
    pub muon_mode: MuonMode,
    /// Required when `muon_mode = per_region`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub muon_min_by_region: BTreeMap<Region, u32>,
}

impl Default for PolicyLimits {
    fn default() -> Self {
        builtin_profile("2023").expect("built-in profile")
    }
}

impl PolicyLimits {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let positive = [
            ("snsp_max_pct", self.snsp_max_pct),
            ("rocof_limit_hz_s", self.rocof_limit_hz_s),
            ("inertia_floor_mws", self.inertia_floor_mws),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(PolicyError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.muon_min == 0 {
            return Err(PolicyError::Invalid("muon_min must be positive".into()));
        }
        if self.muon_mode == MuonMode::PerRegion && self.muon_min_by_region.is_empty() {
            return Err(PolicyError::Invalid(
                "muon_mode = per_region needs muon_min_by_region".into(),
            ));
        }
        Ok(())
    }
}

fn limits(profile: &str, snsp: f64, inertia: f64, muon: u32) -> PolicyLimits {
    PolicyLimits {
        profile: profile.into(),
        snsp_max_pct: snsp,
        rocof_limit_hz_s: 1.0,
        inertia_floor_mws: inertia,
        muon_min: muon,
        muon_mode: MuonMode::SystemWide,
        muon_min_by_region: BTreeMap::new(),
    }
}

/// Built-in profiles `2023` and `2030`.
pub fn builtin_profile(name: &str) -> Result<PolicyLimits, PolicyError> {
    match name.trim() {
        "2023" => Ok(limits("2023", 75.0, 23_000.0, 7)),
        "2030" => Ok(limits("2030", 95.0, 20_000.0, 3)),
        other => Err(PolicyError::UnknownProfile(other.into())),
    }
}

/// Look `name` up in `custom` first, then among the built-ins.
pub fn load_profile(name: &str, custom: &BTreeMap<String, PolicyLimits>) -> Result<PolicyLimits, PolicyError> {
    if let Some(p) = custom.get(name.trim()) {
        let mut p = p.clone();
        if p.profile.is_empty() {
            p.profile = name.trim().into();
        }
        p.validate()?;
        return Ok(p);
    }
    builtin_profile(name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    Compliant,
    NonCompliant,
    NotEvaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: String,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub compliant: Option<bool>,
    pub status: ConstraintStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConstraintCheck {
    fn evaluated(name: &str, value: f64, limit: f64, ok: bool) -> Self {
        Self {
            constraint: name.into(),
            value: Some(value),
            limit: Some(limit),
            compliant: Some(ok),
            status: if ok {
                ConstraintStatus::Compliant
            } else {
                ConstraintStatus::NonCompliant
            },
            note: None,
        }
    }

    fn not_evaluated(name: &str, limit: Option<f64>, note: &str) -> Self {
        Self {
            constraint: name.into(),
            value: None,
            limit,
            compliant: None,
            status: ConstraintStatus::NotEvaluated,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub profile: String,
    pub constraints: Vec<ConstraintCheck>,
    /// True when every evaluated constraint is compliant.
    pub compliant: bool,
}

impl PolicyReport {
    pub fn get(&self, constraint: &str) -> Option<&ConstraintCheck> {
        self.constraints.iter().find(|c| c.constraint == constraint)
    }
}

/// Checks `metrics` against `limits`. RoCoF compliance is taken from the
/// screened `cases` when supplied.
pub fn check(metrics: &SystemMetrics, limits: &PolicyLimits, cases: Option<&[CaseResult]>) -> PolicyReport {
    let mut out = vec![ConstraintCheck::evaluated(
        "SNSP",
        metrics.snsp_pct,
        limits.snsp_max_pct,
        metrics.snsp_pct <= limits.snsp_max_pct,
    )];

    out.push(match cases {
        Some(cases) => {
            let worst = cases
                .iter()
                .filter(|c| c.status != CaseStatus::Failed)
                .filter_map(|c| c.metrics.as_ref())
                .map(|m| m.rocof_max.abs().max(m.rocof_min.abs()))
                .fold(0.0, f64::max);
            ConstraintCheck::evaluated("RoCoF", worst, limits.rocof_limit_hz_s, worst <= limits.rocof_limit_hz_s)
        }
        None => ConstraintCheck::not_evaluated(
            "RoCoF",
            Some(limits.rocof_limit_hz_s),
            "needs contingency results",
        ),
    });

    out.push(ConstraintCheck::evaluated(
        "Inertia",
        metrics.inertia_mws,
        limits.inertia_floor_mws,
        metrics.inertia_mws >= limits.inertia_floor_mws,
    ));

    match limits.muon_mode {
        MuonMode::SystemWide => out.push(ConstraintCheck::evaluated(
            "MUON",
            metrics.muon_count as f64,
            limits.muon_min as f64,
            metrics.muon_count >= limits.muon_min,
        )),
        MuonMode::PerRegion => {
            for (region, &min) in &limits.muon_min_by_region {
                let n = metrics.muon_by_region.get(region).copied().unwrap_or(0);
                out.push(ConstraintCheck::evaluated(
                    &format!("MUON_{region:?}"),
                    n as f64,
                    min as f64,
                    n >= min,
                ));
            }
        }
    }

    out.push(ConstraintCheck::not_evaluated("SystemStrength", None, "under development"));

    let compliant = out.iter().all(|c| c.compliant != Some(false));
    PolicyReport {
        profile: limits.profile.clone(),
        constraints: out,
        compliant,
    }
}
