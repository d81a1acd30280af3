//! Engine configuration and the per-snapshot assessment pipeline shared by
//! the service, the command line and the Python bindings.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{ArchiveError, CaseArchive};
use crate::criteria::SecurityLimits;
use crate::dynsim::{NetworkModel, SimConfig};
use crate::netmodel::{apply_modifications, system_metrics, Modification, NetError, Snapshot};
use crate::policy::{self, load_profile, PolicyError, PolicyLimits};
use crate::powerflow::{SolveOptions, VoltageCriteria};
use crate::screener::{
    build_contingency_set, screen, ContingencyRules, CycleReport, CycleStatus, Provenance, ScreenConfig, ScreenError,
    SeverityScales,
};

pub const LISTEN_ENV: &str = "GRIDSA_LISTEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Modification(NetError),
    #[error("base case insecure at {ts}: {reason}")]
    BasecaseInsecure { ts: i64, reason: String },
    #[error("no stored snapshot for cycle {0}")]
    BaseNotFound(i64),
    #[error(transparent)]
    Screen(ScreenError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub frequency: SimConfig,
    /// Angle-coupled run for the rotor-angle criterion.
    pub angle_enabled: bool,
    pub angle: SimConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            frequency: SimConfig::default(),
            angle_enabled: true,
            angle: SimConfig {
                t_end: 5.0,
                network_model: NetworkModel::DcNetwork,
                ..SimConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub profile: String,
    /// Extra named profiles; a name shadows a built-in one.
    pub profiles: BTreeMap<String, PolicyLimits>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            profile: "2023".into(),
            profiles: BTreeMap::new(),
        }
    }
}

/// Engine configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub cycle_period_s: f64,
    pub budget_s: f64,
    pub workers: usize,
    pub archive: PathBuf,
    pub inbox: PathBuf,
    /// Seconds between inbox scans.
    pub inbox_poll_s: f64,
    pub listen: String,
    /// Concurrent what-if evaluations the service admits.
    pub whatif_concurrency: usize,
    /// Directory for per-case frequency traces; none when unset.
    pub dump_traces: Option<PathBuf>,
    pub limits: SecurityLimits,
    pub policy: PolicyConfig,
    pub voltage: VoltageCriteria,
    pub contingencies: ContingencyRules,
    pub simulation: SimulationConfig,
    pub severity: SeverityScales,
    pub power_flow: SolveOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            cycle_period_s: 300.0,
            budget_s: 300.0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            archive: PathBuf::from("archive"),
            inbox: PathBuf::from("inbox"),
            inbox_poll_s: 1.0,
            listen: "127.0.0.1:8350".into(),
            whatif_concurrency: 2,
            dump_traces: None,
            limits: SecurityLimits::default(),
            policy: PolicyConfig::default(),
            voltage: VoltageCriteria::default(),
            contingencies: ContingencyRules::default(),
            simulation: SimulationConfig::default(),
            severity: SeverityScales::default(),
            power_flow: SolveOptions::default(),
        }
    }
}

impl EngineConfig {
    /// Parses TOML, rejecting unknown keys, and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut unknown = Vec::new();
        let cfg: EngineConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if let Some(key) = unknown.into_iter().next() {
            return Err(ConfigError::UnknownKey(key));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        for p in [&mut self.archive, &mut self.inbox] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(p) = self.dump_traces.as_mut().filter(|p| p.is_relative()) {
            *p = dir.join(&*p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.cycle_period_s > 0.0) {
            return invalid(format!("cycle_period_s must be positive, got {}", self.cycle_period_s));
        }
        if !(self.budget_s > 0.0 && self.budget_s <= self.cycle_period_s) {
            return invalid(format!(
                "budget_s must be in (0, cycle_period_s = {}], got {}",
                self.cycle_period_s, self.budget_s
            ));
        }
        if !(self.inbox_poll_s > 0.0) {
            return invalid(format!("inbox_poll_s must be positive, got {}", self.inbox_poll_s));
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.whatif_concurrency == 0 {
            return invalid("whatif_concurrency must be at least 1".into());
        }
        self.limits
            .validate(50.0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let policy = self.policy_limits()?;
        if self.limits.rocof_limit > policy.rocof_limit_hz_s {
            return invalid(format!(
                "limits.rocof_limit {} exceeds the policy RoCoF limit {}",
                self.limits.rocof_limit, policy.rocof_limit_hz_s
            ));
        }
        for (name, p) in &self.policy.profiles {
            p.validate().map_err(|e| ConfigError::Invalid(format!("profile {name}: {e}")))?;
        }
        let s = &self.severity;
        if [s.rocof, s.nadir, s.zenith, s.angle, s.voltage].iter().any(|v| !(*v > 0.0)) {
            return invalid("severity scales must be positive".into());
        }
        for sim in [&self.simulation.frequency, &self.simulation.angle] {
            sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.simulation.angle_enabled && self.simulation.angle.network_model != NetworkModel::DcNetwork {
            return invalid("simulation.angle.network_model must be dc_network".into());
        }
        self.listen_addr()?;
        Ok(())
    }

    pub fn policy_limits(&self) -> Result<PolicyLimits, ConfigError> {
        Ok(load_profile(&self.policy.profile, &self.policy.profiles)?)
    }

    /// Listen address, with the environment override applied.
    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        let raw = std::env::var(LISTEN_ENV).unwrap_or_else(|_| self.listen.clone());
        raw.parse()
            .map_err(|_| ConfigError::Invalid(format!("listen address {raw:?} is not host:port")))
    }

    pub fn screen_config(&self) -> ScreenConfig {
        ScreenConfig {
            frequency: self.simulation.frequency.clone(),
            angle: self.simulation.angle_enabled.then(|| self.simulation.angle.clone()),
            limits: self.limits.clone(),
            voltage: self.voltage.clone(),
            power_flow: self.power_flow,
            budget_s: self.budget_s,
            workers: self.workers,
            dump_traces: self.dump_traces.clone(),
        }
    }

    /// Applies a `key=value` override such as `limits.rocof_limit=0.8`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override {assignment:?} is not key=value")))?;
        let parsed: toml::Value = toml::from_str(&format!("v = {}", value.trim()))
            .map(|t: toml::Table| t["v"].clone())
            .unwrap_or_else(|_| toml::Value::String(value.trim().into()));
        let mut tree = toml::Value::try_from(&*self).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut node = &mut tree;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| ConfigError::UnknownKey(key.trim().into()))?;
            if i + 1 == parts.len() {
                if !table.contains_key(*part) && !is_optional_key(key.trim()) {
                    return Err(ConfigError::UnknownKey(key.trim().into()));
                }
                let value = match table.get(*part) {
                    Some(toml::Value::String(_)) => toml::Value::String(value.trim().trim_matches('"').into()),
                    _ => parsed.clone(),
                };
                table.insert((*part).into(), value);
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| ConfigError::UnknownKey(key.trim().into()))?;
        }
        let text = toml::to_string(&tree).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let updated = Self::from_toml(&text)?;
        *self = updated;
        Ok(())
    }
}

fn is_optional_key(key: &str) -> bool {
    key == "dump_traces"
}

/// Full assessment of `snap` without persisting. A base case that cannot be
/// screened yields a failed record rather than an error.
pub fn assess(snap: &Snapshot, cfg: &EngineConfig) -> Result<CycleReport, EngineError> {
    cfg.validate()?;
    snap.validate().map_err(|issues| {
        EngineError::Snapshot(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))
    })?;
    let limits = cfg.policy_limits()?;
    let metrics = system_metrics(snap).map_err(|e| EngineError::Snapshot(e.to_string()))?;
    let set = build_contingency_set(snap, &cfg.contingencies);
    match screen(snap, &set, &cfg.screen_config()) {
        Ok(mut report) => {
            report.policy = Some(policy::check(&metrics, &limits, Some(&report.cases)));
            Ok(report)
        }
        Err(ScreenError::BasecaseInsecure(reason)) => {
            let mut report = CycleReport::failed(snap.timestamp, Some(metrics.clone()), &cfg.limits, reason);
            report.budget_s = cfg.budget_s;
            report.policy = Some(policy::check(&metrics, &limits, None));
            Ok(report)
        }
        Err(e) => Err(EngineError::Screen(e)),
    }
}

/// Assesses `snap` and appends the report (and the snapshot) to `archive`
/// before returning. A failed base case is persisted, then reported as
/// [`EngineError::BasecaseInsecure`].
pub fn run_cycle(snap: &Snapshot, cfg: &EngineConfig, archive: &mut CaseArchive) -> Result<CycleReport, EngineError> {
    let report = assess(snap, cfg)?;
    archive.append(report.clone(), Some(snap))?;
    if report.status == CycleStatus::Failed {
        return Err(EngineError::BasecaseInsecure {
            ts: report.snapshot_ts,
            reason: report.failure.clone().unwrap_or_default(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhatIfBase {
    /// A snapshot stored with an archived cycle.
    Timestamp(i64),
    Snapshot(Box<Snapshot>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub base: WhatIfBase,
    #[serde(default)]
    pub modifications: Vec<Modification>,
    #[serde(default)]
    pub limits: Option<SecurityLimits>,
    #[serde(default)]
    pub policy_profile: Option<String>,
}

/// Assesses a modified copy of a base snapshot. Nothing is written to the
/// archive.
pub fn what_if(req: &WhatIfRequest, cfg: &EngineConfig, archive: &CaseArchive) -> Result<CycleReport, EngineError> {
    let base = match &req.base {
        WhatIfBase::Snapshot(s) => (**s).clone(),
        WhatIfBase::Timestamp(ts) => archive.snapshot(*ts)?.ok_or(EngineError::BaseNotFound(*ts))?,
    };
    let snap = apply_modifications(&base, &req.modifications).map_err(EngineError::Modification)?;
    let mut cfg = cfg.clone();
    if let Some(l) = &req.limits {
        cfg.limits = l.clone();
    }
    if let Some(p) = &req.policy_profile {
        cfg.policy.profile = p.clone();
    }
    cfg.dump_traces = None;
    let mut report = assess(&snap, &cfg)?;
    report.ephemeral = true;
    report.provenance = Some(Provenance {
        base_ts: base.timestamp,
        modifications: req.modifications.clone(),
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = EngineConfig {
            workers: 3,
            ..EngineConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(EngineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let text = "[power_flow]\ntol = 1e-9\n[simulation.frequency]\nt_end = 6.0\n\
                    [voltage]\ndefault_range = { v_min = 0.92, v_max = 1.08 }\n";
        let cfg = EngineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.power_flow.tol, 1e-9);
        assert_eq!(cfg.power_flow.max_iter, SolveOptions::default().max_iter);
        assert_eq!(cfg.simulation.frequency.t_end, 6.0);
        assert_eq!(cfg.simulation.frequency.dt, SimConfig::default().dt);
        assert_eq!(cfg.voltage.default_range.v_min, 0.92);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = EngineConfig::from_toml("workers = 2\n[limits]\nrocof_limt = 0.8\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey(k) if k == "limits.rocof_limt"));
    }

    #[test]
    fn budget_must_fit_in_period() {
        let e = EngineConfig::from_toml("cycle_period_s = 60\nbudget_s = 120\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
        assert!(EngineConfig::from_toml("workers = 0").is_err());
    }

    #[test]
    fn engine_rocof_limit_inside_policy_limit() {
        let e = EngineConfig::from_toml("[limits]\nrocof_limit = 1.1\n").unwrap_err();
        assert!(e.to_string().contains("policy RoCoF"), "{e}");
    }

    #[test]
    fn custom_profile_and_voltage_levels() {
        let text = r#"
[policy]
profile = "tight"
[policy.profiles.tight]
snsp_max_pct = 60
rocof_limit_hz_s = 1.0
inertia_floor_mws = 25000
muon_min = 8

[voltage]
thermal_pct = 90
[[voltage.levels]]
nominal_kv = 400
v_min = 0.95
v_max = 1.05
"#;
        let cfg = EngineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.policy_limits().unwrap().snsp_max_pct, 60.0);
        assert_eq!(cfg.voltage.range_for(400.0).v_min, 0.95);
        assert_eq!(cfg.voltage.range_for(220.0).v_min, 0.90);
        assert!(EngineConfig::from_toml("[policy]\nprofile = \"2040\"\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = EngineConfig::default();
        cfg.apply_override("limits.rocof_limit=0.8").unwrap();
        assert_eq!(cfg.limits.rocof_limit, 0.8);
        cfg.apply_override("policy.profile=2030").unwrap();
        assert_eq!(cfg.policy.profile, "2030");
        cfg.apply_override("dump_traces=/tmp/traces").unwrap();
        assert_eq!(cfg.dump_traces, Some(PathBuf::from("/tmp/traces")));
        assert!(matches!(cfg.apply_override("limits.nope=1"), Err(ConfigError::UnknownKey(_))));
        assert!(cfg.apply_override("limits.rocof_limit=5").is_err());
        assert_eq!(cfg.limits.rocof_limit, 0.8);
    }
}
