//! Contingency set construction and parallel N-1 screening.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{
    angle_margin, classify, island_frequency_metrics, Binding, CriteriaError, MetricInputs, SecurityLimits,
    SecurityMetrics,
};
use crate::dynsim::{NetworkModel, SimConfig, Simulator};
use crate::netmodel::{islands, system_metrics, IbrKind, Modification, NetError, Snapshot, SystemMetrics};
use crate::policy::PolicyReport;
use crate::powerflow::{
    self, apply_contingency, assess_voltage, PowerFlowError, SolveOptions, Violation, VoltageCriteria,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContingencyKind {
    GenTrip,
    IbrTrip,
    HvdcTrip,
    LineTrip,
    SystemSplit,
}

/// A bolted three-phase fault applied at the event time and cleared after
/// `duration_s`, at which point the contingency's outage takes effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub bus: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub id: String,
    pub kind: ContingencyKind,
    pub elements: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl Contingency {
    pub fn new(id: impl Into<String>, kind: ContingencyKind, elements: Vec<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            elements,
            description: String::new(),
            fault: None,
        }
    }

    pub fn with_fault(mut self, bus: impl Into<String>, duration_s: f64) -> Self {
        self.fault = Some(Fault {
            bus: bus.into(),
            duration_s,
        });
        self
    }
}

/// A declared system-split contingency: the tie branches opened together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDefinition {
    pub id: String,
    pub branches: Vec<String>,
    #[serde(default)]
    pub description: String,
}

/// Rules for [`build_contingency_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContingencyRules {
    /// IBR and HVDC units are included only when `|p|` exceeds this, MW.
    pub ibr_floor_mw: f64,
    pub system_splits: Vec<SplitDefinition>,
}

impl Default for ContingencyRules {
    fn default() -> Self {
        Self {
            ibr_floor_mw: 0.0,
            system_splits: Vec::new(),
        }
    }
}

/// One contingency per in-service branch, online machine, online IBR above
/// the floor and declared split, sorted by id.
pub fn build_contingency_set(snap: &Snapshot, rules: &ContingencyRules) -> Vec<Contingency> {
    let mut out = Vec::new();
    for b in snap.branches.iter().filter(|b| b.in_service) {
        let mut c = Contingency::new(format!("line:{}", b.id), ContingencyKind::LineTrip, vec![b.id.clone()]);
        c.description = format!("trip branch {} ({} - {})", b.id, b.from_bus, b.to_bus);
        out.push(c);
    }
    for m in snap.machines.iter().filter(|m| m.online) {
        let mut c = Contingency::new(format!("gen:{}", m.id), ContingencyKind::GenTrip, vec![m.id.clone()]);
        c.description = format!("trip machine {} ({:.1} MW)", m.id, m.p_set);
        out.push(c);
    }
    for u in snap
        .ibr_units
        .iter()
        .filter(|u| u.online && u.p.abs() > rules.ibr_floor_mw)
    {
        let (prefix, kind) = match u.kind {
            IbrKind::Hvdc => ("hvdc", ContingencyKind::HvdcTrip),
            IbrKind::Wind | IbrKind::Solar => ("ibr", ContingencyKind::IbrTrip),
        };
        let mut c = Contingency::new(format!("{prefix}:{}", u.id), kind, vec![u.id.clone()]);
        c.description = format!("trip {:?} unit {} ({:.1} MW)", u.kind, u.id, u.p).to_lowercase();
        out.push(c);
    }
    for s in &rules.system_splits {
        let mut c = Contingency::new(format!("split:{}", s.id), ContingencyKind::SystemSplit, s.branches.clone());
        c.description = if s.description.is_empty() {
            format!("system split opening {}", s.branches.join(", "))
        } else {
            s.description.clone()
        };
        out.push(c);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("base case insecure: {0}")]
    BasecaseInsecure(String),
    #[error("system metrics: {0}")]
    Metrics(#[from] NetError),
    #[error("invalid screening config: {0}")]
    Config(String),
    #[error("trace dump: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything [`screen`] needs besides the snapshot and the contingency set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenConfig {
    /// Frequency simulation; the network model is normally `coi_uniform`.
    pub frequency: SimConfig,
    /// Angle-coupled simulation for the rotor-angle criterion; `None` skips it.
    pub angle: Option<SimConfig>,
    pub limits: SecurityLimits,
    pub voltage: VoltageCriteria,
    pub power_flow: SolveOptions,
    pub budget_s: f64,
    pub workers: usize,
    pub dump_traces: Option<PathBuf>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            frequency: SimConfig::default(),
            angle: Some(SimConfig {
                t_end: 5.0,
                network_model: NetworkModel::DcNetwork,
                ..SimConfig::default()
            }),
            limits: SecurityLimits::default(),
            voltage: VoltageCriteria::default(),
            power_flow: SolveOptions::default(),
            budget_s: 300.0,
            workers: 1,
            dump_traces: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Secure,
    Insecure,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub kind: ContingencyKind,
    pub status: CaseStatus,
    pub metrics: Option<SecurityMetrics>,
    /// Largest rotor-angle separation within an island, degrees.
    pub angle_separation_deg: Option<f64>,
    /// Most extreme individual machine frequencies, Hz.
    pub machine_f_min: Option<f64>,
    pub machine_f_max: Option<f64>,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_time_s: f64,
}

impl CaseResult {
    pub fn binding(&self) -> impl Iterator<Item = Binding> + '_ {
        self.metrics.iter().flat_map(|m| m.binding.iter().copied())
    }

    fn failed(c: &Contingency, reason: String) -> Self {
        Self {
            id: c.id.clone(),
            kind: c.kind,
            status: CaseStatus::Failed,
            metrics: None,
            angle_separation_deg: None,
            machine_f_min: None,
            machine_f_max: None,
            violations: Vec::new(),
            failure: Some(reason),
            wall_time_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub cases: usize,
    pub secure: usize,
    pub insecure: usize,
    pub failed: usize,
}

impl Totals {
    pub fn of(cases: &[CaseResult]) -> Self {
        let count = |s: CaseStatus| cases.iter().filter(|c| c.status == s).count();
        Self {
            cases: cases.len(),
            secure: count(CaseStatus::Secure),
            insecure: count(CaseStatus::Insecure),
            failed: count(CaseStatus::Failed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Complete,
    Failed,
}

/// Where an ephemeral what-if report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_ts: i64,
    pub modifications: Vec<Modification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub snapshot_ts: i64,
    pub system_metrics: Option<SystemMetrics>,
    pub policy: Option<PolicyReport>,
    pub cases: Vec<CaseResult>,
    pub totals: Totals,
    pub wall_time_s: f64,
    pub budget_s: f64,
    pub over_budget: bool,
    pub status: CycleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub limits: SecurityLimits,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ephemeral: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CycleReport {
    /// Record of a cycle that could not be screened.
    pub fn failed(snapshot_ts: i64, metrics: Option<SystemMetrics>, limits: &SecurityLimits, reason: String) -> Self {
        Self {
            snapshot_ts,
            system_metrics: metrics,
            policy: None,
            cases: Vec::new(),
            totals: Totals::default(),
            wall_time_s: 0.0,
            budget_s: 0.0,
            over_budget: false,
            status: CycleStatus::Failed,
            failure: Some(reason),
            limits: limits.clone(),
            ephemeral: false,
            provenance: None,
        }
    }

    pub fn secure(&self) -> bool {
        self.status == CycleStatus::Complete && self.totals.insecure == 0
    }

    /// Copy with every timing-derived field zeroed, for diffing.
    pub fn normalized(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        r.over_budget = false;
        for c in &mut r.cases {
            c.wall_time_s = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Islands without an online machine are de-energized: their loads and IBR
/// output are dropped so the power flow sees only live islands.
fn drop_dead_islands(snap: &mut Snapshot) {
    let index = snap.bus_index();
    let mut has_machine = vec![false; snap.buses.len()];
    for m in snap.machines.iter().filter(|m| m.online) {
        has_machine[index[m.bus.as_str()]] = true;
    }
    let mut live = vec![true; snap.buses.len()];
    for island in islands(snap) {
        if !island.iter().any(|&b| has_machine[b]) {
            for b in island {
                live[b] = false;
            }
        }
    }
    let dead: Vec<String> = (0..snap.buses.len())
        .filter(|&b| !live[b])
        .map(|b| snap.buses[b].id.clone())
        .collect();
    if dead.is_empty() {
        return;
    }
    snap.loads.retain(|l| !dead.contains(&l.bus));
    for u in snap.ibr_units.iter_mut().filter(|u| dead.contains(&u.bus)) {
        u.online = false;
    }
}

struct Prepared<'a> {
    snap: &'a Snapshot,
    cfg: &'a ScreenConfig,
    frequency: Simulator,
    angle: Option<Simulator>,
}

impl Prepared<'_> {
    fn run(&self, c: &Contingency) -> Result<CaseResult, String> {
        let start = Instant::now();
        let limits = &self.cfg.limits;
        let resp = self.frequency.run(Some(c)).map_err(|e| format!("frequency simulation: {e}"))?;
        let freq = island_frequency_metrics(&resp, limits).map_err(|e| format!("frequency metrics: {e}"))?;
        let mut f_min = f64::INFINITY;
        let mut f_max = f64::NEG_INFINITY;
        for (i, trace) in resp.freq.iter().enumerate() {
            for (k, &f) in trace.iter().enumerate() {
                if resp.time[k] >= resp.event_time && resp.is_online(i, k) {
                    f_min = f_min.min(f);
                    f_max = f_max.max(f);
                }
            }
        }
        if let Some(dir) = &self.cfg.dump_traces {
            let name: String = c
                .id
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
                .collect();
            let file = std::fs::File::create(dir.join(format!("{name}.csv")))
                .map_err(|e| format!("trace dump: {e}"))?;
            resp.write_csv(std::io::BufWriter::new(file))
                .map_err(|e| format!("trace dump: {e}"))?;
        }
        drop(resp);

        let angle = match &self.angle {
            Some(sim) => {
                let resp = sim.run(Some(c)).map_err(|e| format!("angle simulation: {e}"))?;
                match angle_margin(&resp, limits.angle_threshold) {
                    Ok(a) => Some(a),
                    Err(CriteriaError::SingleMachine) => None,
                    Err(e) => return Err(format!("angle margin: {e}")),
                }
            }
            None => None,
        };

        let mut post = apply_contingency(self.snap, c).map_err(|e| e.to_string())?;
        drop_dead_islands(&mut post);
        let (voltage_secure, violations) = match powerflow::solve(&post, &self.cfg.power_flow) {
            Ok(sol) if sol.converged => {
                let a = assess_voltage(&sol, &self.cfg.voltage).map_err(|e| e.to_string())?;
                (a.secure, a.violations)
            }
            // No post-contingency operating point: treated as a voltage insecurity.
            Ok(_) | Err(PowerFlowError::SingularJacobian { .. }) => (false, Vec::new()),
            Err(e) => return Err(format!("power flow: {e}")),
        };

        let metrics = classify(
            &MetricInputs {
                rocof_max: freq.rocof_max,
                rocof_min: freq.rocof_min,
                nadir: freq.nadir,
                zenith: freq.zenith,
                angle_margin: angle.map(|a| a.margin),
                voltage_secure,
            },
            limits,
        );
        Ok(CaseResult {
            id: c.id.clone(),
            kind: c.kind,
            status: if metrics.insecure() {
                CaseStatus::Insecure
            } else {
                CaseStatus::Secure
            },
            metrics: Some(metrics),
            angle_separation_deg: angle.map(|a| a.delta_max_deg),
            machine_f_min: f_min.is_finite().then_some(f_min),
            machine_f_max: f_max.is_finite().then_some(f_max),
            violations,
            failure: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Checks that the base case solves and meets the steady-state criteria.
pub fn check_basecase(snap: &Snapshot, cfg: &ScreenConfig) -> Result<(), ScreenError> {
    let sol = powerflow::solve(snap, &cfg.power_flow)
        .map_err(|e| ScreenError::BasecaseInsecure(format!("power flow: {e}")))?;
    if !sol.converged {
        return Err(ScreenError::BasecaseInsecure(format!(
            "power flow did not converge (mismatch {:.3e} pu after {} iterations)",
            sol.max_mismatch, sol.iterations
        )));
    }
    let a = assess_voltage(&sol, &cfg.voltage).map_err(|e| ScreenError::BasecaseInsecure(e.to_string()))?;
    if !a.secure {
        let list: Vec<String> = a
            .violations
            .iter()
            .map(|v| format!("{} {:?} {:.4} (limit {:.4})", v.element, v.kind, v.value, v.limit))
            .collect();
        return Err(ScreenError::BasecaseInsecure(format!("violations: {}", list.join("; "))));
    }
    Ok(())
}

/// Screen every contingency in `set`. The report's `policy` is left empty;
/// the engine fills it in.
pub fn screen(snap: &Snapshot, set: &[Contingency], cfg: &ScreenConfig) -> Result<CycleReport, ScreenError> {
    let start = Instant::now();
    if cfg.workers == 0 {
        return Err(ScreenError::Config("workers must be at least 1".into()));
    }
    cfg.limits
        .validate(snap.nominal_hz)
        .map_err(|e| ScreenError::Config(e.to_string()))?;
    let metrics = system_metrics(snap)?;
    check_basecase(snap, cfg)?;
    if let Some(dir) = &cfg.dump_traces {
        std::fs::create_dir_all(dir)?;
    }

    let mut cases: Vec<Option<CaseResult>> = vec![None; set.len()];
    if !set.is_empty() {
        let frequency = Simulator::new(snap, &cfg.frequency).map_err(|e| ScreenError::BasecaseInsecure(e.to_string()))?;
        let angle = match &cfg.angle {
            Some(a) => Some(Simulator::new(snap, a).map_err(|e| ScreenError::BasecaseInsecure(e.to_string()))?),
            None => None,
        };
        let prepared = Prepared {
            snap,
            cfg,
            frequency,
            angle,
        };
        let next = AtomicUsize::new(0);
        let results = Mutex::new(&mut cases);
        std::thread::scope(|scope| {
            for _ in 0..cfg.workers.min(set.len()) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(c) = set.get(k) else { break };
                    let t0 = Instant::now();
                    let outcome = catch_unwind(AssertUnwindSafe(|| prepared.run(c)));
                    let result = match outcome {
                        Ok(Ok(r)) => r,
                        Ok(Err(reason)) => CaseResult::failed(c, reason),
                        Err(p) => CaseResult::failed(c, format!("simulation panicked: {}", panic_message(p))),
                    };
                    let result = CaseResult {
                        wall_time_s: t0.elapsed().as_secs_f64(),
                        ..result
                    };
                    results.lock().unwrap_or_else(|e| e.into_inner())[k] = Some(result);
                });
            }
        });
    }

    let mut cases: Vec<CaseResult> = cases.into_iter().map(|c| c.expect("every case ran")).collect();
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    let wall_time_s = start.elapsed().as_secs_f64();
    Ok(CycleReport {
        snapshot_ts: snap.timestamp,
        system_metrics: Some(metrics),
        policy: None,
        totals: Totals::of(&cases),
        cases,
        wall_time_s,
        budget_s: cfg.budget_s,
        over_budget: wall_time_s > cfg.budget_s,
        status: CycleStatus::Complete,
        failure: None,
        limits: cfg.limits.clone(),
        ephemeral: false,
        provenance: None,
    })
}

/// Divisors that make limit exceedances comparable across criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityScales {
    /// Hz/s.
    pub rocof: f64,
    /// Hz.
    pub nadir: f64,
    /// Hz.
    pub zenith: f64,
    /// Margin units.
    pub angle: f64,
    /// Relative exceedance of a voltage or thermal limit.
    pub voltage: f64,
}

impl Default for SeverityScales {
    fn default() -> Self {
        Self {
            rocof: 0.9,
            nadir: 1.0,
            zenith: 0.8,
            angle: 1.0,
            voltage: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub id: String,
    pub severity: f64,
    /// The flag with the largest normalized exceedance.
    pub worst: Binding,
    pub binding: Vec<Binding>,
}

fn exceedance(m: &SecurityMetrics, violations: &[Violation], b: Binding, l: &SecurityLimits, s: &SeverityScales) -> f64 {
    match b {
        Binding::RocofPlus => (m.rocof_max - l.rocof_limit) / s.rocof,
        Binding::RocofMinus => (-l.rocof_limit - m.rocof_min) / s.rocof,
        Binding::Nadir => (l.nadir_limit - m.nadir) / s.nadir,
        Binding::Zenith => (m.zenith - l.zenith_limit) / s.zenith,
        Binding::RotorAngle => -m.angle_margin.unwrap_or(0.0) / s.angle,
        Binding::Voltage => violations
            .iter()
            .map(|v| ((v.value - v.limit) / v.limit).abs() / s.voltage)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
            // A post-contingency power flow without solution.
            .unwrap_or(1.0),
    }
}

/// Insecure cases, worst normalized exceedance first, ties by id.
pub fn rank_insecure(report: &CycleReport, scales: &SeverityScales) -> Vec<RankedCase> {
    let mut out: Vec<RankedCase> = report
        .cases
        .iter()
        .filter(|c| c.status == CaseStatus::Insecure)
        .filter_map(|c| {
            let m = c.metrics.as_ref()?;
            let (worst, severity) = m
                .binding
                .iter()
                .map(|&b| (b, exceedance(m, &c.violations, b, &report.limits, scales)))
                .fold(None, |acc: Option<(Binding, f64)>, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                })?;
            Some(RankedCase {
                id: c.id.clone(),
                severity,
                worst,
                binding: m.binding.iter().copied().collect(),
            })
        })
        .collect();
    out.sort_by(|a, b| b.severity.total_cmp(&a.severity).then_with(|| a.id.cmp(&b.id)));
    out
}
