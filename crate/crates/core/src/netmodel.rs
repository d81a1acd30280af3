//! Network and snapshot data model.
//!
//! A [`Snapshot`] is the full estimated network state at one timestamp. It is
//! parsed from a JSON document, validated once, and treated as an immutable
//! value afterwards: every what-if or contingency produces a modified copy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid snapshot: {}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("SNSP undefined: demand plus HVDC exports is zero")]
    Degenerate,
    #[error("{element}: setpoint {value} MW outside [{min}, {max}]")]
    Limit {
        element: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("unknown element {0:?}")]
    UnknownElement(String),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// One validation finding, naming the element it concerns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub element: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    #[serde(rename = "slack", alias = "SLACK", alias = "Slack")]
    Slack,
    #[serde(rename = "PV", alias = "pv")]
    Pv,
    #[serde(rename = "PQ", alias = "pq")]
    Pq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    IE,
    NI,
}

impl Default for Region {
    fn default() -> Self {
        Region::IE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbrKind {
    Wind,
    Solar,
    Hvdc,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_droop() -> f64 {
    0.05
}

fn default_t_gov() -> f64 {
    0.5
}

fn default_xd_prime() -> f64 {
    0.3
}

fn default_base_mva() -> f64 {
    100.0
}

fn default_nominal_hz() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub nominal_kv: f64,
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v_mag: f64,
    #[serde(default)]
    pub v_ang: f64,
    #[serde(default)]
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    pub mva_rating: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMachine {
    pub id: String,
    pub bus: String,
    pub s_rated: f64,
    /// Inertia constant, seconds on machine base.
    pub h: f64,
    /// Damping, per unit power per unit speed on machine base.
    #[serde(default)]
    pub d: f64,
    pub p_set: f64,
    #[serde(default)]
    pub q_set: f64,
    pub p_max: f64,
    pub p_min: f64,
    #[serde(default = "default_droop")]
    pub droop_r: f64,
    #[serde(default = "default_t_gov")]
    pub t_gov: f64,
    #[serde(default = "yes")]
    pub online: bool,
    #[serde(default)]
    pub is_large_unit: bool,
    /// Transient reactance behind which the rotor angle sits, per unit on
    /// machine base. Only the angle-coupled dynamic model reads it.
    #[serde(default = "default_xd_prime")]
    pub xd_prime: f64,
}

impl SyncMachine {
    /// Stored kinetic energy at rated speed, MWs.
    pub fn kinetic_energy(&self) -> f64 {
        self.h * self.s_rated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbrUnit {
    pub id: String,
    pub bus: String,
    pub kind: IbrKind,
    /// MW; HVDC is negative when exporting.
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default = "yes")]
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    /// Fractional change of active demand per Hz of frequency deviation.
    #[serde(default)]
    pub freq_sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub timestamp: i64,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_nominal_hz")]
    pub nominal_hz: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub machines: Vec<SyncMachine>,
    #[serde(default)]
    pub ibr_units: Vec<IbrUnit>,
    #[serde(default)]
    pub loads: Vec<Load>,
}

/// How unknown document keys are treated on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown keys are reported as warnings and ignored.
    Lenient,
}

/// Parse and validate a snapshot document, rejecting unknown keys.
pub fn load_snapshot(source: impl Read) -> Result<Snapshot, NetError> {
    load_snapshot_with(source, Strictness::Strict).map(|(snap, _)| snap)
}

/// Parse and validate a snapshot document. Returns the snapshot together with
/// the paths of any ignored keys (always empty in strict mode).
pub fn load_snapshot_with(
    mut source: impl Read,
    strictness: Strictness,
) -> Result<(Snapshot, Vec<String>), NetError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| NetError::Parse(e.to_string()))?;
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(&text);
    let snap: Snapshot = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| NetError::Parse(e.to_string()))?;
    if strictness == Strictness::Strict && !unknown.is_empty() {
        return Err(NetError::Parse(format!(
            "unknown keys: {}",
            unknown.join(", ")
        )));
    }
    for key in &unknown {
        tracing::warn!(key = %key, "ignoring unknown snapshot key");
    }
    snap.validate().map_err(NetError::Validation)?;
    Ok((snap, unknown))
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect()
    }

    /// All findings; empty means the snapshot is valid.
    pub fn issues(&self) -> Vec<ValidationIssue> {
        let mut out = Vec::new();
        fn issue(out: &mut Vec<ValidationIssue>, element: &str, message: String) {
            out.push(ValidationIssue {
                element: element.to_string(),
                message,
            })
        }

        if !(self.base_mva > 0.0) {
            issue(&mut out, "snapshot", format!("base_mva must be positive, got {}", self.base_mva));
        }
        if !(self.nominal_hz > 0.0) {
            issue(&mut out, "snapshot", format!("nominal_hz must be positive, got {}", self.nominal_hz));
        }

        let mut ids = HashSet::new();
        let all_ids = self
            .buses
            .iter()
            .map(|b| &b.id)
            .chain(self.branches.iter().map(|b| &b.id))
            .chain(self.machines.iter().map(|m| &m.id))
            .chain(self.ibr_units.iter().map(|u| &u.id))
            .chain(self.loads.iter().map(|l| &l.id));
        for id in all_ids {
            if !ids.insert(id.as_str()) {
                issue(&mut out, id, "duplicate element id".into());
            }
        }

        let buses: HashSet<&str> = self.buses.iter().map(|b| b.id.as_str()).collect();
        for b in &self.buses {
            if !(b.nominal_kv > 0.0) {
                issue(&mut out, &b.id, format!("nominal_kv must be positive, got {}", b.nominal_kv));
            }
            if !(b.v_mag > 0.0) {
                issue(&mut out, &b.id, format!("v_mag must be positive, got {}", b.v_mag));
            }
            if !b.v_ang.is_finite() {
                issue(&mut out, &b.id, "v_ang must be finite".into());
            }
        }
        for br in &self.branches {
            for end in [&br.from_bus, &br.to_bus] {
                if !buses.contains(end.as_str()) {
                    issue(&mut out, end, format!("bus referenced by branch {} does not exist", br.id));
                }
            }
            if br.from_bus == br.to_bus {
                issue(&mut out, &br.id, "from_bus equals to_bus".into());
            }
            if br.x == 0.0 || !br.x.is_finite() {
                issue(&mut out, &br.id, format!("reactance must be nonzero, got {}", br.x));
            }
            if !(br.mva_rating > 0.0) {
                issue(&mut out, &br.id, format!("mva_rating must be positive, got {}", br.mva_rating));
            }
        }
        for m in &self.machines {
            if !buses.contains(m.bus.as_str()) {
                issue(&mut out, &m.bus, format!("bus referenced by machine {} does not exist", m.id));
            }
            if !(m.h > 0.0) {
                issue(&mut out, &m.id, format!("inertia constant must be positive, got {}", m.h));
            }
            if !(m.s_rated > 0.0) {
                issue(&mut out, &m.id, format!("s_rated must be positive, got {}", m.s_rated));
            }
            if m.p_min > m.p_max {
                issue(&mut out, &m.id, format!("p_min {} exceeds p_max {}", m.p_min, m.p_max));
            }
            if m.online && !(m.p_min <= m.p_set && m.p_set <= m.p_max) {
                issue(
                    &mut out,
                    &m.id,
                    format!("p_set {} outside [{}, {}]", m.p_set, m.p_min, m.p_max),
                );
            }
            if !(m.droop_r > 0.0 && m.droop_r <= 1.0) {
                issue(&mut out, &m.id, format!("droop_r must be in (0, 1], got {}", m.droop_r));
            }
            if !(m.t_gov > 0.0) {
                issue(&mut out, &m.id, format!("t_gov must be positive, got {}", m.t_gov));
            }
            if !(m.d >= 0.0) {
                issue(&mut out, &m.id, format!("damping must be nonnegative, got {}", m.d));
            }
            if !(m.xd_prime > 0.0) {
                issue(&mut out, &m.id, format!("xd_prime must be positive, got {}", m.xd_prime));
            }
        }
        for u in &self.ibr_units {
            if !buses.contains(u.bus.as_str()) {
                issue(&mut out, &u.bus, format!("bus referenced by IBR {} does not exist", u.id));
            }
            if matches!(u.kind, IbrKind::Wind | IbrKind::Solar) && u.p < 0.0 {
                issue(&mut out, &u.id, format!("wind/solar output must be nonnegative, got {}", u.p));
            }
        }
        for l in &self.loads {
            if !buses.contains(l.bus.as_str()) {
                issue(&mut out, &l.bus, format!("bus referenced by load {} does not exist", l.id));
            }
            if !(l.p >= 0.0) {
                issue(&mut out, &l.id, format!("load must be nonnegative, got {}", l.p));
            }
            if !(l.freq_sensitivity >= 0.0) {
                issue(&mut out, &l.id, "freq_sensitivity must be nonnegative".into());
            }
        }
        if !self.machines.iter().any(|m| m.online) {
            issue(&mut out, "snapshot", "no online synchronous machine".into());
        }
        if !out.is_empty() {
            // Topology checks need resolved references.
            return out;
        }

        let machine_buses: HashSet<&str> = self
            .machines
            .iter()
            .filter(|m| m.online)
            .map(|m| m.bus.as_str())
            .collect();
        for island in islands(self) {
            let slacks: Vec<&Bus> = island
                .iter()
                .map(|&i| &self.buses[i])
                .filter(|b| b.kind == BusKind::Slack)
                .collect();
            let name = &self.buses[island[0]].id;
            match slacks.len() {
                1 => {
                    if !machine_buses.contains(slacks[0].id.as_str()) {
                        issue(&mut out, &slacks[0].id, "slack bus hosts no online machine".into());
                    }
                }
                0 => issue(&mut out, name, "island has no slack bus".into()),
                n => issue(&mut out, name, format!("island has {n} slack buses")),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<ValidationIssue>> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

/// Connected components of the bus graph over in-service branches, as sorted
/// bus index lists ordered by their smallest member.
pub fn islands(snap: &Snapshot) -> Vec<Vec<usize>> {
    let index = snap.bus_index();
    let n = snap.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for br in snap.branches.iter().filter(|b| b.in_service) {
        let (Some(&a), Some(&b)) = (index.get(br.from_bus.as_str()), index.get(br.to_bus.as_str()))
        else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Re-designate slack buses after a topology or commitment change: every
/// island holding an online machine gets exactly one slack bus at a machine
/// bus, and PV buses without an online machine become PQ.
pub(crate) fn normalize_slacks(snap: &mut Snapshot) {
    let index = snap.bus_index();
    let mut machines_at: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, m) in snap.machines.iter().enumerate().filter(|(_, m)| m.online) {
        machines_at.entry(index[m.bus.as_str()]).or_default().push(k);
    }
    for island in islands(snap) {
        let has_machine = |i: &usize| machines_at.contains_key(i);
        let current = island
            .iter()
            .copied()
            .find(|&i| snap.buses[i].kind == BusKind::Slack && has_machine(&i));
        let chosen = current.or_else(|| {
            island
                .iter()
                .filter(|i| has_machine(i))
                .flat_map(|&i| machines_at[&i].iter().map(move |&k| (i, k)))
                .max_by(|&(_, a), &(_, b)| {
                    let (ma, mb) = (&snap.machines[a], &snap.machines[b]);
                    ma.s_rated
                        .total_cmp(&mb.s_rated)
                        .then_with(|| mb.id.cmp(&ma.id))
                })
                .map(|(i, _)| i)
        });
        for &i in &island {
            let bus = &mut snap.buses[i];
            if Some(i) == chosen {
                bus.kind = BusKind::Slack;
            } else if machines_at.contains_key(&i) {
                if bus.kind == BusKind::Slack {
                    bus.kind = BusKind::Pv;
                }
            } else {
                bus.kind = BusKind::Pq;
            }
        }
    }
}

/// System-wide quantities derived from a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub inertia_mws: f64,
    pub demand_mw: f64,
    pub wind_mw: f64,
    pub solar_mw: f64,
    pub snsp_pct: f64,
    /// Set when SNSP exceeds 100 %, which only happens when non-synchronous
    /// output exceeds demand plus exports.
    #[serde(default)]
    pub snsp_over_100: bool,
    pub muon_count: u32,
    #[serde(default)]
    pub muon_by_region: BTreeMap<Region, u32>,
    pub net_interchange_mw: f64,
}

pub fn system_metrics(snap: &Snapshot) -> Result<SystemMetrics, NetError> {
    let online = || snap.machines.iter().filter(|m| m.online);
    // `+ 0.0` turns the empty sum's -0.0 into 0.0.
    let inertia_mws = online().map(SyncMachine::kinetic_energy).sum::<f64>() + 0.0;
    let demand_mw = snap.loads.iter().map(|l| l.p).sum::<f64>() + 0.0;
    let ibr = |kind: IbrKind| {
        snap.ibr_units
            .iter()
            .filter(move |u| u.online && u.kind == kind)
            .map(|u| u.p)
    };
    let wind_mw = ibr(IbrKind::Wind).sum::<f64>() + 0.0;
    let solar_mw = ibr(IbrKind::Solar).sum::<f64>() + 0.0;
    let imports = ibr(IbrKind::Hvdc).filter(|p| *p > 0.0).sum::<f64>() + 0.0;
    let exports = ibr(IbrKind::Hvdc).filter(|p| *p < 0.0).map(|p| -p).sum::<f64>() + 0.0;
    let net_interchange_mw = imports - exports;

    let denominator = demand_mw + exports;
    if denominator == 0.0 {
        return Err(NetError::Degenerate);
    }
    let snsp_pct = 100.0 * (wind_mw + solar_mw + imports) / denominator;

    let region_of: HashMap<&str, Region> = snap
        .buses
        .iter()
        .map(|b| (b.id.as_str(), b.region))
        .collect();
    let mut muon_by_region = BTreeMap::from([(Region::IE, 0), (Region::NI, 0)]);
    let mut muon_count = 0;
    for m in online().filter(|m| m.is_large_unit) {
        muon_count += 1;
        let region = region_of.get(m.bus.as_str()).copied().unwrap_or_default();
        *muon_by_region.entry(region).or_default() += 1;
    }

    Ok(SystemMetrics {
        inertia_mws,
        demand_mw,
        wind_mw,
        solar_mw,
        snsp_pct,
        snsp_over_100: snsp_pct > 100.0,
        muon_count,
        muon_by_region,
        net_interchange_mw,
    })
}

/// An operator dispatch or commitment change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Modification {
    SetMachineDispatch { machine: String, p_set: f64 },
    CommitMachine { machine: String, p_set: f64 },
    DecommitMachine { machine: String },
    SetIbrOutput { unit: String, p: f64 },
    SetIbrOnline { unit: String, online: bool },
    SetLoad { load: String, p: f64 },
}

/// Apply modifications in order to a copy of `snap`.
pub fn apply_modifications(snap: &Snapshot, mods: &[Modification]) -> Result<Snapshot, NetError> {
    let mut out = snap.clone();
    for m in mods {
        match m {
            Modification::SetMachineDispatch { machine, p_set } => {
                let g = find_machine(&mut out, machine)?;
                check_limits(g, *p_set)?;
                g.p_set = *p_set;
            }
            Modification::CommitMachine { machine, p_set } => {
                let g = find_machine(&mut out, machine)?;
                check_limits(g, *p_set)?;
                g.online = true;
                g.p_set = *p_set;
            }
            Modification::DecommitMachine { machine } => {
                find_machine(&mut out, machine)?.online = false;
            }
            Modification::SetIbrOutput { unit, p } => {
                let u = find_ibr(&mut out, unit)?;
                if matches!(u.kind, IbrKind::Wind | IbrKind::Solar) && *p < 0.0 {
                    return Err(NetError::Limit {
                        element: unit.clone(),
                        value: *p,
                        min: 0.0,
                        max: f64::INFINITY,
                    });
                }
                u.p = *p;
            }
            Modification::SetIbrOnline { unit, online } => {
                find_ibr(&mut out, unit)?.online = *online;
            }
            Modification::SetLoad { load, p } => {
                let l = out
                    .loads
                    .iter_mut()
                    .find(|l| &l.id == load)
                    .ok_or_else(|| NetError::UnknownElement(load.clone()))?;
                if *p < 0.0 {
                    return Err(NetError::Limit {
                        element: load.clone(),
                        value: *p,
                        min: 0.0,
                        max: f64::INFINITY,
                    });
                }
                l.p = *p;
            }
        }
    }
    normalize_slacks(&mut out);
    out.validate().map_err(NetError::Validation)?;
    Ok(out)
}

fn find_machine<'a>(snap: &'a mut Snapshot, id: &str) -> Result<&'a mut SyncMachine, NetError> {
    snap.machines
        .iter_mut()
        .find(|m| m.id == id)
        .ok_or_else(|| NetError::UnknownElement(id.to_string()))
}

fn find_ibr<'a>(snap: &'a mut Snapshot, id: &str) -> Result<&'a mut IbrUnit, NetError> {
    snap.ibr_units
        .iter_mut()
        .find(|u| u.id == id)
        .ok_or_else(|| NetError::UnknownElement(id.to_string()))
}

fn check_limits(g: &SyncMachine, p: f64) -> Result<(), NetError> {
    if p < g.p_min || p > g.p_max {
        return Err(NetError::Limit {
            element: g.id.clone(),
            value: p,
            min: g.p_min,
            max: g.p_max,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "timestamp": 1000, "base_mva": 100, "nominal_hz": 50,
        "buses": [
            {"id": "B1", "nominal_kv": 220, "kind": "slack", "v_mag": 1.0, "v_ang": 0.0, "region": "IE"},
            {"id": "B2", "nominal_kv": 220, "kind": "PQ", "v_mag": 1.0, "v_ang": 0.0, "region": "IE"}
        ],
        "branches": [{"id": "L1", "from_bus": "B1", "to_bus": "B2", "r": 0, "x": 0.1, "b_shunt": 0, "mva_rating": 200, "in_service": true}],
        "machines": [{"id": "G1", "bus": "B1", "s_rated": 500, "h": 4, "d": 0, "p_set": 100, "q_set": 0,
                      "p_max": 400, "p_min": 0, "droop_r": 0.05, "t_gov": 0.5, "online": true, "is_large_unit": true}],
        "ibr_units": [],
        "loads": [{"id": "D1", "bus": "B2", "p": 100, "q": 0, "freq_sensitivity": 0.0}]
    }"#;

    #[test]
    fn loads_minimal_two_bus() {
        let snap = load_snapshot(TWO_BUS.as_bytes()).unwrap();
        assert_eq!(snap.buses.len(), 2);
        assert_eq!(snap.machines[0].kinetic_energy(), 2000.0);
    }

    #[test]
    fn dangling_bus_is_named() {
        let doc = TWO_BUS.replace(r#""bus": "B2", "p": 100"#, r#""bus": "B99", "p": 100"#);
        let err = load_snapshot(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, NetError::Validation(_)));
        assert!(err.to_string().contains("B99"), "{err}");
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let doc = TWO_BUS.replace(r#""timestamp": 1000,"#, r#""timestamp": 1000, "operator": "x","#);
        assert!(matches!(load_snapshot(doc.as_bytes()), Err(NetError::Parse(_))));
        let (_, warnings) = load_snapshot_with(doc.as_bytes(), Strictness::Lenient).unwrap();
        assert_eq!(warnings, vec!["operator".to_string()]);
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(load_snapshot(&b"{\"timestamp\": "[..]), Err(NetError::Parse(_))));
    }

    #[test]
    fn invariant_violations() {
        let mut snap = load_snapshot(TWO_BUS.as_bytes()).unwrap();
        snap.branches[0].x = 0.0;
        snap.machines[0].h = 0.0;
        snap.machines[0].p_set = 500.0;
        let issues = snap.validate().unwrap_err();
        let elems: Vec<&str> = issues.iter().map(|i| i.element.as_str()).collect();
        assert!(elems.contains(&"L1"));
        assert_eq!(elems.iter().filter(|e| **e == "G1").count(), 2);
    }

    #[test]
    fn missing_slack_per_island() {
        let mut snap = load_snapshot(TWO_BUS.as_bytes()).unwrap();
        snap.branches[0].in_service = false;
        let issues = snap.validate().unwrap_err();
        assert_eq!(issues[0].element, "B2");
    }

    fn wind_snapshot() -> Snapshot {
        let mut snap = load_snapshot(TWO_BUS.as_bytes()).unwrap();
        snap.loads[0].p = 4000.0;
        snap.ibr_units.push(IbrUnit {
            id: "W1".into(),
            bus: "B2".into(),
            kind: IbrKind::Wind,
            p: 3000.0,
            q: 0.0,
            online: true,
        });
        snap
    }

    #[test]
    fn snsp_direct_ratio() {
        let m = system_metrics(&wind_snapshot()).unwrap();
        assert_eq!(m.snsp_pct, 75.0);
        assert_eq!(m.wind_mw, 3000.0);
    }

    #[test]
    fn snsp_zero_when_ibr_offline() {
        let mut snap = wind_snapshot();
        snap.ibr_units[0].online = false;
        assert_eq!(system_metrics(&snap).unwrap().snsp_pct, 0.0);
    }

    #[test]
    fn snsp_with_hvdc() {
        let mut snap = wind_snapshot();
        snap.ibr_units.push(IbrUnit {
            id: "H1".into(),
            bus: "B1".into(),
            kind: IbrKind::Hvdc,
            p: -500.0,
            q: 0.0,
            online: true,
        });
        let m = system_metrics(&snap).unwrap();
        assert_eq!(m.snsp_pct, 100.0 * 3000.0 / 4500.0);
        assert_eq!(m.net_interchange_mw, -500.0);
    }

    #[test]
    fn snsp_degenerate() {
        let mut snap = wind_snapshot();
        snap.loads[0].p = 0.0;
        assert!(matches!(system_metrics(&snap), Err(NetError::Degenerate)));
    }

    #[test]
    fn inertia_hits_floor() {
        let mut snap = wind_snapshot();
        snap.machines[0].h = 4.0;
        snap.machines[0].s_rated = 1437.5;
        for k in 2..=4 {
            let mut g = snap.machines[0].clone();
            g.id = format!("G{k}");
            snap.machines.push(g);
        }
        assert_eq!(system_metrics(&snap).unwrap().inertia_mws, 23000.0);
    }

    #[test]
    fn modifications() {
        let mut snap = wind_snapshot();
        let mut g2 = snap.machines[0].clone();
        g2.id = "G2".into();
        g2.online = false;
        g2.p_set = 0.0;
        snap.machines.push(g2);
        let before = system_metrics(&snap).unwrap();
        let original = snap.clone();

        let committed = apply_modifications(
            &snap,
            &[Modification::CommitMachine {
                machine: "G2".into(),
                p_set: 0.0,
            }],
        )
        .unwrap();
        assert_eq!(system_metrics(&committed).unwrap().muon_count, before.muon_count + 1);

        let err = apply_modifications(
            &snap,
            &[Modification::SetMachineDispatch {
                machine: "G1".into(),
                p_set: 401.0,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::Limit { .. }));

        let err = apply_modifications(&snap, &[Modification::DecommitMachine { machine: "G9".into() }])
            .unwrap_err();
        assert!(matches!(err, NetError::UnknownElement(ref id) if id == "G9"));

        // 200 MW from wind to G1: (2800)/(4000) = 70 %.
        let moved = apply_modifications(
            &snap,
            &[
                Modification::SetIbrOutput {
                    unit: "W1".into(),
                    p: 2800.0,
                },
                Modification::SetMachineDispatch {
                    machine: "G1".into(),
                    p_set: 300.0,
                },
            ],
        )
        .unwrap();
        let after = system_metrics(&moved).unwrap();
        assert_eq!(after.demand_mw, before.demand_mw);
        assert_eq!(after.snsp_pct, 70.0);
        assert!(after.snsp_pct < before.snsp_pct);
        assert_eq!(snap, original);
    }

    #[test]
    fn round_trip() {
        let snap = load_snapshot(TWO_BUS.as_bytes()).unwrap();
        let again = load_snapshot(snap.to_json().as_bytes()).unwrap();
        assert_eq!(snap, again);
    }

    #[test]
    fn slack_moves_when_slack_machine_trips() {
        let mut snap = wind_snapshot();
        let mut g2 = snap.machines[0].clone();
        g2.id = "G2".into();
        g2.bus = "B2".into();
        snap.machines.push(g2);
        snap.machines[0].online = false;
        normalize_slacks(&mut snap);
        assert_eq!(snap.buses[0].kind, BusKind::Pq);
        assert_eq!(snap.buses[1].kind, BusKind::Slack);
    }
}
