//! AC power flow and quasi-steady-state voltage / thermal assessment.
//!
//! Full Newton-Raphson in polar coordinates on a dense admittance matrix.
//! Each energized island is solved around its own slack bus; islands with no
//! slack and no injections are treated as de-energized.

use std::collections::{HashMap, HashSet};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{islands, normalize_slacks, BusKind, IbrKind, Snapshot};
use crate::screener::{Contingency, ContingencyKind};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("island containing {bus} has injections but no slack bus")]
    Island { bus: String },
    #[error("power flow did not converge")]
    NotConverged,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContingencyError {
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("element {0:?} is already out of service")]
    AlreadyOut(String),
    #[error("element {id:?} does not match contingency kind {kind:?}")]
    KindMismatch { id: String, kind: ContingencyKind },
    #[error("contingency {0:?} names no elements")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Ignore snapshot voltages and start from 1.0 pu / 0 rad (setpoints kept).
    pub flat_start: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            flat_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub id: String,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
    /// Apparent power at the more loaded end, MVA.
    pub s_max_mva: f64,
    pub mva_rating: f64,
    pub loading_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<String>,
    pub nominal_kv: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub energized: Vec<bool>,
    /// Calculated net injection per bus, MW / MVAr.
    pub p_inj_mw: Vec<f64>,
    pub q_inj_mvar: Vec<f64>,
    pub branches: Vec<BranchFlow>,
    /// Net active injection at the slack bus(es), MW.
    pub slack_p_mw: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the final power mismatch, per unit.
    pub max_mismatch: f64,
    pub mismatch_history: Vec<f64>,
}

impl PowerFlowSolution {
    /// Total series and shunt losses, MW.
    pub fn losses_mw(&self) -> f64 {
        self.branches.iter().map(|b| b.p_from_mw + b.p_to_mw).sum()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Role {
    Slack,
    Pv,
    Pq,
    Dead,
}

struct Admittance {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
}

fn admittance(snap: &Snapshot, index: &HashMap<&str, usize>) -> Admittance {
    let n = snap.buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in snap.branches.iter().filter(|b| b.in_service) {
        let (i, j) = (index[br.from_bus.as_str()], index[br.to_bus.as_str()]);
        let z2 = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / z2, -br.x / z2);
        g[(i, i)] += gs;
        g[(j, j)] += gs;
        g[(i, j)] -= gs;
        g[(j, i)] -= gs;
        b[(i, i)] += bs + br.b_shunt / 2.0;
        b[(j, j)] += bs + br.b_shunt / 2.0;
        b[(i, j)] -= bs;
        b[(j, i)] -= bs;
    }
    Admittance { g, b }
}

/// Specified net injections per bus in per unit.
fn scheduled_injections(snap: &Snapshot, index: &HashMap<&str, usize>) -> (Vec<f64>, Vec<f64>) {
    let n = snap.buses.len();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for m in snap.machines.iter().filter(|m| m.online) {
        let i = index[m.bus.as_str()];
        p[i] += m.p_set;
        q[i] += m.q_set;
    }
    for u in snap.ibr_units.iter().filter(|u| u.online) {
        let i = index[u.bus.as_str()];
        p[i] += u.p;
        q[i] += u.q;
    }
    for l in &snap.loads {
        let i = index[l.bus.as_str()];
        p[i] -= l.p;
        q[i] -= l.q;
    }
    let base = snap.base_mva;
    (
        p.into_iter().map(|x| x / base).collect(),
        q.into_iter().map(|x| x / base).collect(),
    )
}

fn bus_roles(snap: &Snapshot, index: &HashMap<&str, usize>) -> Result<Vec<Role>, PowerFlowError> {
    let n = snap.buses.len();
    let machine_bus: HashSet<usize> = snap
        .machines
        .iter()
        .filter(|m| m.online)
        .map(|m| index[m.bus.as_str()])
        .collect();
    let mut has_injection = vec![false; n];
    for l in snap.loads.iter().filter(|l| l.p != 0.0 || l.q != 0.0) {
        has_injection[index[l.bus.as_str()]] = true;
    }
    for u in snap.ibr_units.iter().filter(|u| u.online && (u.p != 0.0 || u.q != 0.0)) {
        has_injection[index[u.bus.as_str()]] = true;
    }
    for &i in &machine_bus {
        has_injection[i] = true;
    }

    let mut roles = vec![Role::Pq; n];
    for island in islands(snap) {
        let has_slack = island.iter().any(|&i| snap.buses[i].kind == BusKind::Slack);
        if !has_slack {
            if let Some(&i) = island.iter().find(|&&i| has_injection[i]) {
                return Err(PowerFlowError::Island {
                    bus: snap.buses[i].id.clone(),
                });
            }
            for &i in &island {
                roles[i] = Role::Dead;
            }
            continue;
        }
        for &i in &island {
            roles[i] = match snap.buses[i].kind {
                BusKind::Slack => Role::Slack,
                BusKind::Pv if machine_bus.contains(&i) => Role::Pv,
                _ => Role::Pq,
            };
        }
    }
    Ok(roles)
}

/// Calculated injections P_i, Q_i (per unit).
fn injections(y: &Admittance, v: &[f64], th: &[f64], roles: &[Role]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if roles[i] == Role::Dead {
            continue;
        }
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in 0..n {
            let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (th[i] - th[j]).sin_cos();
            pi += v[j] * (gij * c + bij * s);
            qi += v[j] * (gij * s - bij * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Solve the AC power flow of `snap`.
pub fn solve(snap: &Snapshot, opts: &SolveOptions) -> Result<PowerFlowSolution, PowerFlowError> {
    let index = snap.bus_index();
    let n = snap.buses.len();
    let y = admittance(snap, &index);
    let (p_spec, q_spec) = scheduled_injections(snap, &index);
    let roles = bus_roles(snap, &index)?;

    let mut v: Vec<f64> = snap
        .buses
        .iter()
        .zip(&roles)
        .map(|(b, r)| match r {
            Role::Dead => 0.0,
            Role::Pq if opts.flat_start => 1.0,
            _ => b.v_mag,
        })
        .collect();
    let mut th: Vec<f64> = snap
        .buses
        .iter()
        .zip(&roles)
        .map(|(b, r)| match r {
            Role::Slack => b.v_ang,
            Role::Dead => 0.0,
            _ if opts.flat_start => 0.0,
            _ => b.v_ang,
        })
        .collect();
    if opts.flat_start {
        // Islands share the reference angle of their slack.
        for island in islands(snap) {
            if let Some(&s) = island.iter().find(|&&i| roles[i] == Role::Slack) {
                for &i in &island {
                    th[i] = th[s];
                }
            }
        }
    }

    // Unknown ordering: angles of PV+PQ buses, then magnitudes of PQ buses.
    let ang_idx: Vec<usize> = (0..n).filter(|&i| matches!(roles[i], Role::Pv | Role::Pq)).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| roles[i] == Role::Pq).collect();
    let (na, nm) = (ang_idx.len(), mag_idx.len());
    let dim = na + nm;

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut max_mismatch;
    loop {
        let (p, q) = injections(&y, &v, &th, &roles);
        let mut f = DVector::zeros(dim);
        for (k, &i) in ang_idx.iter().enumerate() {
            f[k] = p_spec[i] - p[i];
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            f[na + k] = q_spec[i] - q[i];
        }
        max_mismatch = f.amax();
        history.push(max_mismatch);
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter || max_mismatch > 1e6 {
            break;
        }

        let mut jac = DMatrix::zeros(dim, dim);
        let mut col_of = vec![usize::MAX; n];
        let mut vcol_of = vec![usize::MAX; n];
        for (k, &i) in ang_idx.iter().enumerate() {
            col_of[i] = k;
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            vcol_of[i] = na + k;
        }
        let rows = ang_idx
            .iter()
            .map(|&i| (i, false))
            .chain(mag_idx.iter().map(|&i| (i, true)));
        for (r, (i, is_q)) in rows.enumerate() {
            for j in 0..n {
                let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
                if (gij == 0.0 && bij == 0.0) || roles[j] == Role::Dead {
                    continue;
                }
                let (s, c) = (th[i] - th[j]).sin_cos();
                let (d_th, d_v) = if i == j {
                    if is_q {
                        (p[i] - gij * v[i] * v[i], q[i] / v[i] - bij * v[i])
                    } else {
                        (-q[i] - bij * v[i] * v[i], p[i] / v[i] + gij * v[i])
                    }
                } else if is_q {
                    (
                        -v[i] * v[j] * (gij * c + bij * s),
                        v[i] * (gij * s - bij * c),
                    )
                } else {
                    (
                        v[i] * v[j] * (gij * s - bij * c),
                        v[i] * (gij * c + bij * s),
                    )
                };
                if col_of[j] != usize::MAX {
                    jac[(r, col_of[j])] = d_th;
                }
                if vcol_of[j] != usize::MAX {
                    jac[(r, vcol_of[j])] = d_v;
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(PowerFlowError::SingularJacobian { iteration: iterations })?;
        iterations += 1;
        for (k, &i) in ang_idx.iter().enumerate() {
            th[i] += dx[k];
        }
        for (k, &i) in mag_idx.iter().enumerate() {
            v[i] += dx[na + k];
        }
        if mag_idx.iter().any(|&i| !(v[i] > 0.0)) {
            // Collapsed through zero voltage: no meaningful solution nearby.
            max_mismatch = f64::INFINITY;
            history.push(max_mismatch);
            break;
        }
    }

    let (p, q) = injections(&y, &v, &th, &roles);
    let base = snap.base_mva;
    let branches = snap
        .branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return BranchFlow {
                    id: br.id.clone(),
                    p_from_mw: 0.0,
                    q_from_mvar: 0.0,
                    p_to_mw: 0.0,
                    q_to_mvar: 0.0,
                    s_max_mva: 0.0,
                    mva_rating: br.mva_rating,
                    loading_pct: 0.0,
                };
            }
            let (i, j) = (index[br.from_bus.as_str()], index[br.to_bus.as_str()]);
            let vi = Complex::from_polar(v[i], th[i]);
            let vj = Complex::from_polar(v[j], th[j]);
            let ys = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
            let ysh = Complex::new(0.0, br.b_shunt / 2.0);
            let i_from = (vi - vj) * ys + vi * ysh;
            let i_to = (vj - vi) * ys + vj * ysh;
            let s_from = vi * i_from.conj() * base;
            let s_to = vj * i_to.conj() * base;
            let s_max = s_from.norm().max(s_to.norm());
            BranchFlow {
                id: br.id.clone(),
                p_from_mw: s_from.re,
                q_from_mvar: s_from.im,
                p_to_mw: s_to.re,
                q_to_mvar: s_to.im,
                s_max_mva: s_max,
                mva_rating: br.mva_rating,
                loading_pct: 100.0 * s_max / br.mva_rating,
            }
        })
        .collect();
    let slack_p_mw = (0..n)
        .filter(|&i| roles[i] == Role::Slack)
        .map(|i| p[i] * base)
        .sum();

    Ok(PowerFlowSolution {
        bus_ids: snap.buses.iter().map(|b| b.id.clone()).collect(),
        nominal_kv: snap.buses.iter().map(|b| b.nominal_kv).collect(),
        v_mag: v,
        v_ang: th,
        energized: roles.iter().map(|r| *r != Role::Dead).collect(),
        p_inj_mw: p.iter().map(|x| x * base).collect(),
        q_inj_mvar: q.iter().map(|x| x * base).collect(),
        branches,
        slack_p_mw,
        converged,
        iterations,
        max_mismatch,
        mismatch_history: history,
    })
}

/// Copy of `snap` with the contingency's outage applied. Slack buses are
/// re-designated in any island that lost its slack machine.
pub fn apply_contingency(snap: &Snapshot, c: &Contingency) -> Result<Snapshot, ContingencyError> {
    if c.elements.is_empty() {
        return Err(ContingencyError::Empty(c.id.clone()));
    }
    let mut out = snap.clone();
    for id in &c.elements {
        let mismatch = || ContingencyError::KindMismatch {
            id: id.clone(),
            kind: c.kind,
        };
        match c.kind {
            ContingencyKind::GenTrip => {
                let m = out
                    .machines
                    .iter_mut()
                    .find(|m| &m.id == id)
                    .ok_or_else(|| unknown_or_mismatch(snap, id, c.kind))?;
                if !m.online {
                    return Err(ContingencyError::AlreadyOut(id.clone()));
                }
                m.online = false;
            }
            ContingencyKind::IbrTrip | ContingencyKind::HvdcTrip => {
                let u = out
                    .ibr_units
                    .iter_mut()
                    .find(|u| &u.id == id)
                    .ok_or_else(|| unknown_or_mismatch(snap, id, c.kind))?;
                let is_hvdc = u.kind == IbrKind::Hvdc;
                if is_hvdc != (c.kind == ContingencyKind::HvdcTrip) {
                    return Err(mismatch());
                }
                if !u.online {
                    return Err(ContingencyError::AlreadyOut(id.clone()));
                }
                u.online = false;
            }
            ContingencyKind::LineTrip | ContingencyKind::SystemSplit => {
                let br = out
                    .branches
                    .iter_mut()
                    .find(|b| &b.id == id)
                    .ok_or_else(|| unknown_or_mismatch(snap, id, c.kind))?;
                if !br.in_service {
                    return Err(ContingencyError::AlreadyOut(id.clone()));
                }
                br.in_service = false;
            }
        }
    }
    normalize_slacks(&mut out);
    Ok(out)
}

fn unknown_or_mismatch(snap: &Snapshot, id: &str, kind: ContingencyKind) -> ContingencyError {
    let exists = snap.machines.iter().any(|m| m.id == id)
        || snap.ibr_units.iter().any(|u| u.id == id)
        || snap.branches.iter().any(|b| b.id == id)
        || snap.buses.iter().any(|b| b.id == id)
        || snap.loads.iter().any(|l| l.id == id);
    if exists {
        ContingencyError::KindMismatch {
            id: id.to_string(),
            kind,
        }
    } else {
        ContingencyError::UnknownElement(id.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageRange {
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRange {
    pub nominal_kv: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// Grid Code voltage ranges per voltage level and the thermal loading limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoltageCriteria {
    pub default_range: VoltageRange,
    pub levels: Vec<LevelRange>,
    pub thermal_pct: f64,
}

impl Default for VoltageCriteria {
    fn default() -> Self {
        Self {
            default_range: VoltageRange {
                v_min: 0.90,
                v_max: 1.10,
            },
            levels: Vec::new(),
            thermal_pct: 100.0,
        }
    }
}

impl VoltageCriteria {
    pub fn range_for(&self, nominal_kv: f64) -> VoltageRange {
        self.levels
            .iter()
            .find(|l| (l.nominal_kv - nominal_kv).abs() < 1e-6)
            .map(|l| VoltageRange {
                v_min: l.v_min,
                v_max: l.v_max,
            })
            .unwrap_or(self.default_range)
    }

    /// Ranges that nothing can violate.
    pub fn unbounded() -> Self {
        Self {
            default_range: VoltageRange {
                v_min: f64::NEG_INFINITY,
                v_max: f64::INFINITY,
            },
            levels: Vec::new(),
            thermal_pct: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OverVoltage,
    UnderVoltage,
    Thermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub kind: ViolationKind,
    /// pu for voltage, MVA for thermal.
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageAssessment {
    pub violations: Vec<Violation>,
    pub secure: bool,
}

pub fn assess_voltage(
    sol: &PowerFlowSolution,
    criteria: &VoltageCriteria,
) -> Result<VoltageAssessment, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    let mut violations = Vec::new();
    for i in 0..sol.bus_ids.len() {
        if !sol.energized[i] {
            continue;
        }
        let range = criteria.range_for(sol.nominal_kv[i]);
        let v = sol.v_mag[i];
        if v > range.v_max {
            violations.push(Violation {
                element: sol.bus_ids[i].clone(),
                kind: ViolationKind::OverVoltage,
                value: v,
                limit: range.v_max,
            });
        } else if v < range.v_min {
            violations.push(Violation {
                element: sol.bus_ids[i].clone(),
                kind: ViolationKind::UnderVoltage,
                value: v,
                limit: range.v_min,
            });
        }
    }
    for br in &sol.branches {
        if br.loading_pct > criteria.thermal_pct {
            violations.push(Violation {
                element: br.id.clone(),
                kind: ViolationKind::Thermal,
                value: br.s_max_mva,
                limit: br.mva_rating * criteria.thermal_pct / 100.0,
            });
        }
    }
    Ok(VoltageAssessment {
        secure: violations.is_empty(),
        violations,
    })
}
