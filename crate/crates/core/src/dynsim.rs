//! RMS time-domain simulation of contingencies.
//!
//! State per online machine: rotor angle (rad), speed expressed as frequency
//! (Hz) and mechanical power (MW). The swing equation is
//!
//! ```text
//! dδ/dt = 2π (f − f_nom)
//! (2 H S / f_nom) df/dt = P_m − P_e − D S (f − f_nom) / f_nom
//! T_gov dP_m/dt = clamp(P_ref + (f_nom − f) S / (R f_nom)) − P_m
//! ```
//!
//! Two couplings are available. `CoiUniform` lets every island share one
//! frequency and its demand. `DcNetwork` reduces the lossless network onto the
//! machine internal nodes and couples machines through `b_ij sin(δ_i − δ_j)`,
//! with bus injections distributed by the reduction factors.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{islands, Snapshot};
use crate::powerflow::{self, apply_contingency, ContingencyError, SolveOptions};
use crate::screener::Contingency;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initialisation failed: {0}")]
    Init(String),
    #[error("non-finite or divergent state at t = {time:.4} s: {detail}")]
    Numerical { time: f64, detail: String },
    #[error("no online machines")]
    NoMachines,
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Trapezoidal,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkModel {
    CoiUniform,
    DcNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub event_time: f64,
    pub integrator: Integrator,
    pub network_model: NetworkModel,
    /// Hold mechanical power at its initial value.
    pub freeze_governors: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            t_end: 10.0,
            event_time: 1.0,
            integrator: Integrator::Trapezoidal,
            network_model: NetworkModel::CoiUniform,
            freeze_governors: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(SimError::Config(format!("dt must be in (0, 0.01], got {}", self.dt)));
        }
        if !(self.t_end <= 60.0) {
            return Err(SimError::Config(format!("t_end must be at most 60 s, got {}", self.t_end)));
        }
        if !(self.event_time >= 0.0 && self.event_time < self.t_end) {
            return Err(SimError::Config(format!(
                "event_time {} must lie in [0, t_end)",
                self.event_time
            )));
        }
        Ok(())
    }

    fn steps(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub description: String,
}

/// Machines that remain synchronised together after the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandTrace {
    pub machines: Vec<usize>,
    pub f_coi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicResponse {
    pub nominal_hz: f64,
    pub event_time: f64,
    pub network_model: NetworkModel,
    pub time: Vec<f64>,
    pub machine_ids: Vec<String>,
    /// Kinetic energy per machine, MWs.
    pub kinetic_energy: Vec<f64>,
    /// Index of the first sample at which each machine is out of service.
    pub tripped_at: Vec<Option<usize>>,
    pub delta: Vec<Vec<f64>>,
    pub freq: Vec<Vec<f64>>,
    pub p_mech: Vec<Vec<f64>>,
    pub f_coi: Vec<f64>,
    pub islands: Vec<IslandTrace>,
    pub events: Vec<SimEvent>,
}

impl DynamicResponse {
    pub fn is_online(&self, machine: usize, sample: usize) -> bool {
        self.tripped_at[machine].map_or(true, |k| sample < k)
    }

    /// Writes `t,f_coi,f_<machine>...,delta_<machine>...`, one row per step.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = vec!["t".to_string(), "f_coi".to_string()];
        header.extend(self.machine_ids.iter().map(|m| format!("f_{m}")));
        header.extend(self.machine_ids.iter().map(|m| format!("delta_{m}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.time.len() {
            write!(out, "{},{}", self.time[k], self.f_coi[k])?;
            for f in &self.freq {
                write!(out, ",{}", f[k])?;
            }
            for d in &self.delta {
                write!(out, ",{}", d[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Inertia-weighted mean frequency of `machines`, skipping samples at which a
/// machine is out of service.
pub fn coi_frequency(resp: &DynamicResponse, machines: &[usize]) -> Result<Vec<f64>, SimError> {
    if machines.is_empty() {
        return Err(SimError::NoMachines);
    }
    let n = resp.time.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in machines {
            if resp.is_online(i, k) {
                num += resp.kinetic_energy[i] * resp.freq[i][k];
                den += resp.kinetic_energy[i];
            }
        }
        if den == 0.0 {
            return Err(SimError::NoMachines);
        }
        out.push(num / den);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Machine {
    id: String,
    bus: usize,
    e_k: f64,
    s_rated: f64,
    damping: f64,
    droop: f64,
    t_gov: f64,
    p_lo: f64,
    p_hi: f64,
    /// Internal reactance on system base, pu.
    x_sys: f64,
    p_m0: f64,
}

#[derive(Debug, Clone)]
struct IslandData {
    machines: Vec<usize>,
    load0: f64,
    load_sens: f64,
    ibr: f64,
    e_sum: f64,
}

#[derive(Debug, Clone)]
struct Coupling {
    /// Synchronising coefficients between machine internal nodes, MW,
    /// row-major `nm × nm`.
    b: Vec<f64>,
    nm: usize,
    /// Share of bus injections carried by each machine at nominal frequency, MW.
    k0: Vec<f64>,
    /// Sensitivity of that share to the island frequency deviation, MW/Hz.
    ksens: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Topology {
    active: Vec<bool>,
    island_of: Vec<usize>,
    islands: Vec<IslandData>,
    coupling: Option<Coupling>,
}

struct BusData {
    load0: Vec<f64>,
    load_sens: Vec<f64>,
    ibr: Vec<f64>,
}

fn bus_data(snap: &Snapshot) -> BusData {
    let index = snap.bus_index();
    let n = snap.buses.len();
    let mut d = BusData {
        load0: vec![0.0; n],
        load_sens: vec![0.0; n],
        ibr: vec![0.0; n],
    };
    for l in &snap.loads {
        let i = index[l.bus.as_str()];
        d.load0[i] += l.p;
        d.load_sens[i] += l.p * l.freq_sensitivity;
    }
    for u in snap.ibr_units.iter().filter(|u| u.online) {
        d.ibr[index[u.bus.as_str()]] += u.p;
    }
    d
}

/// Prepared base case; runs any number of contingencies.
#[derive(Debug, Clone)]
pub struct Simulator {
    snap: Snapshot,
    cfg: SimConfig,
    machines: Vec<Machine>,
    base: Topology,
    delta0: Vec<f64>,
}

impl Simulator {
    pub fn new(snap: &Snapshot, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let pf = powerflow::solve(snap, &SolveOptions::default())
            .map_err(|e| SimError::Init(format!("base power flow: {e}")))?;
        if !pf.converged {
            return Err(SimError::Init(format!(
                "base power flow did not converge (mismatch {:.3e} pu)",
                pf.max_mismatch
            )));
        }

        let index = snap.bus_index();
        let mut machines: Vec<Machine> = snap
            .machines
            .iter()
            .filter(|m| m.online)
            .map(|m| Machine {
                id: m.id.clone(),
                bus: index[m.bus.as_str()],
                e_k: m.kinetic_energy(),
                s_rated: m.s_rated,
                damping: m.d,
                droop: m.droop_r,
                t_gov: m.t_gov,
                p_lo: m.p_min,
                p_hi: m.p_max,
                x_sys: m.xd_prime * snap.base_mva / m.s_rated,
                p_m0: m.p_set,
            })
            .collect();
        if machines.is_empty() {
            return Err(SimError::NoMachines);
        }

        // Lossless dispatch: one machine at each island's slack bus balances.
        let data = bus_data(snap);
        for island in islands(snap) {
            let members: Vec<usize> = (0..machines.len())
                .filter(|&k| island.contains(&machines[k].bus))
                .collect();
            if members.is_empty() {
                continue;
            }
            let slack = members
                .iter()
                .copied()
                .find(|&k| snap.buses[machines[k].bus].kind == crate::netmodel::BusKind::Slack)
                .unwrap_or(members[0]);
            let demand: f64 = island.iter().map(|&b| data.load0[b] - data.ibr[b]).sum();
            let others: f64 = members
                .iter()
                .filter(|&&k| k != slack)
                .map(|&k| machines[k].p_m0)
                .sum();
            machines[slack].p_m0 = demand - others;
        }
        for m in &mut machines {
            m.p_lo = m.p_lo.min(m.p_m0);
            m.p_hi = m.p_hi.max(m.p_m0);
        }

        let active = vec![true; machines.len()];
        let base = topology(snap, &machines, &active, None, cfg.network_model)?;

        let mut delta0: Vec<f64> = machines.iter().map(|m| pf.v_ang[m.bus]).collect();
        if let Some(coupling) = &base.coupling {
            delta0 = equilibrium_angles(&machines, &base, coupling)?;
        }

        Ok(Self {
            snap: snap.clone(),
            cfg: cfg.clone(),
            machines,
            base,
            delta0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn machine_ids(&self) -> Vec<String> {
        self.machines.iter().map(|m| m.id.clone()).collect()
    }

    /// Simulate `contingency` (or no event) applied at the configured event time.
    pub fn run(&self, contingency: Option<&Contingency>) -> Result<DynamicResponse, SimError> {
        let cfg = &self.cfg;
        let n_steps = cfg.steps(cfg.t_end);
        let event_step = cfg.steps(cfg.event_time);
        let mut segments: Vec<(usize, Topology)> = vec![(0, self.base.clone())];
        let mut events = Vec::new();

        if let Some(c) = contingency {
            let post = apply_contingency(&self.snap, c)?;
            let active: Vec<bool> = self
                .machines
                .iter()
                .map(|m| post.machines.iter().any(|g| g.id == m.id && g.online))
                .collect();
            let mut clear_step = event_step;
            if let Some(fault) = &c.fault {
                let index = self.snap.bus_index();
                let bus = *index.get(fault.bus.as_str()).ok_or_else(|| {
                    SimError::Contingency(ContingencyError::UnknownElement(fault.bus.clone()))
                })?;
                let faulted = topology(
                    &self.snap,
                    &self.machines,
                    &vec![true; self.machines.len()],
                    Some(bus),
                    cfg.network_model,
                )?;
                segments.push((event_step, faulted));
                events.push(SimEvent {
                    time: event_step as f64 * cfg.dt,
                    description: format!("three-phase fault at {}", fault.bus),
                });
                clear_step = cfg.steps(cfg.event_time + fault.duration_s).max(event_step);
            }
            let after = topology(&post, &self.machines, &active, None, cfg.network_model)?;
            segments.push((clear_step, after));
            events.push(SimEvent {
                time: clear_step as f64 * cfg.dt,
                description: format!("{} ({:?}: {})", c.id, c.kind, c.elements.join(", ")),
            });
        }

        let nm = self.machines.len();
        let mut x = vec![0.0; 3 * nm];
        for (i, m) in self.machines.iter().enumerate() {
            x[i] = self.delta0[i];
            x[nm + i] = self.snap.nominal_hz;
            x[2 * nm + i] = m.p_m0;
        }

        let mut delta = vec![Vec::with_capacity(n_steps + 1); nm];
        let mut freq = vec![Vec::with_capacity(n_steps + 1); nm];
        let mut p_mech = vec![Vec::with_capacity(n_steps + 1); nm];
        let mut tripped_at = vec![None; nm];
        let record = |x: &[f64], delta: &mut Vec<Vec<f64>>, freq: &mut Vec<Vec<f64>>, p: &mut Vec<Vec<f64>>| {
            for i in 0..nm {
                delta[i].push(x[i]);
                freq[i].push(x[nm + i]);
                p[i].push(x[2 * nm + i]);
            }
        };
        record(&x, &mut delta, &mut freq, &mut p_mech);

        let mut seg = 0;
        let model = Model {
            machines: &self.machines,
            f_nom: self.snap.nominal_hz,
            governors: !cfg.freeze_governors,
        };
        let mut scratch = Scratch::new(nm);
        for k in 0..n_steps {
            while seg + 1 < segments.len() && segments[seg + 1].0 <= k {
                seg += 1;
                for i in 0..nm {
                    if !segments[seg].1.active[i] && tripped_at[i].is_none() {
                        tripped_at[i] = Some(k);
                    }
                }
            }
            let topo = &segments[seg].1;
            let t = k as f64 * cfg.dt;
            match cfg.integrator {
                Integrator::Rk4 => model.rk4_step(topo, &mut x, cfg.dt, &mut scratch),
                Integrator::Trapezoidal => model
                    .trapezoidal_step(topo, &mut x, cfg.dt, &mut scratch)
                    .map_err(|detail| SimError::Numerical { time: t, detail })?,
            }
            if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                return Err(SimError::Numerical {
                    time: t + cfg.dt,
                    detail: format!("state {} of machine {}", i / nm, self.machines[i % nm].id),
                });
            }
            record(&x, &mut delta, &mut freq, &mut p_mech);
        }

        let time: Vec<f64> = (0..=n_steps).map(|k| k as f64 * cfg.dt).collect();
        let mut resp = DynamicResponse {
            nominal_hz: self.snap.nominal_hz,
            event_time: event_step as f64 * cfg.dt,
            network_model: cfg.network_model,
            time,
            machine_ids: self.machine_ids(),
            kinetic_energy: self.machines.iter().map(|m| m.e_k).collect(),
            tripped_at,
            delta,
            freq,
            p_mech,
            f_coi: Vec::new(),
            islands: Vec::new(),
            events,
        };
        let all: Vec<usize> = (0..nm).collect();
        resp.f_coi = coi_frequency(&resp, &all)?;
        let last = &segments.last().expect("base segment").1;
        for island in &last.islands {
            resp.islands.push(IslandTrace {
                machines: island.machines.clone(),
                f_coi: coi_frequency(&resp, &island.machines)?,
            });
        }
        Ok(resp)
    }
}

/// Convenience wrapper: prepare the base case and run one contingency.
pub fn simulate(
    snap: &Snapshot,
    contingency: Option<&Contingency>,
    cfg: &SimConfig,
) -> Result<DynamicResponse, SimError> {
    Simulator::new(snap, cfg)?.run(contingency)
}

fn topology(
    snap: &Snapshot,
    machines: &[Machine],
    active: &[bool],
    grounded: Option<usize>,
    model: NetworkModel,
) -> Result<Topology, SimError> {
    let nm = machines.len();
    let data = bus_data(snap);
    let mut island_of = vec![usize::MAX; nm];
    let mut live_islands = Vec::new();
    let mut bus_island = vec![usize::MAX; snap.buses.len()];
    for buses in islands(snap) {
        let members: Vec<usize> = (0..nm)
            .filter(|&k| active[k] && buses.contains(&machines[k].bus))
            .collect();
        if members.is_empty() {
            continue;
        }
        let id = live_islands.len();
        for &k in &members {
            island_of[k] = id;
        }
        for &b in &buses {
            bus_island[b] = id;
        }
        live_islands.push(IslandData {
            e_sum: members.iter().map(|&k| machines[k].e_k).sum(),
            machines: members,
            load0: buses.iter().map(|&b| data.load0[b]).sum(),
            load_sens: buses.iter().map(|&b| data.load_sens[b]).sum(),
            ibr: buses.iter().map(|&b| data.ibr[b]).sum(),
        });
    }

    let coupling = match model {
        NetworkModel::CoiUniform => None,
        NetworkModel::DcNetwork => Some(reduce(snap, machines, active, &bus_island, grounded, &data)?),
    };
    Ok(Topology {
        active: active.to_vec(),
        island_of,
        islands: live_islands,
        coupling,
    })
}

/// Kron reduction of the lossless network onto machine internal nodes.
fn reduce(
    snap: &Snapshot,
    machines: &[Machine],
    active: &[bool],
    bus_island: &[usize],
    grounded: Option<usize>,
    data: &BusData,
) -> Result<Coupling, SimError> {
    let nm = machines.len();
    let index = snap.bus_index();
    // Bus unknowns: energised buses other than the grounded one.
    let mut col = vec![usize::MAX; snap.buses.len()];
    let mut buses = Vec::new();
    for (b, &isl) in bus_island.iter().enumerate() {
        if isl != usize::MAX && Some(b) != grounded {
            col[b] = buses.len();
            buses.push(b);
        }
    }
    let nb = buses.len();
    let mut bbb = DMatrix::<f64>::zeros(nb, nb);
    for br in snap.branches.iter().filter(|b| b.in_service) {
        let (i, j) = (index[br.from_bus.as_str()], index[br.to_bus.as_str()]);
        let y = 1.0 / br.x;
        if col[i] != usize::MAX {
            bbb[(col[i], col[i])] += y;
        }
        if col[j] != usize::MAX {
            bbb[(col[j], col[j])] += y;
        }
        if col[i] != usize::MAX && col[j] != usize::MAX {
            bbb[(col[i], col[j])] -= y;
            bbb[(col[j], col[i])] -= y;
        }
    }
    let mut bbm = DMatrix::<f64>::zeros(nb, nm);
    for (k, m) in machines.iter().enumerate().filter(|(k, _)| active[*k]) {
        let y = 1.0 / m.x_sys;
        if col[m.bus] != usize::MAX {
            bbb[(col[m.bus], col[m.bus])] += y;
            bbm[(col[m.bus], k)] = -y;
        }
    }
    let lu = bbb.lu();
    let x = lu
        .solve(&bbm)
        .ok_or_else(|| SimError::Init("singular network susceptance matrix".into()))?;
    // B_red = B_mm − B_bmᵀ X; only off-diagonals carry active power.
    let reduced = -(bbm.transpose() * &x);
    let mut b = vec![0.0; nm * nm];
    for i in 0..nm {
        for j in 0..nm {
            if i != j && active[i] && active[j] {
                b[i * nm + j] = -reduced[(i, j)] * snap.base_mva;
            }
        }
    }
    let inj0 = DVector::from_iterator(nb, buses.iter().map(|&bb| data.ibr[bb] - data.load0[bb]));
    let sens = DVector::from_iterator(nb, buses.iter().map(|&bb| -data.load_sens[bb]));
    let k0 = x.transpose() * inj0;
    let ksens = x.transpose() * sens;
    Ok(Coupling {
        b,
        nm,
        k0: k0.iter().copied().collect(),
        ksens: ksens.iter().copied().collect(),
    })
}

impl Coupling {
    fn b(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.nm + j]
    }
}

fn electrical_power(
    coupling: &Coupling,
    delta: &[f64],
    active: &[bool],
    trig: &mut [(f64, f64)],
    out: &mut [f64],
) {
    let nm = delta.len();
    for i in 0..nm {
        trig[i] = if active[i] { delta[i].sin_cos() } else { (0.0, 0.0) };
    }
    for i in 0..nm {
        if !active[i] {
            out[i] = 0.0;
            continue;
        }
        let row = &coupling.b[i * nm..(i + 1) * nm];
        let (mut bs, mut bc) = (0.0, 0.0);
        for (bij, &(sj, cj)) in row.iter().zip(trig.iter()) {
            bs += bij * sj;
            bc += bij * cj;
        }
        let (si, ci) = trig[i];
        out[i] = si * bc - ci * bs + coupling.k0[i];
    }
}

fn equilibrium_angles(
    machines: &[Machine],
    topo: &Topology,
    coupling: &Coupling,
) -> Result<Vec<f64>, SimError> {
    let nm = machines.len();
    // Reference: first machine of each island keeps angle zero.
    let refs: Vec<usize> = topo.islands.iter().map(|isl| isl.machines[0]).collect();
    let free: Vec<usize> = (0..nm).filter(|k| topo.active[*k] && !refs.contains(k)).collect();
    let mut delta = vec![0.0; nm];
    if free.is_empty() {
        return Ok(delta);
    }
    let nf = free.len();
    let target: Vec<f64> = machines.iter().map(|m| m.p_m0).collect();

    // Linearised start: Σ_j b_ij (δ_i − δ_j) = P_m0 − k0.
    let mut lin = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (r, &i) in free.iter().enumerate() {
        let mut diag = 0.0;
        for j in 0..nm {
            diag += coupling.b(i, j);
        }
        lin[(r, r)] = diag;
        for (c, &j) in free.iter().enumerate() {
            if c != r {
                lin[(r, c)] = -coupling.b(i, j);
            }
        }
        rhs[r] = target[i] - coupling.k0[i];
    }
    let start = lin
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SimError::Init("machine isolated from its island".into()))?;
    for (r, &i) in free.iter().enumerate() {
        delta[i] = start[r];
    }

    let mut pe = vec![0.0; nm];
    let mut trig = vec![(0.0, 0.0); nm];
    let scale = machines.iter().map(|m| m.p_m0.abs()).fold(1.0, f64::max);
    for _ in 0..50 {
        electrical_power(coupling, &delta, &topo.active, &mut trig, &mut pe);
        let f = DVector::from_iterator(nf, free.iter().map(|&i| pe[i] - target[i]));
        if f.amax() <= 1e-11 * scale {
            return Ok(delta);
        }
        let mut jac = DMatrix::zeros(nf, nf);
        for (r, &i) in free.iter().enumerate() {
            let mut diag = 0.0;
            for j in 0..nm {
                if j != i && topo.active[j] {
                    let v = coupling.b(i, j) * (delta[i] - delta[j]).cos();
                    diag += v;
                }
            }
            jac[(r, r)] = diag;
            for (c, &j) in free.iter().enumerate() {
                if c != r {
                    jac[(r, c)] = -coupling.b(i, j) * (delta[i] - delta[j]).cos();
                }
            }
        }
        let step = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| SimError::Init("singular equilibrium Jacobian".into()))?;
        for (r, &i) in free.iter().enumerate() {
            delta[i] -= step[r];
        }
    }
    Err(SimError::Init(
        "no steady-state rotor angles for the dispatch (transfer beyond stability limit)".into(),
    ))
}

struct Model<'a> {
    machines: &'a [Machine],
    f_nom: f64,
    governors: bool,
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    work: Work,
}

struct Work {
    pe: Vec<f64>,
    dev: Vec<f64>,
    trig: Vec<(f64, f64)>,
}

impl Scratch {
    fn new(nm: usize) -> Self {
        let v = vec![0.0; 3 * nm];
        Self {
            k1: v.clone(),
            k2: v.clone(),
            k3: v.clone(),
            k4: v.clone(),
            tmp: v,
            work: Work {
                pe: vec![0.0; nm],
                dev: vec![0.0; nm],
                trig: vec![(0.0, 0.0); nm],
            },
        }
    }
}

impl Model<'_> {
    fn rhs(&self, topo: &Topology, x: &[f64], dx: &mut [f64], work: &mut Work) {
        let Work { pe, dev: island_dev, trig } = work;
        let nm = self.machines.len();
        let f_nom = self.f_nom;
        let (delta, rest) = x.split_at(nm);
        let (freq, p_m) = rest.split_at(nm);
        dx.iter_mut().for_each(|v| *v = 0.0);

        for (id, isl) in topo.islands.iter().enumerate() {
            let num: f64 = isl.machines.iter().map(|&k| self.machines[k].e_k * freq[k]).sum();
            island_dev[id] = num / isl.e_sum - f_nom;
        }

        match &topo.coupling {
            None => {
                for (id, isl) in topo.islands.iter().enumerate() {
                    let df = island_dev[id];
                    let mut balance = -(isl.load0 + isl.load_sens * df - isl.ibr);
                    for &k in &isl.machines {
                        let m = &self.machines[k];
                        balance += p_m[k] - m.damping * m.s_rated * (freq[k] - f_nom) / f_nom;
                    }
                    let dfdt = f_nom * balance / (2.0 * isl.e_sum);
                    for &k in &isl.machines {
                        dx[nm + k] = dfdt;
                    }
                }
            }
            Some(coupling) => {
                electrical_power(coupling, delta, &topo.active, trig, pe);
                for k in 0..nm {
                    if !topo.active[k] {
                        continue;
                    }
                    let m = &self.machines[k];
                    let p_e = pe[k] + coupling.ksens[k] * island_dev[topo.island_of[k]];
                    let damp = m.damping * m.s_rated * (freq[k] - f_nom) / f_nom;
                    dx[nm + k] = f_nom * (p_m[k] - p_e - damp) / (2.0 * m.e_k);
                }
            }
        }

        for k in 0..nm {
            if !topo.active[k] {
                continue;
            }
            dx[k] = 2.0 * PI * (freq[k] - f_nom);
            if self.governors {
                let m = &self.machines[k];
                let target = (m.p_m0 + (f_nom - freq[k]) / (m.droop * f_nom) * m.s_rated)
                    .clamp(m.p_lo, m.p_hi);
                dx[2 * nm + k] = (target - p_m[k]) / m.t_gov;
            }
        }
    }

    fn clamp(&self, x: &mut [f64]) {
        let nm = self.machines.len();
        for (k, m) in self.machines.iter().enumerate() {
            let p = &mut x[2 * nm + k];
            *p = p.clamp(m.p_lo, m.p_hi);
        }
    }

    fn rk4_step(&self, topo: &Topology, x: &mut [f64], dt: f64, s: &mut Scratch) {
        let n = x.len();
        self.rhs(topo, x, &mut s.k1, &mut s.work);
        for i in 0..n {
            s.tmp[i] = x[i] + 0.5 * dt * s.k1[i];
        }
        self.rhs(topo, &s.tmp, &mut s.k2, &mut s.work);
        for i in 0..n {
            s.tmp[i] = x[i] + 0.5 * dt * s.k2[i];
        }
        self.rhs(topo, &s.tmp, &mut s.k3, &mut s.work);
        for i in 0..n {
            s.tmp[i] = x[i] + dt * s.k3[i];
        }
        self.rhs(topo, &s.tmp, &mut s.k4, &mut s.work);
        for i in 0..n {
            x[i] += dt / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
        }
        self.clamp(x);
    }

    /// Implicit trapezoidal rule solved by fixed-point iteration from an
    /// explicit Euler predictor.
    fn trapezoidal_step(
        &self,
        topo: &Topology,
        x: &mut [f64],
        dt: f64,
        s: &mut Scratch,
    ) -> Result<(), String> {
        let n = x.len();
        self.rhs(topo, x, &mut s.k1, &mut s.work);
        for i in 0..n {
            s.tmp[i] = x[i] + dt * s.k1[i];
        }
        self.clamp(&mut s.tmp);
        for _ in 0..100 {
            self.rhs(topo, &s.tmp, &mut s.k2, &mut s.work);
            let mut change: f64 = 0.0;
            for i in 0..n {
                let next = x[i] + 0.5 * dt * (s.k1[i] + s.k2[i]);
                change = change.max((next - s.tmp[i]).abs() / (1.0 + next.abs()));
                s.k3[i] = next;
            }
            std::mem::swap(&mut s.tmp, &mut s.k3);
            self.clamp(&mut s.tmp);
            if !change.is_finite() {
                return Err("non-finite trapezoidal iterate".into());
            }
            if change <= 1e-14 {
                x.copy_from_slice(&s.tmp);
                return Ok(());
            }
        }
        Err("trapezoidal corrector did not converge".into())
    }
}
