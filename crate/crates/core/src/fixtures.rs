//! Deterministic synthetic networks for tests, demos and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netmodel::{Branch, Bus, BusKind, IbrKind, IbrUnit, Load, Region, Snapshot, SyncMachine};

/// Incremental snapshot construction with sensible per-element defaults.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    snap: Snapshot,
}

impl NetworkBuilder {
    pub fn new(timestamp: i64) -> Self {
        Self {
            snap: Snapshot {
                timestamp,
                base_mva: 100.0,
                nominal_hz: 50.0,
                buses: Vec::new(),
                branches: Vec::new(),
                machines: Vec::new(),
                ibr_units: Vec::new(),
                loads: Vec::new(),
            },
        }
    }

    pub fn bus(mut self, id: &str, kind: BusKind, v_mag: f64, region: Region) -> Self {
        self.snap.buses.push(Bus {
            id: id.into(),
            nominal_kv: 220.0,
            kind,
            v_mag,
            v_ang: 0.0,
            region,
        });
        self
    }

    pub fn line(mut self, id: &str, from: &str, to: &str, r: f64, x: f64, rating: f64) -> Self {
        self.snap.branches.push(Branch {
            id: id.into(),
            from_bus: from.into(),
            to_bus: to.into(),
            r,
            x,
            b_shunt: 0.0,
            mva_rating: rating,
            in_service: true,
        });
        self
    }

    /// Machine with `p_min = 0`, `p_max = s_rated`, 5 % droop and 0.5 s governor.
    pub fn machine(mut self, id: &str, bus: &str, s_rated: f64, h: f64, p_set: f64) -> Self {
        self.snap.machines.push(SyncMachine {
            id: id.into(),
            bus: bus.into(),
            s_rated,
            h,
            d: 0.0,
            p_set,
            q_set: 0.0,
            p_max: s_rated,
            p_min: 0.0,
            droop_r: 0.05,
            t_gov: 0.5,
            online: true,
            is_large_unit: true,
            xd_prime: 0.3,
        });
        self
    }

    pub fn ibr(mut self, id: &str, bus: &str, kind: IbrKind, p: f64) -> Self {
        self.snap.ibr_units.push(IbrUnit {
            id: id.into(),
            bus: bus.into(),
            kind,
            p,
            q: 0.0,
            online: true,
        });
        self
    }

    pub fn load(mut self, id: &str, bus: &str, p: f64, q: f64) -> Self {
        self.snap.loads.push(Load {
            id: id.into(),
            bus: bus.into(),
            p,
            q,
            freq_sensitivity: 0.0,
        });
        self
    }

    /// Apply `f` to the most recently added machine.
    pub fn with_machine(mut self, f: impl FnOnce(&mut SyncMachine)) -> Self {
        f(self.snap.machines.last_mut().expect("a machine was added"));
        self
    }

    pub fn build(self) -> Snapshot {
        self.snap
    }
}

/// Slack bus with one machine, a line of x = 0.1 pu, and a load bus.
pub fn two_bus(load_mw: f64) -> Snapshot {
    NetworkBuilder::new(0)
        .bus("B1", BusKind::Slack, 1.0, Region::IE)
        .bus("B2", BusKind::Pq, 1.0, Region::IE)
        .line("L1", "B1", "B2", 0.0, 0.1, 500.0)
        .machine("G1", "B1", 500.0, 4.0, load_mw)
        .load("D1", "B2", load_mw, 0.0)
        .build()
}

/// `n` identical machines on a ring sharing `total_ek` MWs of kinetic energy,
/// with an HVDC import of `hvdc_mw` at the slack bus and demand split evenly.
pub fn ring_area(n: usize, total_ek: f64, hvdc_mw: f64) -> Snapshot {
    let h = 4.0;
    let s_rated = total_ek / (n as f64 * h);
    let p_each = 0.5 * s_rated;
    let demand = n as f64 * p_each + hvdc_mw;
    let mut b = NetworkBuilder::new(0);
    for i in 0..n {
        let kind = if i == 0 { BusKind::Slack } else { BusKind::Pv };
        b = b.bus(&format!("B{i}"), kind, 1.0, Region::IE);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        if n > 2 || i == 0 {
            b = b.line(&format!("L{i}_{j}"), &format!("B{i}"), &format!("B{j}"), 0.0, 0.01, 5000.0);
        }
    }
    for i in 0..n {
        b = b
            .machine(&format!("G{i}"), &format!("B{i}"), s_rated, h, p_each)
            .load(&format!("D{i}"), &format!("B{i}"), demand / n as f64, 0.0);
    }
    if hvdc_mw != 0.0 {
        b = b.ibr("HVDC1", "B0", IbrKind::Hvdc, hvdc_mw);
    }
    b.build()
}

/// Parameters of [`one_machine_vs_rest`] that an equal-area oracle needs.
#[derive(Debug, Clone, Copy)]
pub struct SmibParams {
    pub p_mech_mw: f64,
    pub s_rated: f64,
    pub h: f64,
    pub xd_prime: f64,
    pub x_line: f64,
    pub base_mva: f64,
}

impl Default for SmibParams {
    fn default() -> Self {
        Self {
            p_mech_mw: 250.0,
            s_rated: 500.0,
            h: 3.0,
            xd_prime: 0.3,
            x_line: 0.2,
            base_mva: 100.0,
        }
    }
}

/// One machine `G1` at bus `A` feeding a very large machine `GR` at bus `B`
/// over two parallel lines `L1`, `L2`. The load at `B` equals G1's output.
/// Faulting bus `A` and clearing by tripping `L2` is the classic first-swing
/// stability case.
pub fn one_machine_vs_rest(p: &SmibParams) -> Snapshot {
    NetworkBuilder::new(0)
        .bus("A", BusKind::Pv, 1.0, Region::IE)
        .bus("B", BusKind::Slack, 1.0, Region::IE)
        .line("L1", "A", "B", 0.0, p.x_line, 5000.0)
        .line("L2", "A", "B", 0.0, p.x_line, 5000.0)
        .machine("G1", "A", p.s_rated, p.h, p.p_mech_mw)
        .with_machine(|m| m.xd_prime = p.xd_prime)
        .machine("GR", "B", 1.0e6, 5.0, 0.0)
        .with_machine(|m| {
            m.xd_prime = 0.01;
            m.p_max = 1.0e6;
        })
        .load("D1", "B", p.p_mech_mw, 0.0)
        .build()
}

/// Configuration for [`synthetic_network`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub timestamp: i64,
    pub ie_buses: usize,
    pub ni_buses: usize,
    pub chords: usize,
    pub machines: usize,
    pub ibr_units: usize,
    pub demand_mw: f64,
    pub wind_mw: f64,
    pub hvdc_import_mw: f64,
}

impl Default for SyntheticSpec {
    /// 50 buses sized to yield about 800 N-1 contingencies.
    fn default() -> Self {
        Self {
            seed: 7,
            timestamp: 1_685_577_600,
            ie_buses: 38,
            ni_buses: 12,
            chords: 98,
            machines: 40,
            ibr_units: 598,
            demand_mw: 4500.0,
            wind_mw: 1800.0,
            hvdc_import_mw: 500.0,
        }
    }
}

/// Names of the two North-South tie circuits in [`synthetic_network`].
pub const TIE_BRANCHES: [&str; 2] = ["NS1", "NS2"];

/// Two-region meshed network: ring plus random chords per region, a double
/// circuit tie between the regions, machines on most buses, hundreds of small
/// wind farms and two HVDC interconnectors.
pub fn synthetic_network(spec: &SyntheticSpec) -> Snapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.ie_buses + spec.ni_buses;
    let bus_name = |i: usize| format!("B{i:02}");
    let region = |i: usize| if i < spec.ie_buses { Region::IE } else { Region::NI };

    let mut b = NetworkBuilder::new(spec.timestamp);
    // Machine placement: first `machines` buses after a shuffle, slack on B00.
    let mut order: Vec<usize> = (1..n).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut machine_buses: Vec<usize> = std::iter::once(0)
        .chain(order.into_iter().take(spec.machines.saturating_sub(1)))
        .collect();
    machine_buses.sort_unstable();
    let has_machine = |i: usize| machine_buses.binary_search(&i).is_ok();

    for i in 0..n {
        let kind = if i == 0 {
            BusKind::Slack
        } else if has_machine(i) {
            BusKind::Pv
        } else {
            BusKind::Pq
        };
        let v = if kind == BusKind::Pq { 1.0 } else { 1.02 };
        b = b.bus(&bus_name(i), kind, v, region(i));
    }

    let mut branch_id = 0;
    let mut add_line = |b: NetworkBuilder, from: usize, to: usize, rng: &mut ChaCha8Rng| {
        branch_id += 1;
        let x = rng.random_range(0.01..0.04);
        b.line(
            &format!("L{branch_id:03}"),
            &bus_name(from),
            &bus_name(to),
            x / 10.0,
            x,
            rng.random_range(600.0..900.0),
        )
    };
    for (start, len) in [(0, spec.ie_buses), (spec.ie_buses, spec.ni_buses)] {
        for k in 0..len {
            b = add_line(b, start + k, start + (k + 1) % len, &mut rng);
        }
    }
    for c in 0..spec.chords {
        // Mostly IE chords, in proportion to region size.
        let (start, len) = if c % 5 == 4 {
            (spec.ie_buses, spec.ni_buses)
        } else {
            (0, spec.ie_buses)
        };
        let from = start + rng.random_range(0..len);
        let mut to = start + rng.random_range(0..len);
        if to == from {
            to = start + (from - start + 1) % len;
        }
        b = add_line(b, from, to, &mut rng);
    }
    let tie_from = bus_name(5);
    let tie_to = bus_name(spec.ie_buses + 2);
    for id in TIE_BRANCHES {
        b = b.line(id, &tie_from, &tie_to, 0.002, 0.02, 900.0);
    }

    // Demand: spread over every bus.
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    for (i, w) in weights.iter().enumerate() {
        let p = spec.demand_mw * w / wsum;
        b = b.load(&format!("D{i:02}"), &bus_name(i), p, 0.2 * p);
    }

    // Wind farms, two of the IBR slots are HVDC links.
    let n_wind = spec.ibr_units.saturating_sub(2);
    let sizes: Vec<f64> = (0..n_wind).map(|_| rng.random_range(0.2..1.8)).collect();
    let ssum: f64 = sizes.iter().sum();
    for (k, s) in sizes.iter().enumerate() {
        let bus = rng.random_range(0..n);
        b = b.ibr(&format!("W{k:03}"), &bus_name(bus), IbrKind::Wind, spec.wind_mw * s / ssum);
    }
    b = b
        .ibr("HVDC_EW", &bus_name(3), IbrKind::Hvdc, 0.6 * spec.hvdc_import_mw)
        .ibr("HVDC_MO", &bus_name(spec.ie_buses + 4), IbrKind::Hvdc, 0.4 * spec.hvdc_import_mw);

    // Machines share the remaining demand in proportion to rating.
    let ratings: Vec<f64> = machine_buses.iter().map(|_| rng.random_range(100.0..300.0)).collect();
    let rsum: f64 = ratings.iter().sum();
    let residual = spec.demand_mw - spec.wind_mw - spec.hvdc_import_mw;
    for (k, (&bus, &s)) in machine_buses.iter().zip(&ratings).enumerate() {
        let h = rng.random_range(3.0..6.0);
        let p = residual * s / rsum;
        b = b
            .machine(&format!("G{k:02}"), &bus_name(bus), s, h, p)
            .with_machine(|m| {
                m.p_min = 0.1 * s;
                m.p_max = 0.95 * s;
                m.is_large_unit = s >= 200.0;
                m.d = 1.0;
            });
    }
    let mut snap = b.build();
    for l in &mut snap.loads {
        l.freq_sensitivity = 0.02;
    }
    snap
}


/// Configuration for [`low_inertia_area`].
#[derive(Debug, Clone, Copy)]
pub struct LowInertiaSpec {
    pub machines: usize,
    pub s_rated: f64,
    pub h: f64,
    pub p_each: f64,
    /// Wind is split evenly over farms `W1..Wn`.
    pub wind_farms: usize,
    pub wind_mw: f64,
    /// Signed; negative is an export.
    pub hvdc_mw: f64,
    /// Rating and inertia constant of an offline large unit `GSPARE`.
    pub spare: Option<(f64, f64)>,
}

impl Default for LowInertiaSpec {
    fn default() -> Self {
        Self {
            machines: 6,
            s_rated: 400.0,
            h: 5.0,
            p_each: 250.0,
            wind_farms: 4,
            wind_mw: 600.0,
            hvdc_mw: -560.0,
            spare: Some((400.0, 5.0)),
        }
    }
}

/// A small meshed area with few machines, some wind farms and an HVDC link
/// `HVDC_X`; loss of the link or of one machine stresses RoCoF.
pub fn low_inertia_area(spec: &LowInertiaSpec) -> Snapshot {
    let n = spec.machines + 2;
    let demand = spec.machines as f64 * spec.p_each + spec.wind_mw + spec.hvdc_mw;
    let mut b = NetworkBuilder::new(1_700_000_000);
    for i in 0..n {
        let kind = match i {
            0 => BusKind::Slack,
            i if i < spec.machines => BusKind::Pv,
            _ => BusKind::Pq,
        };
        b = b.bus(&format!("A{i}"), kind, 1.0, Region::IE);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        b = b.line(&format!("LA{i}"), &format!("A{i}"), &format!("A{j}"), 0.001, 0.01, 2000.0);
    }
    b = b.line("LX", "A0", &format!("A{}", n / 2), 0.001, 0.01, 2000.0);
    for i in 0..spec.machines {
        b = b.machine(&format!("G{i}"), &format!("A{i}"), spec.s_rated, spec.h, spec.p_each);
    }
    if let Some((s, h)) = spec.spare {
        b = b
            .machine("GSPARE", &format!("A{}", spec.machines), s, h, 0.0)
            .with_machine(|m| m.online = false);
    }
    for k in 1..=spec.wind_farms {
        let bus = format!("A{}", k % n);
        b = b.ibr(&format!("W{k}"), &bus, IbrKind::Wind, spec.wind_mw / spec.wind_farms as f64);
    }
    b = b.ibr("HVDC_X", &format!("A{}", spec.machines + 1), IbrKind::Hvdc, spec.hvdc_mw);
    for i in 0..n {
        b = b.load(&format!("DA{i}"), &format!("A{i}"), demand / n as f64, 0.1 * demand / n as f64);
    }
    b.build()
}

/// Low-inertia area where the trip of `G1` (286.5 MW) alone gives a windowed
/// RoCoF near −0.95 Hz/s; every other contingency is secure.
pub fn rocof_minus_area() -> Snapshot {
    let mut snap = low_inertia_area(&LowInertiaSpec {
        h: 3.0,
        hvdc_mw: 0.0,
        wind_mw: 300.0,
        spare: None,
        ..LowInertiaSpec::default()
    });
    snap.machines[1].p_set = 286.5;
    snap.machines[2].p_set = 213.5;
    snap
}

/// Low-inertia area exporting 560 MW over `HVDC_X`; losing the export breaks
/// the RoCoF+ limit. Committing `GSPARE` in place of 300 MW of wind cures it.
pub fn rocof_plus_area() -> Snapshot {
    low_inertia_area(&LowInertiaSpec::default())
}

/// Area at 78 % SNSP: six 110 MW machines beside 2340 MW of wind, no HVDC.
/// Breaks the 2023 SNSP cap but not the 2030 one.
pub fn high_snsp_area() -> Snapshot {
    low_inertia_area(&LowInertiaSpec {
        p_each: 110.0,
        wind_mw: 2_340.0,
        hvdc_mw: 0.0,
        spare: None,
        ..LowInertiaSpec::default()
    })
}

/// Archive contents with planted outcomes, built without running any
/// simulation.
pub mod planted {
    use std::collections::{BTreeMap, BTreeSet};

    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::criteria::{Binding, SecurityLimits, SecurityMetrics};
    use crate::netmodel::{Region, SystemMetrics};
    use crate::screener::{CaseResult, CaseStatus, ContingencyKind, CycleReport, CycleStatus, Totals};

    pub const BASE_TS: i64 = 1_700_000_000;
    pub const PERIOD_S: i64 = 300;

    pub fn metrics(inertia_mws: f64, demand_mw: f64, wind_mw: f64) -> SystemMetrics {
        SystemMetrics {
            inertia_mws,
            demand_mw,
            wind_mw,
            solar_mw: 0.0,
            snsp_pct: 100.0 * wind_mw / demand_mw,
            snsp_over_100: wind_mw > demand_mw,
            muon_count: 8,
            muon_by_region: BTreeMap::from([(Region::IE, 6), (Region::NI, 2)]),
            net_interchange_mw: 0.0,
        }
    }

    fn case(i: usize, binding: BTreeSet<Binding>) -> CaseResult {
        let insecure = !binding.is_empty();
        CaseResult {
            id: format!("line:C{i:04}"),
            kind: ContingencyKind::LineTrip,
            status: if insecure {
                CaseStatus::Insecure
            } else {
                CaseStatus::Secure
            },
            metrics: Some(SecurityMetrics {
                rocof_max: if binding.contains(&Binding::RocofPlus) { 1.2 } else { 0.1 },
                rocof_min: if binding.contains(&Binding::RocofMinus) { -1.2 } else { -0.1 },
                nadir: if binding.contains(&Binding::Nadir) { 48.8 } else { 49.9 },
                zenith: if binding.contains(&Binding::Zenith) { 51.0 } else { 50.1 },
                angle_margin: Some(if binding.contains(&Binding::RotorAngle) { -0.2 } else { 0.6 }),
                voltage_secure: !binding.contains(&Binding::Voltage),
                binding,
            }),
            angle_separation_deg: None,
            machine_f_min: None,
            machine_f_max: None,
            violations: Vec::new(),
            failure: None,
            wall_time_s: 0.0,
        }
    }

    pub fn report(ts: i64, m: SystemMetrics, bindings: Vec<BTreeSet<Binding>>) -> CycleReport {
        let cases: Vec<CaseResult> = bindings.into_iter().enumerate().map(|(i, b)| case(i, b)).collect();
        CycleReport {
            snapshot_ts: ts,
            system_metrics: Some(m),
            policy: None,
            totals: Totals::of(&cases),
            cases,
            wall_time_s: 0.0,
            budget_s: 300.0,
            over_budget: false,
            status: CycleStatus::Complete,
            failure: None,
            limits: SecurityLimits::default(),
            ephemeral: false,
            provenance: None,
        }
    }

    /// `total_cases` cases spread over cycles of `cases_per_cycle`, with
    /// exactly `n` cases binding each listed flag and every insecure case
    /// binding exactly one flag.
    pub fn counted_archive(
        total_cases: usize,
        counts: &[(Binding, usize)],
        cases_per_cycle: usize,
        seed: u64,
    ) -> Vec<CycleReport> {
        let mut flags: Vec<BTreeSet<Binding>> = counts
            .iter()
            .flat_map(|&(b, n)| std::iter::repeat_n(BTreeSet::from([b]), n))
            .collect();
        assert!(flags.len() <= total_cases, "more bindings than cases");
        flags.resize(total_cases, BTreeSet::new());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        flags.shuffle(&mut rng);
        flags
            .chunks(cases_per_cycle.max(1))
            .enumerate()
            .map(|(k, chunk)| {
                let m = metrics(
                    rng.random_range(18_000.0..40_000.0),
                    rng.random_range(3_000.0..6_500.0),
                    rng.random_range(0.0..4_500.0),
                );
                report(BASE_TS + PERIOD_S * k as i64, m, chunk.to_vec())
            })
            .collect()
    }

    /// A flag set when `weights · z(inertia, demand, wind) + noise` exceeds
    /// `threshold`, with `z` the standardized operating conditions and the
    /// noise uniform on `[-noise, noise]`.
    #[derive(Debug, Clone, Copy)]
    pub struct Rule {
        pub flag: Binding,
        pub weights: [f64; 3],
        pub threshold: f64,
        pub noise: f64,
    }

    pub const INERTIA_RANGE: (f64, f64) = (18_000.0, 40_000.0);
    pub const DEMAND_RANGE: (f64, f64) = (3_000.0, 6_500.0);
    pub const WIND_RANGE: (f64, f64) = (0.0, 4_500.0);

    fn z(v: f64, (lo, hi): (f64, f64)) -> f64 {
        (v - 0.5 * (lo + hi)) / ((hi - lo) / 12f64.sqrt())
    }

    /// Operating conditions drawn independently and uniformly; each case's
    /// flags follow `rules`.
    pub fn ruled_archive(n_cycles: usize, cases_per_cycle: usize, rules: &[Rule], seed: u64) -> Vec<CycleReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_cycles)
            .map(|k| {
                let inertia = rng.random_range(INERTIA_RANGE.0..INERTIA_RANGE.1);
                let demand = rng.random_range(DEMAND_RANGE.0..DEMAND_RANGE.1);
                let wind = rng.random_range(WIND_RANGE.0..WIND_RANGE.1);
                let zs = [z(inertia, INERTIA_RANGE), z(demand, DEMAND_RANGE), z(wind, WIND_RANGE)];
                let bindings = (0..cases_per_cycle)
                    .map(|_| {
                        rules
                            .iter()
                            .filter(|r| {
                                let s: f64 = r.weights.iter().zip(&zs).map(|(w, z)| w * z).sum();
                                s + r.noise * rng.random_range(-1.0..1.0) > r.threshold
                            })
                            .map(|r| r.flag)
                            .collect()
                    })
                    .collect();
                report(BASE_TS + PERIOD_S * k as i64, metrics(inertia, demand, wind), bindings)
            })
            .collect()
    }

    /// Rules with the directions seen in operation: over-frequency flags at
    /// low inertia, low demand and high wind; under-frequency flags the
    /// reverse.
    pub fn directional_rules() -> Vec<Rule> {
        let up = [-1.0, -1.0, 1.0];
        let down = [1.0, 1.0, -1.0];
        let rule = |flag, weights| Rule {
            flag,
            weights,
            threshold: 1.5,
            noise: 1.0,
        };
        vec![
            rule(Binding::RocofPlus, up),
            rule(Binding::Zenith, up),
            rule(Binding::RocofMinus, down),
            rule(Binding::Nadir, down),
        ]
    }
}
