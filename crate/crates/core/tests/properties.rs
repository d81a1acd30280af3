use std::collections::BTreeSet;

use nalgebra::Complex;
use proptest::prelude::*;

use gridsa_core::analytics::{point_biserial, summarize, CaseArchive, Unit, Window};
use gridsa_core::criteria::{classify, margin_from_separation, rocof, Binding, MetricInputs, SecurityLimits};
use gridsa_core::fixtures::{planted, NetworkBuilder};
use gridsa_core::netmodel::{
    apply_modifications, load_snapshot, system_metrics, BusKind, IbrKind, Modification, Region, Snapshot,
};
use gridsa_core::policy::{builtin_profile, check};
use gridsa_core::powerflow::{assess_voltage, solve, SolveOptions, VoltageCriteria};

// ---------------------------------------------------------------- networks

#[derive(Debug, Clone)]
struct SmallNet {
    n: usize,
    lines: Vec<(usize, usize, f64, f64, f64)>,
    loads: Vec<(f64, f64)>,
    pv: Option<(f64, f64)>,
    wind: Vec<f64>,
}

fn small_net() -> impl Strategy<Value = SmallNet> {
    (2usize..=4).prop_flat_map(|n| {
        let line = (0.0..0.03f64, 0.05..0.25f64, 0.0..0.05f64);
        (
            prop::collection::vec(line.clone(), n - 1),
            prop::option::of((0..n, 0..n, line)),
            prop::collection::vec((0.0..60.0f64, -10.0..25.0f64), n - 1),
            prop::option::of((0.0..50.0f64, 0.98..1.05f64)),
            prop::collection::vec(0.0..40.0f64, n - 1),
        )
            .prop_map(move |(chain, extra, loads, pv, wind)| {
                let mut lines: Vec<_> = chain
                    .into_iter()
                    .enumerate()
                    .map(|(i, (r, x, b))| (i, i + 1, r, x, b))
                    .collect();
                if let Some((a, c, (r, x, b))) = extra {
                    if a != c {
                        lines.push((a, c, r, x, b));
                    }
                }
                SmallNet {
                    n,
                    lines,
                    loads,
                    pv: if n > 2 { pv } else { None },
                    wind,
                }
            })
    })
}

fn build(net: &SmallNet) -> Snapshot {
    let mut b = NetworkBuilder::new(1_000).bus("B0", BusKind::Slack, 1.02, Region::IE);
    for i in 1..net.n {
        let kind = if i == net.n - 1 && net.pv.is_some() { BusKind::Pv } else { BusKind::Pq };
        let v = net.pv.filter(|_| kind == BusKind::Pv).map_or(1.0, |p| p.1);
        b = b.bus(&format!("B{i}"), kind, v, Region::IE);
    }
    for (k, &(i, j, r, x, _)) in net.lines.iter().enumerate() {
        b = b.line(&format!("L{k}"), &format!("B{i}"), &format!("B{j}"), r, x, 1000.0);
    }
    b = b.machine("G0", "B0", 1000.0, 5.0, 100.0);
    if let Some((p, _)) = net.pv {
        b = b.machine("GPV", &format!("B{}", net.n - 1), 200.0, 4.0, p);
    }
    for (i, &(p, q)) in net.loads.iter().enumerate() {
        b = b.load(&format!("D{}", i + 1), &format!("B{}", i + 1), p, q);
    }
    for (i, &w) in net.wind.iter().enumerate() {
        b = b.ibr(&format!("W{}", i + 1), &format!("B{}", i + 1), IbrKind::Wind, w);
    }
    let mut snap = b.build();
    for (br, l) in snap.branches.iter_mut().zip(&net.lines) {
        br.b_shunt = l.4;
    }
    snap
}

/// Gauss-Seidel load flow in complex arithmetic, iterated to a fixed point.
fn gauss_seidel(net: &SmallNet, snap: &Snapshot) -> Option<Vec<Complex<f64>>> {
    let n = net.n;
    let mut y = vec![vec![Complex::new(0.0, 0.0); n]; n];
    for &(i, j, r, x, b) in &net.lines {
        let ys = Complex::new(1.0, 0.0) / Complex::new(r, x);
        y[i][i] += ys + Complex::new(0.0, b / 2.0);
        y[j][j] += ys + Complex::new(0.0, b / 2.0);
        y[i][j] -= ys;
        y[j][i] -= ys;
    }
    let base = snap.base_mva;
    let mut s = vec![Complex::new(0.0, 0.0); n];
    for (i, &(p, q)) in net.loads.iter().enumerate() {
        s[i + 1] -= Complex::new(p, q) / base;
    }
    for (i, &w) in net.wind.iter().enumerate() {
        s[i + 1] += Complex::new(w, 0.0) / base;
    }
    let pv_bus = net.pv.map(|(p, v)| {
        s[n - 1] += Complex::new(p / base, 0.0);
        (n - 1, v)
    });
    let mut v: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(if i == 0 { 1.02 } else { 1.0 }, 0.0)).collect();
    if let Some((k, vm)) = pv_bus {
        v[k] = Complex::new(vm, 0.0);
    }
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for i in 1..n {
            let sum: Complex<f64> = (0..n).filter(|&j| j != i).map(|j| y[i][j] * v[j]).sum();
            let mut si = s[i];
            if pv_bus.map(|p| p.0) == Some(i) {
                let q = -(v[i].conj() * (sum + y[i][i] * v[i])).im;
                si = Complex::new(s[i].re, q);
            }
            let mut vi = (si.conj() / v[i].conj() - sum) / y[i][i];
            if let Some((k, vm)) = pv_bus {
                if k == i {
                    vi = vi * (vm / vi.norm());
                }
            }
            change = change.max((vi - v[i]).norm());
            v[i] = vi;
        }
        if change < 1e-14 {
            return Some(v);
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newton_matches_gauss_seidel_on_small_networks(net in small_net()) {
        let snap = build(&net);
        let oracle = gauss_seidel(&net, &snap);
        prop_assume!(oracle.is_some());
        let oracle = oracle.unwrap();
        let sol = solve(&snap, &SolveOptions { flat_start: true, ..SolveOptions::default() }).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.max_mismatch <= 1e-8);
        for i in 0..net.n {
            prop_assert!((sol.v_mag[i] - oracle[i].norm()).abs() < 1e-6, "bus {} |V| {} vs {}", i, sol.v_mag[i], oracle[i].norm());
            prop_assert!((sol.v_ang[i] - oracle[i].arg()).abs() < 1e-6, "bus {} angle {} vs {}", i, sol.v_ang[i], oracle[i].arg());
        }
    }

    #[test]
    fn injections_balance_losses(net in small_net()) {
        let snap = build(&net);
        let sol = solve(&snap, &SolveOptions::default()).unwrap();
        prop_assume!(sol.converged);
        let injected: f64 = sol.p_inj_mw.iter().sum();
        prop_assert!((injected - sol.losses_mw()).abs() < 1e-6, "{} vs {}", injected, sol.losses_mw());
        prop_assert!(sol.losses_mw() >= -1e-9);
    }

    #[test]
    fn unbounded_criteria_are_always_secure(net in small_net()) {
        let sol = solve(&build(&net), &SolveOptions::default()).unwrap();
        prop_assume!(sol.converged);
        let a = assess_voltage(&sol, &VoltageCriteria::unbounded()).unwrap();
        prop_assert!(a.secure && a.violations.is_empty());
    }

    // ------------------------------------------------------------ netmodel

    #[test]
    fn snapshot_json_round_trip(net in small_net()) {
        let snap = build(&net);
        let back = load_snapshot(snap.to_json().as_bytes()).unwrap();
        prop_assert_eq!(back, snap);
    }

    #[test]
    fn inertia_ignores_dispatch(net in small_net(), p in 0.0..1000.0f64) {
        let snap = build(&net);
        let before = system_metrics(&snap).unwrap();
        let mods = [Modification::SetMachineDispatch { machine: "G0".into(), p_set: p }];
        let after = system_metrics(&apply_modifications(&snap, &mods).unwrap()).unwrap();
        prop_assert_eq!(before.inertia_mws, after.inertia_mws);
        prop_assert_eq!(before.muon_count, after.muon_count);
    }

    #[test]
    fn snsp_grows_with_wind(net in small_net(), a in 0.0..40.0f64, extra in 0.0..40.0f64) {
        let snap = build(&net);
        let set = |p: f64| apply_modifications(&snap, &[Modification::SetIbrOutput { unit: "W1".into(), p }]).unwrap();
        let lo = system_metrics(&set(a)).unwrap();
        let hi = system_metrics(&set(a + extra)).unwrap();
        prop_assert!(hi.snsp_pct >= lo.snsp_pct);
    }

    #[test]
    fn modifications_leave_the_input_untouched(net in small_net(), p in 0.0..500.0f64, w in 0.0..40.0f64) {
        let snap = build(&net);
        let copy = snap.clone();
        let mods = [
            Modification::SetMachineDispatch { machine: "G0".into(), p_set: p },
            Modification::SetIbrOutput { unit: "W1".into(), p: w },
            Modification::SetLoad { load: "D1".into(), p: 10.0 },
        ];
        let out = apply_modifications(&snap, &mods).unwrap();
        prop_assert_eq!(&snap, &copy);
        prop_assert_eq!(out.machines[0].p_set, p);
    }
}

// ---------------------------------------------------------------- criteria

fn trace() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec(-0.02..0.02f64, 120..400).prop_map(|steps| {
        let dt = 0.01;
        let mut f = 50.0;
        let mut t = Vec::with_capacity(steps.len());
        let mut out = Vec::with_capacity(steps.len());
        for (k, s) in steps.iter().enumerate() {
            t.push(k as f64 * dt);
            if k > 0 {
                f += s;
            }
            out.push(f);
        }
        (t, out)
    })
}

fn inputs() -> impl Strategy<Value = MetricInputs> {
    (
        0.0..2.0f64,
        -2.0..0.0f64,
        48.0..50.0f64,
        50.0..52.0f64,
        prop::option::of(-1.0..1.0f64),
        any::<bool>(),
    )
        .prop_map(|(rocof_max, rocof_min, nadir, zenith, angle_margin, voltage_secure)| MetricInputs {
            rocof_max,
            rocof_min,
            nadir,
            zenith,
            angle_margin,
            voltage_secure,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rocof_is_odd_under_reflection((t, f) in trace()) {
        let (max, min) = rocof(&t, &f, 0.5, 0.1, 0.3).unwrap();
        let mirrored: Vec<f64> = f.iter().map(|v| 100.0 - v).collect();
        let (mmax, mmin) = rocof(&t, &mirrored, 0.5, 0.1, 0.3).unwrap();
        prop_assert!((mmax + min).abs() < 1e-9 && (mmin + max).abs() < 1e-9);
    }

    #[test]
    fn windowed_rocof_is_bounded_by_step_slopes((t, f) in trace()) {
        let (max, min) = rocof(&t, &f, 0.5, 0.1, 0.3).unwrap();
        let slopes: Vec<f64> = t.windows(2).zip(f.windows(2)).map(|(a, b)| (b[1] - b[0]) / (a[1] - a[0])).collect();
        let hi = slopes.iter().copied().fold(f64::MIN, f64::max);
        let lo = slopes.iter().copied().fold(f64::MAX, f64::min);
        prop_assert!(max <= hi + 1e-9 && min >= lo - 1e-9 && min <= max);
    }

    #[test]
    fn worse_metrics_never_bind_fewer_constraints(m in inputs(), d in (0.0..0.5f64, 0.0..0.5f64, 0.0..0.5f64, 0.0..0.5f64, 0.0..0.5f64, any::<bool>())) {
        let limits = SecurityLimits::default();
        let worse = MetricInputs {
            rocof_max: m.rocof_max + d.0,
            rocof_min: m.rocof_min - d.1,
            nadir: m.nadir - d.2,
            zenith: m.zenith + d.3,
            angle_margin: m.angle_margin.map(|a| a - d.4),
            voltage_secure: m.voltage_secure && d.5,
        };
        let a = classify(&m, &limits).binding;
        let b = classify(&worse, &limits).binding;
        prop_assert!(a.is_subset(&b), "{:?} vs {:?}", a, b);
    }

    #[test]
    fn limits_are_inclusive_and_one_ulp_beyond_binds(rl in 0.1..2.0f64, nl in 47.0..49.9f64, zl in 50.1..53.0f64) {
        let limits = SecurityLimits { rocof_limit: rl, nadir_limit: nl, zenith_limit: zl, ..SecurityLimits::default() };
        let at = MetricInputs {
            rocof_max: rl,
            rocof_min: -rl,
            nadir: nl,
            zenith: zl,
            angle_margin: Some(0.0),
            voltage_secure: true,
        };
        prop_assert!(classify(&at, &limits).binding.is_empty());
        let cases = [
            (MetricInputs { rocof_max: rl.next_up(), ..at.clone() }, Binding::RocofPlus),
            (MetricInputs { rocof_min: (-rl).next_down(), ..at.clone() }, Binding::RocofMinus),
            (MetricInputs { nadir: nl.next_down(), ..at.clone() }, Binding::Nadir),
            (MetricInputs { zenith: zl.next_up(), ..at.clone() }, Binding::Zenith),
            (MetricInputs { angle_margin: Some((0.0f64).next_down()), ..at.clone() }, Binding::RotorAngle),
        ];
        for (m, expect) in cases {
            prop_assert_eq!(classify(&m, &limits).binding, BTreeSet::from([expect]));
        }
    }

    #[test]
    fn angle_margin_depends_on_separation_only(theta in 1.0..360.0f64, d in 0.0..720.0f64, shift in -1000.0..1000.0f64) {
        let a = margin_from_separation(theta, d);
        let b = margin_from_separation(theta, (d + shift) - shift);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a > -1.0 && a <= 1.0);
        prop_assert_eq!(a > 0.0, d < theta);
        prop_assert!(margin_from_separation(theta, d + 1.0) < a);
    }

    // -------------------------------------------------------------- policy

    #[test]
    fn policy_compliance_is_monotone(snsp in 0.0..120.0f64, inertia in 10_000.0..40_000.0f64, muon in 0u32..12, ds in 0.0..20.0f64, di in 0.0..5000.0f64, dm in 0u32..4) {
        let better = planted_metrics(snsp, inertia, muon);
        let worse = planted_metrics(snsp + ds, inertia - di, muon.saturating_sub(dm));
        for profile in ["2023", "2030"] {
            let l = builtin_profile(profile).unwrap();
            prop_assert!(!check(&worse, &l, None).compliant || check(&better, &l, None).compliant);
        }
        let strict = check(&better, &builtin_profile("2023").unwrap(), None).compliant;
        let relaxed = check(&better, &builtin_profile("2030").unwrap(), None).compliant;
        prop_assert!(!strict || relaxed);
    }

    // ----------------------------------------------------------- analytics

    #[test]
    fn summary_ignores_case_order(seed in any::<u64>(), rot in 0usize..10) {
        let reports = planted::ruled_archive(12, 10, &planted::directional_rules(), seed);
        let mut a = CaseArchive::in_memory();
        let mut b = CaseArchive::in_memory();
        for r in &reports {
            a.append(r.clone(), None).unwrap();
            let mut s = r.clone();
            s.cases.rotate_left(rot);
            s.cases.reverse();
            b.append(s, None).unwrap();
        }
        for unit in [Unit::CycleCase, Unit::Cycle] {
            prop_assert_eq!(summarize(&a, Window::all(), unit), summarize(&b, Window::all(), unit));
        }
    }

    #[test]
    fn correlation_is_affine_invariant(x in prop::collection::vec(-100.0..100.0f64, 8..60), seed in any::<u64>(), scale in 0.1..10.0f64, offset in -1e3..1e3f64) {
        let flag: Vec<bool> = x.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
        let base = point_biserial(&x, &flag);
        prop_assume!(base.is_ok());
        let (r, _, _) = base.unwrap();
        let up: Vec<f64> = x.iter().map(|v| scale * v + offset).collect();
        let down: Vec<f64> = x.iter().map(|v| -scale * v + offset).collect();
        prop_assert!((point_biserial(&up, &flag).unwrap().0 - r).abs() < 1e-9);
        prop_assert!((point_biserial(&down, &flag).unwrap().0 + r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0 + 1e-12);
    }
}

fn planted_metrics(snsp: f64, inertia: f64, muon: u32) -> gridsa_core::netmodel::SystemMetrics {
    let mut m = planted::metrics(inertia, 4000.0, 0.0);
    m.snsp_pct = snsp;
    m.muon_count = muon;
    m
}

#[test]
fn cycle_without_cases_summarizes_to_zeros() {
    let mut a = CaseArchive::in_memory();
    a.append(planted::report(1, planted::metrics(20_000.0, 4_000.0, 0.0), Vec::new()), None)
        .unwrap();
    let t = summarize(&a, Window::all(), Unit::CycleCase).unwrap();
    assert_eq!(t.totals.all_cases, 0);
    assert!(t.rows.iter().all(|r| r.pct_of_all_cases == 0.0 && r.comparative_pct == 0.0));
}
