use std::collections::BTreeSet;

use gridsa_core::analytics::{
    correlate, scatter_export, summarize, AnalyticsError, ArchiveError, CaseArchive, Constraint, CrashPoint, Unit,
    Variable, Window,
};
use gridsa_core::criteria::Binding;
use gridsa_core::fixtures::{planted, ring_area};

fn archive_of(reports: Vec<gridsa_core::screener::CycleReport>) -> CaseArchive {
    let mut a = CaseArchive::in_memory();
    for r in reports {
        a.append(r, None).unwrap();
    }
    a
}

fn month_counts() -> Vec<(Binding, usize)> {
    vec![
        (Binding::RotorAngle, 67),
        (Binding::Voltage, 160),
        (Binding::RocofPlus, 70),
        (Binding::RocofMinus, 46),
        (Binding::Zenith, 49),
        (Binding::Nadir, 26),
    ]
}

#[test]
fn summary_of_counted_archive() {
    let a = archive_of(planted::counted_archive(8594, &month_counts(), 10, 7));
    let t = summarize(&a, Window::all(), Unit::CycleCase).unwrap();
    let got: Vec<(Constraint, u64, f64, f64)> = t
        .rows
        .iter()
        .map(|r| (r.constraint, r.total_binding_cases, r.pct_of_all_cases, r.comparative_pct))
        .collect();
    assert_eq!(
        got,
        vec![
            (Constraint::RotorAngle, 67, 0.78, 16.03),
            (Constraint::Voltage, 160, 1.86, 38.28),
            (Constraint::RoCoF, 116, 1.35, 27.75),
            (Constraint::Zenith, 49, 0.57, 11.72),
            (Constraint::Nadir, 26, 0.30, 6.22),
        ]
    );
    assert_eq!(t.totals.all_cases, 8594);
    assert_eq!(t.totals.insecure_cases, 418);
    assert_eq!(t.totals.insecure_pct, 4.86);
    assert_eq!((t.totals.rocof_plus, t.totals.rocof_minus), (70, 46));
    let rendered = t.render();
    assert!(rendered.contains("Rotor-angle"));
    assert!(rendered.contains("38.28"));
}

#[test]
fn case_binding_two_constraints_counts_in_both_rows_once_in_total() {
    let both = BTreeSet::from([Binding::RocofPlus, Binding::Zenith]);
    let rocof_pair = BTreeSet::from([Binding::RocofPlus, Binding::RocofMinus]);
    let r = planted::report(
        planted::BASE_TS,
        planted::metrics(20_000.0, 4_000.0, 1_000.0),
        vec![both, rocof_pair, BTreeSet::new(), BTreeSet::new()],
    );
    let a = archive_of(vec![r]);
    let t = summarize(&a, Window::all(), Unit::CycleCase).unwrap();
    let count = |k: Constraint| t.rows.iter().find(|r| r.constraint == k).unwrap().total_binding_cases;
    assert_eq!(count(Constraint::RoCoF), 2);
    assert_eq!(count(Constraint::Zenith), 1);
    assert_eq!(t.totals.insecure_cases, 2);
    assert_eq!(t.totals.binding_sum, 3);
    assert_eq!(t.totals.insecure_pct, 50.0);
    assert_eq!(t.totals.rocof_plus, 2);
}

#[test]
fn per_cycle_unit() {
    let m = planted::metrics(20_000.0, 4_000.0, 1_000.0);
    let a = archive_of(vec![
        planted::report(1, m.clone(), vec![BTreeSet::from([Binding::Nadir]), BTreeSet::from([Binding::Nadir])]),
        planted::report(2, m.clone(), vec![BTreeSet::new(), BTreeSet::new()]),
        planted::report(3, m, vec![BTreeSet::from([Binding::Voltage])]),
    ]);
    let t = summarize(&a, Window::all(), Unit::Cycle).unwrap();
    assert_eq!(t.totals.all_cases, 3);
    assert_eq!(t.totals.insecure_cases, 2);
    assert_eq!(t.rows[4].total_binding_cases, 1);
    let t = summarize(&a, Window { from: Some(2), to: Some(3) }, Unit::CycleCase).unwrap();
    assert_eq!(t.totals.all_cases, 3);
    assert_eq!(t.totals.cycles, 2);
}

#[test]
fn empty_window_and_failed_cycles() {
    let a = CaseArchive::in_memory();
    assert_eq!(summarize(&a, Window::all(), Unit::CycleCase), Err(AnalyticsError::EmptyWindow));
    let failed = gridsa_core::screener::CycleReport::failed(5, None, &Default::default(), "basecase".into());
    let a = archive_of(vec![failed]);
    assert_eq!(summarize(&a, Window::all(), Unit::CycleCase), Err(AnalyticsError::EmptyWindow));
    let a = archive_of(planted::counted_archive(20, &[], 10, 1));
    let t = summarize(&a, Window::all(), Unit::CycleCase).unwrap();
    assert!(t.rows.iter().all(|r| r.total_binding_cases == 0 && r.comparative_pct == 0.0));
    assert_eq!(t.totals.insecure_pct, 0.0);
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn correlation_matches_pearson_and_planted_signs() {
    let reports = planted::ruled_archive(300, 4, &planted::directional_rules(), 11);
    let a = archive_of(reports.clone());
    for flag in [Binding::RocofPlus, Binding::Zenith, Binding::RocofMinus, Binding::Nadir] {
        for var in [Variable::Inertia, Variable::Demand, Variable::Wind] {
            let s = correlate(&a, var, flag, Window::all(), Unit::CycleCase).unwrap();
            let mut x = Vec::new();
            let mut y = Vec::new();
            for r in &reports {
                let v = var.of(r.system_metrics.as_ref().unwrap());
                for c in &r.cases {
                    x.push(v);
                    y.push(if c.metrics.as_ref().unwrap().binding.contains(&flag) { 1.0 } else { 0.0 });
                }
            }
            assert!((s.r - pearson(&x, &y)).abs() < 1e-9, "{flag} {var:?}");
            assert_eq!(s.n, 1200);
            let up = matches!(flag, Binding::RocofPlus | Binding::Zenith);
            let expect_positive = (var == Variable::Wind) == up;
            assert_eq!(s.r > 0.0, expect_positive, "{flag} {var:?} r={}", s.r);
            assert_eq!(s.mean_insecure > s.mean_secure, expect_positive);
        }
    }
}

#[test]
fn correlation_degenerate_when_flag_never_set() {
    let a = archive_of(planted::counted_archive(50, &[(Binding::Nadir, 3)], 5, 2));
    let e = correlate(&a, Variable::Demand, Binding::Zenith, Window::all(), Unit::CycleCase);
    assert!(matches!(e, Err(AnalyticsError::Degenerate(_))));
}

#[test]
fn scatter_csv() {
    let m = planted::metrics(25_000.0, 4_000.0, 1_500.0);
    let a = archive_of(vec![
        planted::report(100, m.clone(), vec![BTreeSet::from([Binding::Zenith]), BTreeSet::new()]),
        planted::report(400, m, vec![BTreeSet::new()]),
    ]);
    let s = scatter_export(&a, Variable::Demand, Variable::Wind, Binding::Zenith, Window::all()).unwrap();
    let csv = s.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with('#'));
    assert_eq!(lines[1], "ts,x,y,insecure");
    assert_eq!(lines[2], "100,4000,1500,1");
    assert_eq!(lines[3], "400,4000,1500,0");
    assert_eq!(
        scatter_export(&a, Variable::Wind, Variable::Wind, Binding::Zenith, Window::all()),
        Err(AnalyticsError::SameAxis)
    );
}

#[test]
fn directory_archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reports = planted::counted_archive(30, &[(Binding::Voltage, 4)], 10, 3);
    let snap = ring_area(3, 3000.0, 0.0);
    {
        let mut a = CaseArchive::open(dir.path()).unwrap();
        for r in reports.clone() {
            a.append(r, Some(&snap)).unwrap();
        }
        let err = a.append(reports[0].clone(), None).unwrap_err();
        assert!(matches!(err, ArchiveError::NonMonotonic { .. }));
    }
    let a = CaseArchive::open(dir.path()).unwrap();
    assert_eq!(a.cycles(), &reports[..]);
    assert_eq!(a.latest().unwrap().snapshot_ts, reports[2].snapshot_ts);
    assert_eq!(a.get(reports[1].snapshot_ts), Some(&reports[1]));
    assert_eq!(a.get(12345), None);
    assert_eq!(a.snapshot(reports[0].snapshot_ts).unwrap().unwrap(), snap);
    assert_eq!(a.index().len(), 3);
}

fn files(dir: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for sub in ["cycles", "snapshots"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            out.push(format!("{sub}/{}", e.unwrap().file_name().to_string_lossy()));
        }
    }
    out.sort();
    out
}

#[test]
fn crash_points_never_leave_a_torn_cycle() {
    let snap = ring_area(3, 3000.0, 0.0);
    for (point, survives) in [
        (CrashPoint::AfterSnapshot, false),
        (CrashPoint::BeforeReportRename, false),
        (CrashPoint::BeforeIndexUpdate, true),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let reports = planted::counted_archive(20, &[(Binding::Nadir, 2)], 10, 4);
        {
            let mut a = CaseArchive::open(dir.path()).unwrap();
            a.append(reports[0].clone(), Some(&snap)).unwrap();
            let e = a.append_with_crash(reports[1].clone(), Some(&snap), point).unwrap_err();
            assert!(matches!(e, ArchiveError::InjectedCrash(p) if p == point));
        }
        let a = CaseArchive::open(dir.path()).unwrap();
        let expect = if survives { 2 } else { 1 };
        assert_eq!(a.len(), expect, "{point:?}");
        assert_eq!(a.cycles(), &reports[..expect]);
        assert_eq!(a.index().len(), expect);
        let listed = files(dir.path());
        assert!(listed.iter().all(|f| !f.ends_with(".tmp")), "{listed:?}");
        assert_eq!(listed.len(), 2 * expect, "{point:?} {listed:?}");
        let index: Vec<serde_json::Value> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
        assert_eq!(index.len(), expect);
    }
}
