//! Cycle archive and archive-level statistics: binding-constraint summaries,
//! correlation of insecurity flags with operating conditions, scatter data.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::Binding;
use crate::netmodel::{Snapshot, SystemMetrics};
use crate::screener::{CaseResult, CaseStatus, CycleReport, CycleStatus, Totals};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive document {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("cycle timestamp {got} is not after the latest archived cycle {last}")]
    NonMonotonic { last: i64, got: i64 },
    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no cycles in the requested window")]
    EmptyWindow,
    #[error("correlation undefined: {0}")]
    Degenerate(String),
    #[error("x and y must differ")]
    SameAxis,
}

/// Points in [`CaseArchive::append_with_crash`] where a simulated crash stops
/// the write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Snapshot stored, report not yet written.
    AfterSnapshot,
    /// Report written to its temporary file but not renamed.
    BeforeReportRename,
    /// Report committed, index not yet rewritten.
    BeforeIndexUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub ts: i64,
    pub status: CycleStatus,
    pub totals: Totals,
}

/// Append-only sequence of cycle reports with strictly increasing timestamps,
/// optionally backed by a directory.
#[derive(Debug, Default)]
pub struct CaseArchive {
    root: Option<PathBuf>,
    cycles: Vec<CycleReport>,
}

fn write_atomic(path: &Path, bytes: &[u8], crash_before_rename: bool) -> Result<(), ArchiveError> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if crash_before_rename {
        return Err(ArchiveError::InjectedCrash(CrashPoint::BeforeReportRename));
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Directory fsync makes the rename durable; not supported everywhere.
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArchiveError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| ArchiveError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn ts_of(path: &Path) -> Option<i64> {
    if path.extension()? != "json" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

impl CaseArchive {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory archive. Temporary files left
    /// by an interrupted write are removed and the index is rebuilt from the
    /// committed reports when they disagree.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let root = root.into();
        let cycles_dir = root.join("cycles");
        let snaps_dir = root.join("snapshots");
        fs::create_dir_all(&cycles_dir)?;
        fs::create_dir_all(&snaps_dir)?;

        let mut stamps = Vec::new();
        for dir in [&cycles_dir, &snaps_dir] {
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.to_string_lossy().ends_with(".tmp") {
                    fs::remove_file(&path)?;
                } else if dir == &cycles_dir {
                    if let Some(ts) = ts_of(&path) {
                        stamps.push(ts);
                    }
                }
            }
        }
        stamps.sort_unstable();
        let mut cycles = Vec::with_capacity(stamps.len());
        for ts in &stamps {
            cycles.push(read_json::<CycleReport>(&cycles_dir.join(format!("{ts}.json")))?);
        }
        // Snapshots whose report never committed.
        for entry in fs::read_dir(&snaps_dir)? {
            let path = entry?.path();
            if let Some(ts) = ts_of(&path) {
                if stamps.binary_search(&ts).is_err() {
                    fs::remove_file(&path)?;
                }
            }
        }

        let archive = Self {
            root: Some(root),
            cycles,
        };
        let index_path = archive.index_path().expect("directory archive");
        let current: Option<Vec<IndexEntry>> = read_json(&index_path).ok();
        if current.as_ref() != Some(&archive.index()) {
            archive.write_index()?;
        }
        Ok(archive)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn index_path(&self) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("index.json"))
    }

    pub fn index(&self) -> Vec<IndexEntry> {
        self.cycles
            .iter()
            .map(|c| IndexEntry {
                ts: c.snapshot_ts,
                status: c.status,
                totals: c.totals,
            })
            .collect()
    }

    fn write_index(&self) -> Result<(), ArchiveError> {
        if let Some(path) = self.index_path() {
            let json = serde_json::to_vec_pretty(&self.index()).expect("index serializes");
            write_atomic(&path, &json, false)?;
        }
        Ok(())
    }

    pub fn append(&mut self, report: CycleReport, snapshot: Option<&Snapshot>) -> Result<(), ArchiveError> {
        self.append_inner(report, snapshot, None)
    }

    /// Like [`append`](Self::append) but stops at `crash`, leaving the
    /// directory as a crash at that point would.
    pub fn append_with_crash(
        &mut self,
        report: CycleReport,
        snapshot: Option<&Snapshot>,
        crash: CrashPoint,
    ) -> Result<(), ArchiveError> {
        self.append_inner(report, snapshot, Some(crash))
    }

    fn append_inner(
        &mut self,
        report: CycleReport,
        snapshot: Option<&Snapshot>,
        crash: Option<CrashPoint>,
    ) -> Result<(), ArchiveError> {
        if let Some(last) = self.cycles.last() {
            if report.snapshot_ts <= last.snapshot_ts {
                return Err(ArchiveError::NonMonotonic {
                    last: last.snapshot_ts,
                    got: report.snapshot_ts,
                });
            }
        }
        if let Some(root) = &self.root {
            let ts = report.snapshot_ts;
            if let Some(s) = snapshot {
                write_atomic(&root.join("snapshots").join(format!("{ts}.json")), s.to_json().as_bytes(), false)?;
            }
            if crash == Some(CrashPoint::AfterSnapshot) {
                return Err(ArchiveError::InjectedCrash(CrashPoint::AfterSnapshot));
            }
            write_atomic(
                &root.join("cycles").join(format!("{ts}.json")),
                report.to_json().as_bytes(),
                crash == Some(CrashPoint::BeforeReportRename),
            )?;
            if crash == Some(CrashPoint::BeforeIndexUpdate) {
                self.cycles.push(report);
                return Err(ArchiveError::InjectedCrash(CrashPoint::BeforeIndexUpdate));
            }
            self.cycles.push(report);
            self.write_index()?;
        } else {
            self.cycles.push(report);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn cycles(&self) -> &[CycleReport] {
        &self.cycles
    }

    pub fn latest(&self) -> Option<&CycleReport> {
        self.cycles.last()
    }

    pub fn get(&self, ts: i64) -> Option<&CycleReport> {
        self.cycles
            .binary_search_by_key(&ts, |c| c.snapshot_ts)
            .ok()
            .map(|i| &self.cycles[i])
    }

    /// Stored snapshot for cycle `ts`, if the archive is on disk and kept one.
    pub fn snapshot(&self, ts: i64) -> Result<Option<Snapshot>, ArchiveError> {
        let Some(root) = &self.root else {
            return Ok(None);
        };
        let path = root.join("snapshots").join(format!("{ts}.json"));
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn window(&self, w: Window) -> impl Iterator<Item = &CycleReport> {
        self.cycles.iter().filter(move |c| w.contains(c.snapshot_ts))
    }
}

/// Inclusive timestamp range; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from: Option<i64>,
    pub to: Option<i64>,
}

impl Window {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.from.is_none_or(|f| ts >= f) && self.to.is_none_or(|t| ts <= t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// One contingency in one cycle.
    #[default]
    CycleCase,
    /// One cycle; it binds a constraint when any of its cases does.
    Cycle,
}

/// Constraint rows in summary-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    #[serde(rename = "Rotor-angle")]
    RotorAngle,
    Voltage,
    RoCoF,
    Zenith,
    Nadir,
}

impl Constraint {
    pub const ROWS: [Constraint; 5] = [
        Constraint::RotorAngle,
        Constraint::Voltage,
        Constraint::RoCoF,
        Constraint::Zenith,
        Constraint::Nadir,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Constraint::RotorAngle => "Rotor-angle",
            Constraint::Voltage => "Voltage",
            Constraint::RoCoF => "RoCoF",
            Constraint::Zenith => "Zenith",
            Constraint::Nadir => "Nadir",
        }
    }

    pub fn bound_by(self, binding: &BTreeSet<Binding>) -> bool {
        match self {
            Constraint::RotorAngle => binding.contains(&Binding::RotorAngle),
            Constraint::Voltage => binding.contains(&Binding::Voltage),
            Constraint::RoCoF => binding.contains(&Binding::RocofPlus) || binding.contains(&Binding::RocofMinus),
            Constraint::Zenith => binding.contains(&Binding::Zenith),
            Constraint::Nadir => binding.contains(&Binding::Nadir),
        }
    }
}

/// `100·num/den` rounded half-up to two decimals with integer arithmetic.
pub fn pct_2dp(num: u64, den: u64) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let hundredths = (num as u128 * 20_000 + den as u128) / (2 * den as u128);
    hundredths as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub constraint: Constraint,
    pub total_binding_cases: u64,
    pub pct_of_all_cases: f64,
    pub comparative_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTotals {
    pub cycles: u64,
    pub all_cases: u64,
    pub insecure_cases: u64,
    pub insecure_pct: f64,
    /// Sum of the per-constraint counts; exceeds `insecure_cases` when cases
    /// bind several constraints.
    pub binding_sum: u64,
    pub rocof_plus: u64,
    pub rocof_minus: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub window: Window,
    pub unit: Unit,
    pub rows: Vec<SummaryRow>,
    pub totals: SummaryTotals,
}

impl SummaryTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>14} {:>14} {:>14}\n",
            "Constraint", "Binding cases", "% of all", "Comparative %"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>14} {:>14.2} {:>14.2}\n",
                r.constraint.label(),
                r.total_binding_cases,
                r.pct_of_all_cases,
                r.comparative_pct
            ));
        }
        let t = &self.totals;
        out.push_str(&format!(
            "Total cases {} in {} cycles; insecure {} ({:.2} %)\n",
            t.all_cases, t.cycles, t.insecure_cases, t.insecure_pct
        ));
        out.push_str(&format!("RoCoF split: {} RoCoF+, {} RoCoF-\n", t.rocof_plus, t.rocof_minus));
        out
    }
}

/// Assessed cases of a complete cycle; failed cases carry no verdict.
fn assessed(c: &CycleReport) -> impl Iterator<Item = &CaseResult> {
    c.cases.iter().filter(|k| k.status != CaseStatus::Failed)
}

fn binding_of(case: &CaseResult) -> BTreeSet<Binding> {
    case.binding().collect()
}

/// Per-unit binding sets within the window.
fn observations(archive: &CaseArchive, window: Window, unit: Unit) -> Vec<(&CycleReport, BTreeSet<Binding>)> {
    let mut out = Vec::new();
    for c in archive.window(window).filter(|c| c.status == CycleStatus::Complete) {
        match unit {
            Unit::CycleCase => out.extend(assessed(c).map(|k| (c, binding_of(k)))),
            Unit::Cycle => {
                let all: BTreeSet<Binding> = assessed(c).flat_map(|k| k.binding()).collect();
                out.push((c, all));
            }
        }
    }
    out
}

pub fn summarize(archive: &CaseArchive, window: Window, unit: Unit) -> Result<SummaryTable, AnalyticsError> {
    let cycles = archive
        .window(window)
        .filter(|c| c.status == CycleStatus::Complete)
        .count() as u64;
    if cycles == 0 {
        return Err(AnalyticsError::EmptyWindow);
    }
    let obs = observations(archive, window, unit);
    let all = obs.len() as u64;
    let counts: Vec<u64> = Constraint::ROWS
        .iter()
        .map(|k| obs.iter().filter(|(_, b)| k.bound_by(b)).count() as u64)
        .collect();
    let sum: u64 = counts.iter().sum();
    let insecure = obs.iter().filter(|(_, b)| !b.is_empty()).count() as u64;
    let rows = Constraint::ROWS
        .iter()
        .zip(&counts)
        .map(|(&constraint, &n)| SummaryRow {
            constraint,
            total_binding_cases: n,
            pct_of_all_cases: pct_2dp(n, all),
            comparative_pct: pct_2dp(n, sum),
        })
        .collect();
    let flag = |b: Binding| obs.iter().filter(|(_, s)| s.contains(&b)).count() as u64;
    Ok(SummaryTable {
        window,
        unit,
        rows,
        totals: SummaryTotals {
            cycles,
            all_cases: all,
            insecure_cases: insecure,
            insecure_pct: pct_2dp(insecure, all),
            binding_sum: sum,
            rocof_plus: flag(Binding::RocofPlus),
            rocof_minus: flag(Binding::RocofMinus),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Inertia,
    Demand,
    Wind,
}

impl Variable {
    pub fn of(self, m: &SystemMetrics) -> f64 {
        match self {
            Variable::Inertia => m.inertia_mws,
            Variable::Demand => m.demand_mw,
            Variable::Wind => m.wind_mw,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Inertia => "MWs",
            Variable::Demand | Variable::Wind => "MW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inertia" => Some(Variable::Inertia),
            "demand" => Some(Variable::Demand),
            "wind" => Some(Variable::Wind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub variable: Variable,
    pub flag: Binding,
    pub unit: Unit,
    /// Point-biserial coefficient.
    pub r: f64,
    pub n: usize,
    pub n_insecure: usize,
    pub n_secure: usize,
    pub mean_insecure: f64,
    pub mean_secure: f64,
}

/// Point-biserial correlation of a 0/1 outcome with `x`.
pub fn point_biserial(x: &[f64], flag: &[bool]) -> Result<(f64, f64, f64), AnalyticsError> {
    let n = x.len();
    let n1 = flag.iter().filter(|&&f| f).count();
    let n0 = n - n1;
    if n < 2 || n1 == 0 || n0 == 0 {
        return Err(AnalyticsError::Degenerate(format!(
            "need both outcomes, got {n1} insecure and {n0} secure"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(AnalyticsError::Degenerate("variable is constant".into()));
    }
    let m1 = x.iter().zip(flag).filter(|(_, &f)| f).map(|(v, _)| v).sum::<f64>() / n1 as f64;
    let m0 = x.iter().zip(flag).filter(|(_, &f)| !f).map(|(v, _)| v).sum::<f64>() / n0 as f64;
    let p = n1 as f64 / n as f64;
    let r = (m1 - m0) / var.sqrt() * (p * (1.0 - p)).sqrt();
    Ok((r, m1, m0))
}

pub fn correlate(
    archive: &CaseArchive,
    variable: Variable,
    flag: Binding,
    window: Window,
    unit: Unit,
) -> Result<CorrelationStats, AnalyticsError> {
    let obs = observations(archive, window, unit);
    if obs.is_empty() {
        return Err(AnalyticsError::EmptyWindow);
    }
    let (x, y): (Vec<f64>, Vec<bool>) = obs
        .iter()
        .filter_map(|(c, b)| Some((variable.of(c.system_metrics.as_ref()?), b.contains(&flag))))
        .unzip();
    let (r, mean_insecure, mean_secure) = point_biserial(&x, &y)?;
    let n_insecure = y.iter().filter(|&&f| f).count();
    Ok(CorrelationStats {
        variable,
        flag,
        unit,
        r,
        n: y.len(),
        n_insecure,
        n_secure: y.len() - n_insecure,
        mean_insecure,
        mean_secure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub ts: i64,
    pub x: f64,
    pub y: f64,
    pub insecure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    pub x: Variable,
    pub y: Variable,
    pub flag: Binding,
    pub rows: Vec<ScatterRow>,
}

impl ScatterData {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# x = {:?} [{}], y = {:?} [{}], insecure = 1 when any case in the cycle binds {}\n",
            self.x,
            self.x.unit(),
            self.y,
            self.y.unit(),
            self.flag
        )
        .to_lowercase();
        out.push_str("ts,x,y,insecure\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.ts, r.x, r.y, u8::from(r.insecure)));
        }
        out
    }
}

/// One point per complete cycle in the window.
pub fn scatter_export(
    archive: &CaseArchive,
    x: Variable,
    y: Variable,
    flag: Binding,
    window: Window,
) -> Result<ScatterData, AnalyticsError> {
    if x == y {
        return Err(AnalyticsError::SameAxis);
    }
    let rows: Vec<ScatterRow> = observations(archive, window, Unit::Cycle)
        .into_iter()
        .filter_map(|(c, b)| {
            let m = c.system_metrics.as_ref()?;
            Some(ScatterRow {
                ts: c.snapshot_ts,
                x: x.of(m),
                y: y.of(m),
                insecure: b.contains(&flag),
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(AnalyticsError::EmptyWindow);
    }
    Ok(ScatterData { x, y, flag, rows })
}
