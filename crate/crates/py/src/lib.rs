//! Python bindings: snapshots, system metrics, power flow, dynamic
//! simulation, full-cycle assessment, what-if and archive analytics.
//!
//! Structured results cross the boundary as plain dicts and lists.

use std::fmt::Display;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use gridsa_core::analytics::{self, CaseArchive, Unit, Variable, Window};
use gridsa_core::criteria::Binding;
use gridsa_core::dynsim::{self, SimConfig};
use gridsa_core::engine::{self, EngineConfig, WhatIfRequest};
use gridsa_core::fixtures;
use gridsa_core::netmodel::{self, Modification, Snapshot, Strictness};
use gridsa_core::powerflow::{self, SolveOptions};
use gridsa_core::screener::{self, CycleReport, CycleStatus};

create_exception!(gridsa, GridsaError, PyException);
create_exception!(gridsa, EmptyWindowError, GridsaError);
create_exception!(gridsa, DegenerateError, GridsaError);

fn err(e: impl Display) -> PyErr {
    GridsaError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn analytics_err(e: analytics::AnalyticsError) -> PyErr {
    match e {
        analytics::AnalyticsError::EmptyWindow => EmptyWindowError::new_err(e.to_string()),
        analytics::AnalyticsError::Degenerate(_) => DegenerateError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A network snapshot.
#[pyclass(name = "Snapshot", module = "gridsa", frozen)]
struct PySnapshot {
    inner: Snapshot,
}

#[pymethods]
impl PySnapshot {
    /// Parse a snapshot document. Unknown keys raise unless `lenient`.
    #[staticmethod]
    #[pyo3(signature = (text, lenient = false))]
    fn from_json(text: &str, lenient: bool) -> PyResult<Self> {
        let strictness = if lenient { Strictness::Lenient } else { Strictness::Strict };
        netmodel::load_snapshot_with(text.as_bytes(), strictness)
            .map(|(inner, _)| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    #[pyo3(signature = (path, lenient = false))]
    fn load(path: std::path::PathBuf, lenient: bool) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, lenient)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn timestamp(&self) -> i64 {
        self.inner.timestamp
    }

    #[getter]
    fn bus_ids(&self) -> Vec<String> {
        self.inner.buses.iter().map(|b| b.id.clone()).collect()
    }

    #[getter]
    fn machine_ids(&self) -> Vec<String> {
        self.inner.machines.iter().map(|m| m.id.clone()).collect()
    }

    /// Validation findings as `element: message` strings; empty when valid.
    fn issues(&self) -> Vec<String> {
        self.inner.issues().iter().map(|i| i.to_string()).collect()
    }

    /// Inertia, demand, wind, SNSP and MUON count.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &netmodel::system_metrics(&self.inner).map_err(err)?)
    }

    /// Newton-Raphson AC power flow.
    #[pyo3(signature = (tol = None, max_iter = None, flat_start = false))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        tol: Option<f64>,
        max_iter: Option<usize>,
        flat_start: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let defaults = SolveOptions::default();
        let opts = SolveOptions {
            tol: tol.unwrap_or(defaults.tol),
            max_iter: max_iter.unwrap_or(defaults.max_iter),
            flat_start,
        };
        to_py(py, &powerflow::solve(&self.inner, &opts).map_err(err)?)
    }

    /// Applies a list of modifications (dicts with an `action` key) and
    /// returns the modified snapshot.
    fn modify(&self, modifications: &Bound<'_, PyAny>) -> PyResult<Self> {
        let mods: Vec<Modification> = from_py(modifications)?;
        netmodel::apply_modifications(&self.inner, &mods)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Contingency ids under the default selection rules.
    fn contingencies(&self) -> Vec<String> {
        screener::build_contingency_set(&self.inner, &Default::default())
            .into_iter()
            .map(|c| c.id)
            .collect()
    }

    /// Time-domain response to one contingency (or none). `config` is a dict
    /// of simulation settings such as `t_end`, `dt` or `integrator`.
    #[pyo3(signature = (contingency = None, config = None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        contingency: Option<&str>,
        config: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SimConfig = match config {
            Some(c) => from_py(c)?,
            None => SimConfig::default(),
        };
        let case = match contingency {
            Some(id) => Some(
                screener::build_contingency_set(&self.inner, &Default::default())
                    .into_iter()
                    .find(|c| c.id == id)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown contingency {id:?}")))?,
            ),
            None => None,
        };
        let snap = self.inner.clone();
        let resp = py
            .detach(move || dynsim::simulate(&snap, case.as_ref(), &cfg))
            .map_err(err)?;
        to_py(py, &resp)
    }

    fn __repr__(&self) -> String {
        format!(
            "Snapshot(timestamp={}, buses={}, machines={}, ibr_units={})",
            self.inner.timestamp,
            self.inner.buses.len(),
            self.inner.machines.len(),
            self.inner.ibr_units.len()
        )
    }
}

/// Engine configuration.
#[pyclass(name = "Config", module = "gridsa")]
struct PyConfig {
    inner: EngineConfig,
}

#[pymethods]
impl PyConfig {
    /// Loads a TOML config file; built-in defaults when `path` is omitted.
    #[new]
    #[pyo3(signature = (path = None))]
    fn new(path: Option<std::path::PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => EngineConfig::load(&p).map_err(err)?,
            None => EngineConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        EngineConfig::from_toml(text).map(|inner| Self { inner }).map_err(err)
    }

    /// Sets one value, e.g. `"limits.rocof_limit=0.8"`.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        self.inner.apply_override(assignment).map_err(err)
    }

    #[getter]
    fn workers(&self) -> usize {
        self.inner.workers
    }

    #[setter]
    fn set_workers(&mut self, n: usize) -> PyResult<()> {
        if n == 0 {
            return Err(PyValueError::new_err("workers must be at least 1"));
        }
        self.inner.workers = n;
        Ok(())
    }

    #[getter]
    fn policy_profile(&self) -> String {
        self.inner.policy.profile.clone()
    }

    #[setter]
    fn set_policy_profile(&mut self, name: String) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.policy.profile = name;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// One assessment cycle.
#[pyclass(name = "Report", module = "gridsa", frozen)]
struct PyReport {
    inner: CycleReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// The report document; `normalize` zeroes the timing fields.
    #[pyo3(signature = (normalize = false))]
    fn to_json(&self, normalize: bool) -> String {
        if normalize {
            self.inner.normalized().to_json()
        } else {
            self.inner.to_json()
        }
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn snapshot_ts(&self) -> i64 {
        self.inner.snapshot_ts
    }

    /// `"complete"` or `"failed"`.
    #[getter]
    fn status(&self) -> &'static str {
        match self.inner.status {
            CycleStatus::Complete => "complete",
            CycleStatus::Failed => "failed",
        }
    }

    #[getter]
    fn failure(&self) -> Option<String> {
        self.inner.failure.clone()
    }

    #[getter]
    fn totals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.totals)
    }

    #[getter]
    fn policy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.policy)
    }

    /// Ids of insecure cases with the constraints each binds.
    fn insecure(&self) -> Vec<(String, Vec<String>)> {
        self.inner
            .cases
            .iter()
            .filter(|c| c.status == screener::CaseStatus::Insecure)
            .map(|c| (c.id.clone(), c.binding().map(|b| b.label().to_string()).collect()))
            .collect()
    }

    fn __repr__(&self) -> String {
        let t = &self.inner.totals;
        format!(
            "Report(snapshot_ts={}, status={}, cases={}, insecure={}, failed={})",
            self.inner.snapshot_ts,
            self.status(),
            t.cases,
            t.insecure,
            t.failed
        )
    }
}

/// Full assessment of one snapshot: metrics, contingency screening and the
/// policy check. Nothing is persisted.
#[pyfunction]
#[pyo3(signature = (snapshot, config = None))]
fn assess(py: Python<'_>, snapshot: &PySnapshot, config: Option<&PyConfig>) -> PyResult<PyReport> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let snap = snapshot.inner.clone();
    py.detach(move || engine::assess(&snap, &cfg))
        .map(|inner| PyReport { inner })
        .map_err(err)
}

/// Evaluates a what-if request (dict or JSON text) against `archive`. The
/// archive is never modified.
#[pyfunction]
#[pyo3(signature = (request, archive, config = None))]
fn what_if(
    py: Python<'_>,
    request: &Bound<'_, PyAny>,
    archive: &PyArchive,
    config: Option<&PyConfig>,
) -> PyResult<PyReport> {
    let req: WhatIfRequest = from_py(request)?;
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let archive = &archive.inner;
    py.detach(|| engine::what_if(&req, &cfg, archive))
        .map(|inner| PyReport { inner })
        .map_err(err)
}

/// Built-in example networks: `ring`, `rocof_plus`, `rocof_minus`,
/// `high_snsp`, `synthetic`.
#[pyfunction]
fn fixture(name: &str) -> PyResult<PySnapshot> {
    let inner = match name {
        "ring" => fixtures::ring_area(10, 30_000.0, 0.0),
        "rocof_plus" => fixtures::rocof_plus_area(),
        "rocof_minus" => fixtures::rocof_minus_area(),
        "high_snsp" => fixtures::high_snsp_area(),
        "synthetic" => fixtures::synthetic_network(&fixtures::SyntheticSpec::default()),
        other => return Err(PyValueError::new_err(format!("unknown fixture {other:?}"))),
    };
    Ok(PySnapshot { inner })
}

/// A cycle archive, on disk or in memory.
#[pyclass(name = "Archive", module = "gridsa")]
struct PyArchive {
    inner: CaseArchive,
}

fn parse_unit(unit: &str) -> PyResult<Unit> {
    match unit {
        "cycle_case" => Ok(Unit::CycleCase),
        "cycle" => Ok(Unit::Cycle),
        other => Err(PyValueError::new_err(format!("unknown unit {other:?}"))),
    }
}

fn parse_flag(flag: &str) -> PyResult<Binding> {
    Binding::parse(flag).ok_or_else(|| PyValueError::new_err(format!("unknown flag {flag:?}")))
}

fn parse_var(var: &str) -> PyResult<Variable> {
    Variable::parse(var).ok_or_else(|| PyValueError::new_err(format!("unknown variable {var:?}")))
}

#[pymethods]
impl PyArchive {
    /// Opens (creating if needed) the archive at `path`; in memory when omitted.
    #[new]
    #[pyo3(signature = (path = None))]
    fn new(path: Option<std::path::PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => CaseArchive::open(p).map_err(err)?,
            None => CaseArchive::in_memory(),
        };
        Ok(Self { inner })
    }

    /// In-memory archive whose bindings follow the planted directional rules.
    #[staticmethod]
    #[pyo3(signature = (cycles, cases_per_cycle = 10, seed = 1))]
    fn planted(cycles: usize, cases_per_cycle: usize, seed: u64) -> PyResult<Self> {
        let mut inner = CaseArchive::in_memory();
        for r in fixtures::planted::ruled_archive(cycles, cases_per_cycle, &fixtures::planted::directional_rules(), seed) {
            inner.append(r, None).map_err(err)?;
        }
        Ok(Self { inner })
    }

    #[pyo3(signature = (report, snapshot = None))]
    fn append(&mut self, report: &PyReport, snapshot: Option<&PySnapshot>) -> PyResult<()> {
        self.inner
            .append(report.inner.clone(), snapshot.map(|s| &s.inner))
            .map_err(err)
    }

    /// Assess `snapshot` and append the report and snapshot.
    #[pyo3(signature = (snapshot, config = None))]
    fn run_cycle(&mut self, py: Python<'_>, snapshot: &PySnapshot, config: Option<&PyConfig>) -> PyResult<PyReport> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let snap = &snapshot.inner;
        let archive = &mut self.inner;
        py.detach(|| engine::run_cycle(snap, &cfg, archive))
            .map(|inner| PyReport { inner })
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn timestamps(&self) -> Vec<i64> {
        self.inner.cycles().iter().map(|c| c.snapshot_ts).collect()
    }

    fn get(&self, ts: i64) -> Option<PyReport> {
        self.inner.get(ts).map(|r| PyReport { inner: r.clone() })
    }

    /// Per-constraint binding counts and percentages.
    #[pyo3(signature = (start = None, end = None, unit = "cycle_case"))]
    fn summary<'py>(
        &self,
        py: Python<'py>,
        start: Option<i64>,
        end: Option<i64>,
        unit: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let w = Window { from: start, to: end };
        let t = analytics::summarize(&self.inner, w, parse_unit(unit)?).map_err(analytics_err)?;
        to_py(py, &t)
    }

    /// Point-biserial correlation of `var` with `flag`.
    #[pyo3(signature = (var, flag, start = None, end = None, unit = "cycle_case"))]
    fn correlate<'py>(
        &self,
        py: Python<'py>,
        var: &str,
        flag: &str,
        start: Option<i64>,
        end: Option<i64>,
        unit: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let w = Window { from: start, to: end };
        let s = analytics::correlate(&self.inner, parse_var(var)?, parse_flag(flag)?, w, parse_unit(unit)?)
            .map_err(analytics_err)?;
        to_py(py, &s)
    }

    /// Scatter rows as CSV text.
    #[pyo3(signature = (x, y, flag, start = None, end = None))]
    fn scatter_csv(&self, x: &str, y: &str, flag: &str, start: Option<i64>, end: Option<i64>) -> PyResult<String> {
        let w = Window { from: start, to: end };
        analytics::scatter_export(&self.inner, parse_var(x)?, parse_var(y)?, parse_flag(flag)?, w)
            .map(|d| d.to_csv())
            .map_err(analytics_err)
    }
}

#[pymodule]
fn gridsa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySnapshot>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyArchive>()?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(what_if, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add("GridsaError", m.py().get_type::<GridsaError>())?;
    m.add("EmptyWindowError", m.py().get_type::<EmptyWindowError>())?;
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
