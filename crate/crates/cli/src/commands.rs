use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use gridsa_core::analytics::{
    correlate, scatter_export, summarize, AnalyticsError, ArchiveError, CaseArchive, Unit, Variable, Window,
};
use gridsa_core::criteria::Binding;
use gridsa_core::engine::{assess, ConfigError, EngineConfig, EngineError};
use gridsa_core::fixtures::{self, planted};
use gridsa_core::netmodel::{load_snapshot_with, NetError, Snapshot, Strictness};
use gridsa_core::policy::{ConstraintStatus, PolicyReport};
use gridsa_core::screener::{CycleReport, CycleStatus};
use gridsa_server::ServerError;

use crate::{Analysis, Command, EngineArgs, Fixture, SnapshotKind, UnitArg, WindowArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: NetError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("archive {path}: {source}")]
    Archive { path: PathBuf, source: ArchiveError },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Snapshot { source, .. } => match source {
                NetError::Parse(_) | NetError::Validation(_) | NetError::Degenerate => 1,
                _ => 2,
            },
            CliError::Engine(EngineError::Snapshot(_)) => 1,
            CliError::Engine(EngineError::BasecaseInsecure { .. }) => 3,
            CliError::Analytics(AnalyticsError::EmptyWindow) => 4,
            CliError::Analytics(AnalyticsError::Degenerate(_)) => 5,
            CliError::Server(e) => e.exit_code() as u8,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command, args: &EngineArgs) -> Result<u8> {
    match command {
        Command::Validate { snapshot } => validate(&snapshot, args),
        Command::Screen { snapshot, output, json } => screen(&snapshot, &output, json, args),
        Command::Analyze { archive, what } => analyze(&archive, what),
        Command::Serve => {
            gridsa_server::run_until_signal(engine_config(args)?)?;
            Ok(0)
        }
        Command::Fixture { what } => fixture(what),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_snapshot(path: &Path, lenient: bool) -> Result<(Snapshot, Vec<String>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let strictness = if lenient { Strictness::Lenient } else { Strictness::Strict };
    load_snapshot_with(std::io::BufReader::new(file), strictness).map_err(|source| CliError::Snapshot {
        path: path.to_path_buf(),
        source,
    })
}

/// The config file (or defaults) with the command-line overrides applied.
pub fn engine_config(args: &EngineArgs) -> Result<EngineConfig> {
    let mut cfg = match &args.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(p) = &args.policy_profile {
        cfg.policy.profile = p.clone();
    }
    if let Some(dir) = &args.dump_traces {
        cfg.dump_traces = Some(dir.clone());
    }
    for o in &args.limits_override {
        let key = o.split_once('=').map_or(o.as_str(), |(k, _)| k.trim());
        if key.contains('.') {
            cfg.apply_override(o)?;
        } else {
            cfg.apply_override(&format!("limits.{}", o.trim()))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn validate(path: &Path, args: &EngineArgs) -> Result<u8> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let strictness = if args.lenient { Strictness::Lenient } else { Strictness::Strict };
    match load_snapshot_with(std::io::BufReader::new(file), strictness) {
        Ok((_, ignored)) => {
            for key in ignored {
                println!("warning: unknown key {key} ignored");
            }
            println!("OK");
            Ok(0)
        }
        Err(NetError::Validation(issues)) => {
            for issue in &issues {
                println!("{issue}");
            }
            println!("{} finding(s)", issues.len());
            Ok(1)
        }
        Err(e) => {
            println!("{e}");
            Ok(1)
        }
    }
}

fn screen(path: &Path, output: &Path, json: bool, args: &EngineArgs) -> Result<u8> {
    let cfg = engine_config(args)?;
    let (snap, _) = read_snapshot(path, args.lenient)?;
    let mut report = assess(&snap, &cfg)?;
    if args.normalize_output {
        report = report.normalized();
    }
    fs::write(output, report.to_json()).map_err(io_err(output))?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", render_cycle(&report)?);
    }
    Ok(match report.status {
        CycleStatus::Failed => 3,
        CycleStatus::Complete if report.totals.insecure > 0 => 10,
        CycleStatus::Complete => 0,
    })
}

fn render_cycle(report: &CycleReport) -> Result<String> {
    let mut out = String::new();
    let t = &report.totals;
    let _ = writeln!(
        out,
        "Cycle {}: {} cases, {} secure, {} insecure, {} failed; {:.1} s of {:.0} s budget",
        report.snapshot_ts, t.cases, t.secure, t.insecure, t.failed, report.wall_time_s, report.budget_s
    );
    if report.over_budget {
        let _ = writeln!(out, "over budget");
    }
    match report.status {
        CycleStatus::Failed => {
            let _ = writeln!(
                out,
                "base case insecure: {}",
                report.failure.as_deref().unwrap_or("unknown reason")
            );
        }
        CycleStatus::Complete => {
            let mut single = CaseArchive::in_memory();
            single
                .append(report.clone(), None)
                .map_err(|source| CliError::Archive {
                    path: PathBuf::new(),
                    source,
                })?;
            out.push_str(&summarize(&single, Window::all(), Unit::CycleCase)?.render());
        }
    }
    if let Some(p) = &report.policy {
        out.push_str(&render_policy(p));
    }
    Ok(out)
}

fn render_policy(p: &PolicyReport) -> String {
    let mut out = format!(
        "Policy {}: {}\n",
        p.profile,
        if p.compliant { "compliant" } else { "NOT compliant" }
    );
    for c in &p.constraints {
        let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let status = match c.status {
            ConstraintStatus::Compliant => "compliant",
            ConstraintStatus::NonCompliant => "non-compliant",
            ConstraintStatus::NotEvaluated => "not evaluated",
        };
        let _ = write!(
            out,
            "  {:<14} {:>12} limit {:>10}  {}",
            c.constraint,
            num(c.value),
            num(c.limit),
            status
        );
        if let Some(note) = &c.note {
            let _ = write!(out, " ({note})");
        }
        out.push('\n');
    }
    out
}

fn open_archive(path: &Path) -> Result<CaseArchive> {
    if !path.is_dir() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such archive directory"),
        });
    }
    CaseArchive::open(path).map_err(|source| CliError::Archive {
        path: path.to_path_buf(),
        source,
    })
}

fn unit(u: UnitArg) -> Unit {
    match u {
        UnitArg::CycleCase => Unit::CycleCase,
        UnitArg::Cycle => Unit::Cycle,
    }
}

fn window(w: &WindowArgs) -> Window {
    Window { from: w.from, to: w.to }
}

fn parse_flag(raw: &str) -> Result<Binding> {
    Binding::parse(raw).ok_or_else(|| CliError::Usage(format!("unknown flag {raw:?}")))
}

fn parse_var(raw: &str) -> Result<Variable> {
    Variable::parse(raw).ok_or_else(|| CliError::Usage(format!("unknown variable {raw:?}")))
}

fn analyze(path: &Path, what: Analysis) -> Result<u8> {
    let archive = open_archive(path)?;
    match what {
        Analysis::Summary { window: w, json } => {
            let table = summarize(&archive, window(&w), unit(w.unit))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
            } else {
                print!("{}", table.render());
            }
        }
        Analysis::Correlate {
            var,
            flag,
            window: w,
            json,
        } => {
            let flag = parse_flag(&flag)?;
            let vars = match var {
                Some(v) => vec![parse_var(&v)?],
                None => vec![Variable::Inertia, Variable::Demand, Variable::Wind],
            };
            let stats = vars
                .into_iter()
                .map(|v| correlate(&archive, v, flag, window(&w), unit(w.unit)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                println!("{:<8} {:<10} {:>8} {:>7} {:>9} {:>14} {:>14}", "var", "flag", "r", "n", "insecure", "mean|insecure", "mean|secure");
                for s in &stats {
                    println!(
                        "{:<8} {:<10} {:>8.4} {:>7} {:>9} {:>14.1} {:>14.1}",
                        format!("{:?}", s.variable).to_lowercase(),
                        s.flag.label(),
                        s.r,
                        s.n,
                        s.n_insecure,
                        s.mean_insecure,
                        s.mean_secure
                    );
                }
            }
        }
        Analysis::Scatter {
            x,
            y,
            flag,
            from,
            to,
            output,
        } => {
            let data = scatter_export(&archive, parse_var(&x)?, parse_var(&y)?, parse_flag(&flag)?, Window { from, to })?;
            let csv = data.to_csv();
            match output {
                Some(p) => fs::write(&p, csv).map_err(io_err(&p))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(0)
}

fn fixture(what: Fixture) -> Result<u8> {
    match what {
        Fixture::Snapshot { kind, output } => {
            let snap = match kind {
                SnapshotKind::Ring => fixtures::ring_area(10, 30_000.0, 0.0),
                SnapshotKind::RocofPlus => fixtures::rocof_plus_area(),
                SnapshotKind::RocofMinus => fixtures::rocof_minus_area(),
                SnapshotKind::HighSnsp => fixtures::high_snsp_area(),
                SnapshotKind::Synthetic => fixtures::synthetic_network(&fixtures::SyntheticSpec::default()),
            };
            fs::write(&output, snap.to_json()).map_err(io_err(&output))?;
        }
        Fixture::Archive {
            dir,
            cycles,
            cases_per_cycle,
            seed,
        } => {
            let mut archive = CaseArchive::open(&dir).map_err(|source| CliError::Archive {
                path: dir.clone(),
                source,
            })?;
            for report in planted::ruled_archive(cycles, cases_per_cycle, &planted::directional_rules(), seed) {
                archive.append(report, None).map_err(|source| CliError::Archive {
                    path: dir.clone(),
                    source,
                })?;
            }
            println!("{} cycles written to {}", archive.len(), dir.display());
        }
    }
    Ok(0)
}
