//! `gridsa`: batch frontend to the security assessment engine.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
   0  success; for `screen`, every contingency secure
   1  invalid snapshot (validation findings printed)
   2  I/O, configuration or usage error
   3  `screen`: base case insecure (failed report still written)
      `serve`: listen address unavailable
   4  `analyze`: no complete cycle in the window
   5  `analyze`: degenerate correlation (a class is empty or a variable is constant)
  10  `screen`: at least one insecure contingency";

#[derive(Debug, Parser)]
#[command(name = "gridsa", version, about = "Online dynamic security assessment", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the commands that run the engine.
#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Engine config file (TOML). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Screening worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Policy profile name (`2023`, `2030` or one defined in the config).
    #[arg(long, global = true, value_name = "NAME")]
    pub policy_profile: Option<String>,
    /// Override a config value. A bare key names a security limit
    /// (`rocof_limit=0.8`); a dotted key any config entry
    /// (`voltage.v_min=0.92`). Repeatable.
    #[arg(long, global = true, value_name = "K=V")]
    pub limits_override: Vec<String>,
    /// Write per-case frequency traces as CSV into this directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub dump_traces: Option<PathBuf>,
    /// Warn about unknown snapshot keys instead of rejecting the document.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Zero the timing fields of written reports so runs compare byte for byte.
    #[arg(long, global = true)]
    pub normalize_output: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a snapshot document and print any findings.
    Validate {
        snapshot: PathBuf,
    },
    /// Run one full assessment cycle offline and write the cycle report.
    Screen {
        snapshot: PathBuf,
        /// Where to write the cycle report document.
        #[arg(short, long, value_name = "PATH")]
        output: PathBuf,
        /// Print the report as JSON on stdout instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Analytics over a cycle archive.
    Analyze {
        archive: PathBuf,
        #[command(subcommand)]
        what: Analysis,
    },
    /// Run the assessment service until SIGINT or SIGTERM.
    Serve,
    /// Write synthetic inputs.
    Fixture {
        #[command(subcommand)]
        what: Fixture,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitArg {
    /// Every contingency of every cycle counts once.
    CycleCase,
    /// Every cycle counts once; a cycle is insecure if any case is.
    Cycle,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// First snapshot timestamp included (Unix seconds).
    #[arg(long)]
    pub from: Option<i64>,
    /// Last snapshot timestamp included (Unix seconds).
    #[arg(long)]
    pub to: Option<i64>,
    #[arg(long, value_enum, default_value = "cycle-case")]
    pub unit: UnitArg,
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// Per-constraint table of binding cases.
    Summary {
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        json: bool,
    },
    /// Point-biserial correlation between a system variable and a flag.
    Correlate {
        /// `inertia`, `demand` or `wind`; all three when omitted.
        #[arg(long)]
        var: Option<String>,
        /// `rocof_plus`, `rocof_minus`, `nadir`, `zenith`, `rotor_angle` or `voltage`.
        #[arg(long)]
        flag: String,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        json: bool,
    },
    /// One row per cycle: two system variables and whether the flag bound.
    Scatter {
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        flag: String,
        #[arg(long)]
        from: Option<i64>,
        #[arg(long)]
        to: Option<i64>,
        /// CSV destination; stdout when omitted.
        #[arg(short, long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SnapshotKind {
    /// Ten-machine ring, secure under every contingency.
    Ring,
    /// Low-inertia area whose HVDC export trip breaks RoCoF+.
    RocofPlus,
    /// Low-inertia area whose largest unit trip breaks RoCoF-.
    RocofMinus,
    /// 78 % SNSP area.
    HighSnsp,
    /// Two-area network with roughly 800 contingencies.
    Synthetic,
}

#[derive(Debug, Subcommand)]
pub enum Fixture {
    /// Write a snapshot document.
    Snapshot {
        #[arg(value_enum)]
        kind: SnapshotKind,
        #[arg(short, long, value_name = "PATH")]
        output: PathBuf,
    },
    /// Fill an archive with cycles whose bindings follow planted rules:
    /// RoCoF+ and Zenith favour low inertia, low demand and high wind,
    /// RoCoF- and Nadir the opposite.
    Archive {
        dir: PathBuf,
        /// Five-minute cycles; the default spans 30 days.
        #[arg(long, default_value_t = 8640)]
        cycles: usize,
        #[arg(long, default_value_t = 10)]
        cases_per_cycle: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let code = match commands::run(cli.command, &cli.engine) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gridsa: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code)
}
