//! Command-line scenario runner.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use log::info;
use thiserror::Error;

use rafsim::engine::{parse_scenario, run_sweep, Scenario, Simulation};
use rafsim::metrics::{compare, export_comparison_csv, export_csv, summarize, MetricsReport};
use rafsim::pathfinder::{CountMode, Strategy};
use rafsim::reliability::{PathReliabilityRule, ReliabilityMode};
use rafsim::topology::{parse_topology, Topology};

#[derive(Debug, Error)]
pub enum CliError {
    /// Help or version text; not a failure.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(
    name = "rafsim",
    version,
    about = "Run a flow-installation scenario and export metrics"
)]
struct Args {
    /// Topology file.
    #[arg(long, value_name = "FILE")]
    topology: PathBuf,
    /// Scenario file.
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// raf, raf-distance or all-paths; repeat to sweep several.
    #[arg(long = "strategy", value_name = "NAME")]
    strategies: Vec<Strategy>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// total or alternates.
    #[arg(long, value_name = "MODE")]
    count_mode: Option<CountMode>,
    /// product or min.
    #[arg(long, value_name = "RULE")]
    path_rule: Option<PathReliabilityRule>,
    /// static or estimated.
    #[arg(long, value_name = "MODE")]
    reliability: Option<ReliabilityMode>,
    #[arg(long, value_enum)]
    disjoint: Option<OnOff>,
    /// Strategies simulated in parallel.
    #[arg(long, default_value_t = 1, value_name = "N")]
    jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub topology: PathBuf,
    pub scenario: PathBuf,
    /// Non-empty, without duplicates.
    pub strategies: Vec<Strategy>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub count_mode: Option<CountMode>,
    pub path_rule: Option<PathReliabilityRule>,
    pub reliability: Option<ReliabilityMode>,
    pub disjoint: Option<bool>,
    pub jobs: usize,
}

/// `argv` includes the program name.
pub fn parse_args<I, T>(argv: I) -> Result<RunRequest, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    for path in [&args.topology, &args.scenario] {
        if let Err(e) = fs::metadata(path).and_then(|m| {
            if m.is_file() {
                Ok(())
            } else {
                Err(std::io::Error::other("not a regular file"))
            }
        }) {
            return Err(CliError::Input(format!("{}: {e}", path.display())));
        }
    }
    let mut strategies = Vec::new();
    for s in args.strategies {
        if !strategies.contains(&s) {
            strategies.push(s);
        }
    }
    if strategies.is_empty() {
        strategies.push(Strategy::Raf);
    }
    Ok(RunRequest {
        topology: args.topology,
        scenario: args.scenario,
        strategies,
        out: args.out,
        seed: args.seed,
        count_mode: args.count_mode,
        path_rule: args.path_rule,
        reliability: args.reliability,
        disjoint: args.disjoint.map(|d| d == OnOff::On),
        jobs: args.jobs,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Load and validate both input files, applying the request's overrides.
pub fn load(req: &RunRequest) -> Result<(Topology, Scenario), CliError> {
    let topo = parse_topology(&read(&req.topology)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", req.topology.display())))?;
    let mut scenario = parse_scenario(&read(&req.scenario)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", req.scenario.display())))?;
    let c = &mut scenario.config;
    if let Some(seed) = req.seed {
        c.seed = seed;
    }
    if let Some(m) = req.count_mode {
        c.count_mode = m;
    }
    if let Some(r) = req.path_rule {
        c.path_rule = r;
    }
    if let Some(r) = req.reliability {
        c.reliability_mode = r;
    }
    if let Some(d) = req.disjoint {
        c.disjoint_alternates = d;
    }
    // resolve host and link names before anything is written
    Simulation::from_scenario(&topo, &scenario, None)
        .map_err(|e| CliError::Input(format!("{}: {e}", req.scenario.display())))?;
    Ok((topo, scenario))
}

fn check_invariants(r: &MetricsReport, capacity: usize) -> Result<(), CliError> {
    if r.injected != r.delivered + r.dropped + r.in_flight {
        return Err(CliError::Internal(format!(
            "{}: packet conservation violated ({} injected, {} delivered, {} dropped, {} in flight)",
            r.strategy, r.injected, r.delivered, r.dropped, r.in_flight
        )));
    }
    if r.delivered as usize != r.deliveries.len() {
        return Err(CliError::Internal(format!(
            "{}: delay count mismatch",
            r.strategy
        )));
    }
    if let Some(s) = r
        .per_switch_rules
        .iter()
        .find(|s| s.final_count > s.peak || s.peak > capacity)
    {
        return Err(CliError::Internal(format!(
            "{}: switch {} holds {} rules (peak {}, capacity {capacity})",
            r.strategy, s.switch, s.final_count, s.peak
        )));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table with one row per strategy.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>6} {:>10} {:>9} {:>9} {:>9} {:>10} {:>9} {:>8} {:>10}",
        "strategy",
        "comps",
        "candidates",
        "flow_mods",
        "ctrl_msgs",
        "peak_rule",
        "table_full",
        "delivered",
        "dropped",
        "mean_ms"
    );
    for r in reports {
        let s = summarize(r);
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>10} {:>9} {:>9} {:>9} {:>10} {:>9} {:>8} {:>10}",
            s.strategy,
            s.path_computations,
            s.candidates_ranked,
            s.flow_mods_sent,
            s.control_messages,
            s.max_peak_rules,
            s.table_full_events,
            s.delivered,
            s.dropped,
            opt(s.delay_mean_ms)
        );
    }
    out
}

/// Simulate every requested strategy, write `<out>/<strategy>.csv` (and `comparison.csv` for
/// sweeps) and return the summary table.
pub fn run_scenario(req: &RunRequest) -> Result<String, CliError> {
    let (topo, scenario) = load(req)?;
    let reports = run_sweep(&topo, &scenario, &req.strategies, req.jobs)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    for r in &reports {
        check_invariants(r, scenario.config.table_capacity)?;
    }

    let write_err = |path: &Path, e: std::io::Error| {
        CliError::Input(format!("cannot write {}: {e}", path.display()))
    };
    fs::create_dir_all(&req.out).map_err(|e| write_err(&req.out, e))?;
    for r in &reports {
        let path = req.out.join(format!("{}.csv", r.strategy));
        fs::write(&path, export_csv(r)).map_err(|e| write_err(&path, e))?;
        info!("wrote {}", path.display());
    }
    if reports.len() >= 2 {
        let baseline = reports
            .iter()
            .find(|r| r.strategy == Strategy::AllPaths.name())
            .unwrap_or(&reports[0]);
        let comparisons = reports
            .iter()
            .filter(|r| r.strategy != baseline.strategy)
            .map(|r| compare(r, baseline))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let path = req.out.join("comparison.csv");
        fs::write(&path, export_comparison_csv(&comparisons)).map_err(|e| write_err(&path, e))?;
    }
    Ok(summary_table(&reports))
}
