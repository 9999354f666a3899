//! Command-line front end. [`dispatch`] is the whole program minus process
//! setup, so tests can drive it with in-memory streams.
//!
//! Exit status: 0 on success, 1 for bad usage or input that fails
//! validation, 2 for I/O and runtime failures.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::cluster::{JobId, JobState};
use crate::config::ClusterFile;
use crate::event::{EventKind, EventLog};
use crate::hpl::{best_result, efficiency, generate_hpl_input, parse_hpl_output, DEFAULT_MEM_FRACTION, DEFAULT_NB};
use crate::provider::{resolve, CloudProfile};
use crate::repro::{check_mpi_compat, Compatibility, Derivation, ImageRef, MpiRuntime};
use crate::sim::{run_simulation, SimOptions};
use crate::time::{duration_millis, secs_to_duration, Timestamp};
use crate::trace::{TraceEntry, WorkloadTrace, HEADER};
use crate::usage::NodeReplay;

pub const CONFIG_ENV: &str = "VCLUSTER_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "vcluster", version, about = "Elastic virtual cluster simulator and HPL tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resolve the cluster config against a cloud profile and print the instance request.
    Deploy {
        #[command(flatten)]
        config: ConfigArg,
        /// Bundled profile name or path to a profile file.
        #[arg(long)]
        profile: String,
    },
    /// Append a job to a workload trace file.
    Submit(SubmitArgs),
    /// Replay an event log and print node and job tables.
    Status {
        #[arg(long)]
        log: PathBuf,
    },
    /// Run a workload trace through the simulated cluster.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        trace: PathBuf,
        /// Overrides the provider seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for events.log, report.txt and report.rec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Size an HPL run and write its input file.
    HplGen {
        #[arg(long)]
        nodes: u64,
        #[arg(long)]
        cores: u64,
        /// Memory per node in GB (10^9 bytes).
        #[arg(long)]
        mem_gb: f64,
        #[arg(long, default_value_t = DEFAULT_MEM_FRACTION)]
        fraction: f64,
        #[arg(long, default_value_t = DEFAULT_NB)]
        nb: u64,
        /// Write the input file here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare measured GFLOPS with the theoretical peak.
    HplReport {
        /// Theoretical peak in GFLOPS.
        #[arg(long)]
        rmax: f64,
        /// Measured GFLOPS, instead of an HPL output file.
        #[arg(long, conflicts_with = "output")]
        gflops: Option<f64>,
        /// HPL output file; the best result row is used.
        #[arg(required_unless_present = "gflops")]
        output: Option<PathBuf>,
    },
    /// Print the content hash of a derivation file.
    Hash { derivation: PathBuf },
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Cluster config file; falls back to $VCLUSTER_CONFIG.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SubmitArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Submit time in seconds.
    #[arg(long)]
    at: f64,
    #[arg(long)]
    nodes: u32,
    #[arg(long)]
    tasks: u32,
    /// Run time in seconds.
    #[arg(long)]
    duration: f64,
    /// Walltime limit in seconds.
    #[arg(long)]
    walltime: f64,
    #[arg(long)]
    image: String,
    /// Container MPI runtime, e.g. openmpi-4.0.1.
    #[arg(long)]
    mpi: String,
    /// When present, the job is checked against this cluster.
    #[command(flatten)]
    config: ConfigArg,
}

enum Failure {
    Usage(String),
    Invalid(String),
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))
}

fn load_config(arg: &ConfigArg) -> Result<ClusterFile, Failure> {
    let path = arg
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage(format!("no cluster config: pass --config or set {CONFIG_ENV}")))?;
    ClusterFile::from_toml(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn load_profile(name_or_path: &str) -> Result<CloudProfile, Failure> {
    if let Some(p) = CloudProfile::bundled(name_or_path) {
        return Ok(p);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        let names: Vec<&str> = CloudProfile::bundled_names().collect();
        return Err(invalid(format!(
            "profile {name_or_path:?} is neither a file nor a bundled profile ({})",
            names.join(", ")
        )));
    }
    CloudProfile::from_toml(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn seconds(name: &str, v: f64) -> Result<std::time::Duration, Failure> {
    secs_to_duration(v).ok_or_else(|| invalid(format!("--{name} must be a non-negative number of seconds")))
}

/// Runs one command line. Returns the process exit status.
pub fn dispatch<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
                1
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
                0
            };
        }
    };
    let result = match cli.command {
        Command::Deploy { config, profile } => deploy(&config, &profile, stdout),
        Command::Submit(args) => submit(&args, stdout),
        Command::Status { log } => status(&log, stdout),
        Command::Simulate { config, profile, trace, seed, out } => {
            simulate(&config, &profile, &trace, seed, out.as_deref(), stdout)
        }
        Command::HplGen { nodes, cores, mem_gb, fraction, nb, out } => {
            hpl_gen(nodes, cores, mem_gb, fraction, nb, out.as_deref(), stdout)
        }
        Command::HplReport { rmax, gflops, output } => hpl_report(rmax, gflops, output.as_deref(), stdout),
        Command::Hash { derivation } => hash(&derivation, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\n{}", Cli::command().render_usage());
            1
        }
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            2
        }
    }
}

fn deploy(config: &ConfigArg, profile: &str, out: &mut dyn Write) -> CmdResult {
    let file = load_config(config)?;
    let profile = load_profile(profile)?;
    let request = resolve(&file.cluster, &profile).map_err(invalid)?;
    emit(out, &format!("# profile {}\n{}", profile.name, request.render()))
}

fn submit(args: &SubmitArgs, out: &mut dyn Write) -> CmdResult {
    let entry = TraceEntry {
        submit_time: Timestamp(duration_millis(seconds("at", args.at)?)),
        node_count: args.nodes,
        tasks_per_node: args.tasks,
        duration: seconds("duration", args.duration)?,
        walltime_limit: seconds("walltime", args.walltime)?,
        image: args.image.parse::<ImageRef>().map_err(invalid)?,
        mpi: args.mpi.parse::<MpiRuntime>().map_err(invalid)?,
    };
    entry.validate().map_err(invalid)?;

    if args.config.config.is_some() {
        let file = load_config(&args.config)?;
        if entry.node_count > file.cluster.max_nodes {
            return Err(invalid(format!(
                "job needs {} nodes but the cluster allows at most {}",
                entry.node_count, file.cluster.max_nodes
            )));
        }
        if let Compatibility::Incompatible(reason) =
            check_mpi_compat(&file.cluster.host_mpi, &entry.mpi, file.cluster.mpi_rule)
        {
            return Err(invalid(format!("container MPI is incompatible with the host: {reason}")));
        }
    }

    let existing = if args.trace.exists() { read(&args.trace)? } else { String::new() };
    let trace = WorkloadTrace::parse(&existing).map_err(|e| invalid(format!("{}: {e}", args.trace.display())))?;
    if trace.entries.last().is_some_and(|last| last.submit_time > entry.submit_time) {
        return Err(invalid("submit time is earlier than the last job in the trace"));
    }
    let mut text = if existing.is_empty() { HEADER.to_string() } else { existing };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&entry.render_line());
    write_file(&args.trace, &text)?;
    emit(out, &format!("{}\n", WorkloadTrace::job_id(trace.entries.len())))
}

fn status(path: &Path, out: &mut dyn Write) -> CmdResult {
    let log = EventLog::parse(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut replay = NodeReplay::new();
    let mut jobs: BTreeMap<JobId, JobState> = BTreeMap::new();
    for e in log.events() {
        replay.step(e).map_err(invalid)?;
        let job = || -> Result<JobId, Failure> {
            e.get("job")
                .and_then(|j| j.parse().ok())
                .ok_or_else(|| invalid(format!("event {}: missing or bad job id", e.seq)))
        };
        match e.kind {
            EventKind::JobSubmitted => {
                jobs.insert(job()?, JobState::Pending);
            }
            EventKind::JobStarted => {
                jobs.insert(job()?, JobState::Running);
            }
            EventKind::JobEnded => {
                let state = e
                    .get("state")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid(format!("event {}: missing or bad job state", e.seq)))?;
                jobs.insert(job()?, state);
            }
            _ => {}
        }
    }

    let mut text = String::new();
    let time = log.last_time().unwrap_or(Timestamp::ZERO);
    text.push_str(&format!("time {}.{:03}s\n", time.as_millis() / 1000, time.as_millis() % 1000));
    let pending = jobs.values().filter(|s| **s == JobState::Pending).count();
    let running = jobs.values().filter(|s| **s == JobState::Running).count();
    text.push_str(&format!("queue: {pending} pending, {running} running\n"));
    let live = replay.states().values().filter(|s| s.is_live()).count();
    text.push_str(&format!("nodes: {live} live of {}\n", replay.states().len()));
    for (id, state) in replay.states() {
        let inst = replay.instances().get(id).map(String::as_str).unwrap_or("-");
        text.push_str(&format!("  {:<6} {:<12} {inst}\n", id.to_string(), state.to_string()));
    }
    text.push_str(&format!("jobs: {}\n", jobs.len()));
    for (id, state) in &jobs {
        text.push_str(&format!("  {:<6} {state}\n", id.to_string()));
    }
    emit(out, &text)
}

fn simulate(
    config: &ConfigArg,
    profile: &str,
    trace_path: &Path,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let mut file = load_config(config)?;
    let profile = load_profile(profile)?;
    let trace =
        WorkloadTrace::parse(&read(trace_path)?).map_err(|e| invalid(format!("{}: {e}", trace_path.display())))?;
    if let Some(seed) = seed {
        file.sim_provider.seed = seed;
    }
    let result =
        run_simulation(&file.cluster, &profile, file.sim_provider, &file.retry, &trace, &SimOptions::default());
    let output = match result {
        Ok(o) => o,
        Err(e) if e.is_validation() => return Err(invalid(e)),
        Err(e) => return Err(Failure::Runtime(e.to_string())),
    };
    let human = output.report.render_human();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("events.log"), &output.log.render())?;
        write_file(&dir.join("report.txt"), &human)?;
        write_file(&dir.join("report.rec"), &output.report.render_records())?;
    }
    emit(out, &human)
}

fn hpl_gen(
    nodes: u64,
    cores: u64,
    mem_gb: f64,
    fraction: f64,
    nb: u64,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if !(mem_gb.is_finite() && mem_gb > 0.0) {
        return Err(invalid("--mem-gb must be positive"));
    }
    let mem_bytes = (mem_gb * 1e9).round() as u64;
    let (cfg, text) = generate_hpl_input(nodes, cores, mem_bytes, fraction, nb).map_err(invalid)?;
    let summary = format!("N={} NB={} P={} Q={} procs={}\n", cfg.n, cfg.nb, cfg.p, cfg.q, cfg.total_procs);
    match out_path {
        Some(path) => {
            write_file(path, &text)?;
            emit(out, &summary)
        }
        None => emit(out, &text),
    }
}

fn hpl_report(rmax: f64, gflops: Option<f64>, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let mut text = String::new();
    let measured = match (gflops, output) {
        (Some(g), _) => g,
        (None, Some(path)) => {
            let rows = parse_hpl_output(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let best = best_result(&rows).ok_or_else(|| invalid(format!("{}: no result rows", path.display())))?;
            text.push_str(&format!(
                "best N={} NB={} P={} Q={} time_s={}\n",
                best.n, best.nb, best.p, best.q, best.time_s
            ));
            best.gflops
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let report = efficiency(measured, rmax).map_err(invalid)?;
    text.push_str(&format!(
        "gflops {:.4}\nrmax {:.4}\nratio {:.4}\nin_band {}\n",
        report.gflops, report.rmax_gflops, report.ratio, report.in_band
    ));
    emit(out, &text)
}

fn hash(path: &Path, out: &mut dyn Write) -> CmdResult {
    let d = Derivation::from_toml(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    emit(out, &format!("{}  {}\n", d.digest(), d.name))
}
