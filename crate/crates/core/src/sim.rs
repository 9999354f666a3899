//! Discrete-event driver that runs a workload trace through the scheduler,
//! the autoscaler, and the simulated provider on the virtual clock.
//!
//! At each distinct event time the driver, in order: ends jobs whose run (or
//! walltime) is over, activates instances whose provisioning finished,
//! submits trace entries that are due, starts whatever the FIFO queue allows,
//! and, on reconcile ticks, plans and applies scaling actions. The clock then
//! jumps to the earliest pending time among those four sources, so the loop
//! always makes progress.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::time::Duration;

use thiserror::Error;

use crate::autoscaler::{apply, reconcile, RetryPolicy};
use crate::cluster::{Cluster, ClusterConfig, CoreError, JobId, JobSpec, JobState, NodeId, NodeState};
use crate::event::{EventKind, EventLog};
use crate::hpl::{build_hybrid_command, HplError, INPUT_FILE_NAME};
use crate::provider::{resolve, CloudProfile, CloudProvider, ProfileError, SimProvider, SimProviderConfig};
use crate::repro::check_mpi_compat;
use crate::scheduler::SchedulerError;
use crate::time::{duration_millis, Timestamp};
use crate::trace::WorkloadTrace;
use crate::usage::{accumulate_usage, live_timeline, MalformedLog, UsageReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("{job}: {source}")]
    IncompatibleMpi { job: JobId, source: HplError },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid provider config: {0}")]
    Provider(&'static str),
    #[error("simulation passed its horizon at t={at}ms with work outstanding")]
    Stalled { at: Timestamp },
    #[error(transparent)]
    Log(#[from] MalformedLog),
}

impl SimError {
    /// Errors raised while checking inputs, before the clock starts.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::Profile(_)
                | SimError::Scheduler(SchedulerError::JobTooLarge { .. })
                | SimError::IncompatibleMpi { .. }
                | SimError::Provider(_)
        ) || matches!(self, SimError::Core(CoreError::InvalidConfig(_) | CoreError::InvalidJob(..)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Give up once the clock passes this point. Defaults to the last
    /// submission plus every job's walltime plus seven days.
    pub horizon: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub state: JobState,
    pub submit_time: Timestamp,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
    pub wait: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub end_time: Timestamp,
    pub usage: UsageReport,
    pub outcomes: BTreeMap<JobId, JobOutcome>,
    /// `(time, live node count)` at each change.
    pub timeline: Vec<(Timestamp, u32)>,
    pub instances_created: Vec<String>,
    pub instances_deleted: Vec<String>,
    /// Provider holds exactly the instances of nodes still in the cluster,
    /// and every other instance it ever issued was deleted.
    pub leak_check: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub report: SimulationReport,
    pub log: EventLog,
}

/// Checks every trace entry against the cluster and builds its job spec.
fn ingest(config: &ClusterConfig, trace: &WorkloadTrace) -> Result<Vec<JobSpec>, SimError> {
    (0..trace.entries.len())
        .map(|i| {
            let entry = &trace.entries[i];
            let job = WorkloadTrace::job_id(i);
            if entry.node_count > config.max_nodes {
                return Err(SchedulerError::JobTooLarge {
                    job,
                    node_count: entry.node_count,
                    max_nodes: config.max_nodes,
                }
                .into());
            }
            let compat = check_mpi_compat(&config.host_mpi, &entry.mpi, config.mpi_rule);
            let draft = trace.job_spec(i, String::new());
            let command = build_hybrid_command(&draft, &entry.image, &compat, INPUT_FILE_NAME)
                .map_err(|source| SimError::IncompatibleMpi { job, source })?;
            Ok(JobSpec { command, ..draft })
        })
        .collect()
}

fn default_horizon(trace: &WorkloadTrace) -> Timestamp {
    let last = trace.entries.last().map(|e| e.submit_time).unwrap_or_default();
    let walltimes: u64 = trace.entries.iter().map(|e| duration_millis(e.walltime_limit)).sum();
    last + Duration::from_millis(walltimes) + Duration::from_secs(7 * 24 * 3600)
}

fn quiescent(cluster: &Cluster) -> bool {
    let idle = cluster.count_in(&[NodeState::Idle]);
    let settled = cluster.count_in(&[NodeState::Idle, NodeState::Terminated]);
    settled == cluster.nodes().len() && idle <= cluster.config().min_nodes as usize
}

pub fn run_simulation(
    config: &ClusterConfig,
    profile: &CloudProfile,
    provider_config: SimProviderConfig,
    retry: &RetryPolicy,
    trace: &WorkloadTrace,
    options: &SimOptions,
) -> Result<SimulationOutput, SimError> {
    profile.validate()?;
    provider_config.validate().map_err(SimError::Provider)?;
    let mut cluster = Cluster::new(config.clone())?;
    let request = resolve(config, profile)?;
    let specs = ingest(config, trace)?;
    let durations: Vec<Duration> = trace.entries.iter().map(|e| e.duration).collect();
    let horizon = options.horizon.unwrap_or_else(|| default_horizon(trace));

    let mut provider = SimProvider::new(provider_config);
    let mut instance_nodes: BTreeMap<String, NodeId> = BTreeMap::new();
    let mut ends: BTreeSet<(Timestamp, JobId)> = BTreeSet::new();
    let mut end_state: BTreeMap<JobId, JobState> = BTreeMap::new();
    let mut next_submission = 0usize;
    let mut next_tick = Timestamp::ZERO;
    let interval = config.reconcile_interval;

    loop {
        let all_submitted = next_submission == specs.len();
        if all_submitted && ends.is_empty() && cluster.queue().is_empty() && quiescent(&cluster) {
            break;
        }

        let candidates = [
            specs.get(next_submission).map(|s| s.submit_time),
            ends.first().map(|(t, _)| *t),
            provider.next_activation(),
            Some(next_tick),
        ];
        let t = candidates.into_iter().flatten().min().expect("reconcile tick is always pending");
        if t > horizon {
            return Err(SimError::Stalled { at: t });
        }
        cluster.advance_to(t)?;

        while let Some(&(end, job)) = ends.first() {
            if end > t {
                break;
            }
            ends.pop_first();
            cluster.finish(job, end_state[&job])?;
        }

        for activation in provider.take_activations(t) {
            if let Some(&node) = instance_nodes.get(&activation.instance_id) {
                if cluster.node(node).is_some_and(|n| n.state == NodeState::Provisioning) {
                    cluster.transition_node(node, NodeState::Idle, &[])?;
                }
            }
        }

        while let Some(spec) = specs.get(next_submission) {
            if spec.submit_time > t {
                break;
            }
            cluster.submit(spec.clone())?;
            next_submission += 1;
        }

        for assignment in cluster.try_schedule()? {
            let idx = (assignment.job.0 - 1) as usize;
            let walltime = specs[idx].walltime_limit;
            let (run, state) = if durations[idx] > walltime {
                (walltime, JobState::TimedOut)
            } else {
                (durations[idx], JobState::Completed)
            };
            ends.insert((t + run, assignment.job));
            end_state.insert(assignment.job, state);
        }

        if t == next_tick {
            let demand = cluster.demand();
            let actions = reconcile(&cluster.snapshot(), demand, cluster.config(), t);
            let results = apply(&mut cluster, &actions, &mut provider, &request, retry);
            for node in cluster.nodes().values() {
                if let Some(inst) = &node.instance_id {
                    instance_nodes.entry(inst.clone()).or_insert(node.node_id);
                }
            }
            let applied = results.iter().filter(|(_, o)| o.is_applied()).count();
            cluster.record(
                EventKind::ReconcileRan,
                [
                    ("demand", demand.to_string()),
                    ("live", cluster.live_count().to_string()),
                    ("actions", actions.len().to_string()),
                    ("applied", applied.to_string()),
                ],
            );
            next_tick = t + interval;
        }
    }

    let end_time = cluster.now();
    let events = cluster.log().events();
    let usage = accumulate_usage(events)?;
    let timeline = live_timeline(events)?;

    let outcomes = cluster
        .jobs()
        .iter()
        .map(|(id, job)| {
            let outcome = JobOutcome {
                state: job.state,
                submit_time: job.spec.submit_time,
                start_time: job.start_time,
                end_time: job.end_time,
                wait: job.wait_time(),
            };
            (*id, outcome)
        })
        .collect();

    let listed: BTreeSet<String> = provider.list_instances().into_iter().map(|(id, _)| id).collect();
    let retained: BTreeSet<String> = cluster
        .nodes()
        .values()
        .filter(|n| n.state != NodeState::Terminated)
        .filter_map(|n| n.instance_id.clone())
        .collect();
    let deleted: BTreeSet<String> = provider.deleted_ids().into_iter().collect();
    let issued = provider.issued_ids();
    let undeleted: BTreeSet<String> = issued.iter().filter(|id| !deleted.contains(*id)).cloned().collect();
    let leak_check = listed == retained && undeleted == retained;

    let report = SimulationReport {
        end_time,
        usage,
        outcomes,
        timeline,
        instances_created: issued,
        instances_deleted: deleted.into_iter().collect(),
        leak_check,
    };
    Ok(SimulationOutput { report, log: cluster.into_log() })
}

fn secs(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

impl SimulationReport {
    pub fn render_human(&self) -> String {
        let mut out = String::new();
        let count = |s: JobState| self.outcomes.values().filter(|o| o.state == s).count();
        let _ = writeln!(out, "Simulation finished at t={}s", secs(self.end_time.as_millis()));
        let _ = writeln!(
            out,
            "Jobs: {} (completed {}, timed out {}, failed {})",
            self.outcomes.len(),
            count(JobState::Completed),
            count(JobState::TimedOut),
            count(JobState::Failed)
        );
        for (id, o) in &self.outcomes {
            let wait = o.wait.map(|w| format!("{}s", secs(duration_millis(w)))).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "  {:<6} {:<10} wait {wait}", id.to_string(), o.state.to_string());
        }
        let u = &self.usage;
        let _ = writeln!(
            out,
            "Usage: {:.3} node-seconds total, {:.3} busy, utilization {:.3}, peak {} nodes",
            u.node_seconds_total, u.node_seconds_busy, u.utilization, u.max_concurrent_nodes
        );
        let _ = writeln!(
            out,
            "Instances: {} created, {} deleted, leak check {}",
            self.instances_created.len(),
            self.instances_deleted.len(),
            if self.leak_check { "ok" } else { "FAILED" }
        );
        out
    }

    /// One record per line: `usage ...`, `job ...`, `timeline ...`, `leak_check ...`.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        let u = &self.usage;
        let _ = writeln!(
            out,
            "usage node_seconds_total={:.3} node_seconds_busy={:.3} utilization={:.6} max_concurrent_nodes={} end_s={}",
            u.node_seconds_total,
            u.node_seconds_busy,
            u.utilization,
            u.max_concurrent_nodes,
            secs(self.end_time.as_millis())
        );
        for (id, o) in &self.outcomes {
            let opt = |t: Option<Timestamp>| t.map(|t| secs(t.as_millis())).unwrap_or_else(|| "-".into());
            let wait = o.wait.map(|w| secs(duration_millis(w))).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "job id={id} state={} submit_s={} start_s={} end_s={} wait_s={wait}",
                o.state,
                secs(o.submit_time.as_millis()),
                opt(o.start_time),
                opt(o.end_time)
            );
        }
        for (t, live) in &self.timeline {
            let _ = writeln!(out, "timeline time_s={} live={live}", secs(t.as_millis()));
        }
        let _ = writeln!(
            out,
            "leak_check ok={} created={} deleted={}",
            self.leak_check,
            self.instances_created.len(),
            self.instances_deleted.len()
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::test_support::config;

    fn run(trace: &str) -> SimulationOutput {
        let trace = WorkloadTrace::parse(trace).unwrap();
        run_simulation(
            &config(10),
            &CloudProfile::bundled("jetstream-like").unwrap(),
            SimProviderConfig::default(),
            &RetryPolicy::default(),
            &trace,
            &SimOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn empty_trace() {
        let out = run("");
        assert!(out.log.is_empty());
        assert_eq!(out.report.usage, UsageReport::default());
        assert!(out.report.outcomes.is_empty());
        assert!(out.report.leak_check);
    }

    #[test]
    fn walltime_cuts_job_short() {
        let out = run("0 1 1 20 10 hub/hpl:latest openmpi-4.0.1\n");
        let o = &out.report.outcomes[&JobId(1)];
        assert_eq!(o.state, JobState::TimedOut);
        assert_eq!(o.end_time.unwrap(), o.start_time.unwrap() + Duration::from_secs(10));
    }

    #[test]
    fn incompatible_mpi_is_rejected_before_running() {
        let trace = WorkloadTrace::parse("0 1 1 20 10 hub/hpl:latest mpich-3.3.2\n").unwrap();
        let err = run_simulation(
            &config(10),
            &CloudProfile::bundled("jetstream-like").unwrap(),
            SimProviderConfig::default(),
            &RetryPolicy::default(),
            &trace,
            &SimOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::IncompatibleMpi { .. }));
        assert!(err.is_validation());
    }

    #[test]
    fn always_failing_provider_stalls() {
        let trace = WorkloadTrace::parse("0 1 1 20 30 hub/hpl:latest openmpi-4.0.1\n").unwrap();
        let err = run_simulation(
            &config(10),
            &CloudProfile::bundled("jetstream-like").unwrap(),
            SimProviderConfig { failure_rate: 1.0, ..Default::default() },
            &RetryPolicy::default(),
            &trace,
            &SimOptions { horizon: Some(Timestamp::from_secs(3600)) },
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Stalled { .. }));
        assert!(!err.is_validation());
    }

    #[test]
    fn commands_are_filled_in() {
        let trace = WorkloadTrace::parse("0 4 6 600 3600 hub/hpl:latest openmpi-4.0.1\n").unwrap();
        let specs = ingest(&config(10), &trace).unwrap();
        assert_eq!(specs[0].command, "mpirun -np 24 singularity exec hpl.sif xhpl ./HPL.dat");
    }

    #[test]
    fn records_render() {
        let out = run("0 2 1 60 600 hub/hpl:latest openmpi-4.0.1\n");
        let rec = out.report.render_records();
        assert!(rec.starts_with("usage "));
        assert!(rec.contains("job id=j1 state=Completed submit_s=0.000 start_s=30.000 end_s=90.000 wait_s=30.000"));
        assert!(rec.trim_end().ends_with("leak_check ok=true created=2 deleted=2"));
        assert!(out.report.render_human().contains("leak check ok"));
    }
}
