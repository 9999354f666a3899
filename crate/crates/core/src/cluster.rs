//! Cluster state: jobs, ephemeral worker nodes, the virtual clock, and the
//! event log every mutation is written to.
//!
//! [`Cluster`] is the single writer. Scheduling and scaling logic live in
//! [`crate::scheduler`] and [`crate::autoscaler`] but mutate state only through
//! the transition methods here, so the log always replays to the current
//! tables. The headnode is implicit and never appears as a node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::event::{EventKind, EventLog};
use crate::repro::{ImageRef, MpiCompatRule, MpiRuntime};
use crate::scheduler::QueueState;
use crate::time::{Clock, Timestamp, VirtualClock};

macro_rules! id_newtype {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                s.strip_prefix($prefix)
                    .filter(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| format!(concat!("expected ", $prefix, "<number>, got {:?}"), s))
            }
        }
    };
}

id_newtype!(JobId, "j");
id_newtype!(NodeId, "n");

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub job_id: JobId,
    pub node_count: u32,
    pub tasks_per_node: u32,
    pub walltime_limit: Duration,
    pub image: ImageRef,
    pub command: String,
    pub submit_time: Timestamp,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.node_count == 0 {
            return Err(CoreError::InvalidJob(self.job_id, "node_count must be at least 1"));
        }
        if self.tasks_per_node == 0 {
            return Err(CoreError::InvalidJob(self.job_id, "tasks_per_node must be at least 1"));
        }
        if self.walltime_limit.is_zero() {
            return Err(CoreError::InvalidJob(self.job_id, "walltime_limit must be positive"));
        }
        Ok(())
    }

    /// Total MPI ranks: one per task on every node.
    pub fn num_procs(&self) -> u64 {
        u64::from(self.node_count) * u64::from(self.tasks_per_node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed,
    TimedOut,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::TimedOut)
    }

    pub fn name(self) -> &'static str {
        match self {
            JobState::Pending => "Pending",
            JobState::Running => "Running",
            JobState::Completed => "Completed",
            JobState::Failed => "Failed",
            JobState::TimedOut => "TimedOut",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JobState {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        [JobState::Pending, JobState::Running, JobState::Completed, JobState::Failed, JobState::TimedOut]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub spec: JobSpec,
    pub state: JobState,
    pub assigned_nodes: BTreeSet<NodeId>,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
}

impl JobRecord {
    pub fn new(spec: JobSpec) -> Self {
        JobRecord { spec, state: JobState::Pending, assigned_nodes: BTreeSet::new(), start_time: None, end_time: None }
    }

    pub fn wait_time(&self) -> Option<Duration> {
        self.start_time.map(|s| s.since(self.spec.submit_time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeState {
    Requested,
    Provisioning,
    Idle,
    Allocated,
    Draining,
    Terminating,
    Terminated,
    Failed,
}

impl NodeState {
    pub const ALL: [NodeState; 8] = [
        NodeState::Requested,
        NodeState::Provisioning,
        NodeState::Idle,
        NodeState::Allocated,
        NodeState::Draining,
        NodeState::Terminating,
        NodeState::Terminated,
        NodeState::Failed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeState::Requested => "Requested",
            NodeState::Provisioning => "Provisioning",
            NodeState::Idle => "Idle",
            NodeState::Allocated => "Allocated",
            NodeState::Draining => "Draining",
            NodeState::Terminating => "Terminating",
            NodeState::Terminated => "Terminated",
            NodeState::Failed => "Failed",
        }
    }

    /// Counts toward the `max_nodes` cap.
    pub fn is_live(self) -> bool {
        !matches!(self, NodeState::Terminated | NodeState::Failed)
    }

    /// Legal edges of the worker lifecycle.
    pub fn can_transition(self, to: NodeState) -> bool {
        use NodeState::*;
        match (self, to) {
            (Requested, Provisioning)
            | (Provisioning, Idle)
            | (Idle, Allocated)
            | (Allocated, Idle)
            | (Idle, Draining)
            | (Draining, Terminating)
            | (Terminating, Terminated)
            | (Failed, Terminating) => true,
            (from, Failed) => !matches!(from, Terminated | Failed),
            _ => false,
        }
    }

    /// Event recorded when a node enters `self` from `from`.
    pub fn entry_event(self, from: NodeState) -> EventKind {
        match self {
            NodeState::Requested => EventKind::NodeRequested,
            NodeState::Provisioning => EventKind::NodeProvisioning,
            NodeState::Idle if from == NodeState::Provisioning => EventKind::NodeActive,
            NodeState::Idle => EventKind::NodeIdle,
            NodeState::Allocated => EventKind::NodeAllocated,
            NodeState::Draining => EventKind::NodeDraining,
            NodeState::Terminating => EventKind::NodeTerminating,
            NodeState::Terminated => EventKind::NodeTerminated,
            NodeState::Failed => EventKind::NodeFailed,
        }
    }

    /// Inverse of [`NodeState::entry_event`] for node events.
    pub fn entered_by(kind: EventKind) -> Option<NodeState> {
        Some(match kind {
            EventKind::NodeRequested => NodeState::Requested,
            EventKind::NodeProvisioning => NodeState::Provisioning,
            EventKind::NodeActive | EventKind::NodeIdle => NodeState::Idle,
            EventKind::NodeAllocated => NodeState::Allocated,
            EventKind::NodeDraining => NodeState::Draining,
            EventKind::NodeTerminating => NodeState::Terminating,
            EventKind::NodeTerminated => NodeState::Terminated,
            EventKind::NodeFailed => NodeState::Failed,
            _ => return None,
        })
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub instance_id: Option<String>,
    pub flavor: String,
    pub image: String,
    pub state: NodeState,
    pub created_at: Timestamp,
    pub idle_since: Option<Timestamp>,
    pub terminated_at: Option<Timestamp>,
}

impl NodeRecord {
    pub fn new(node_id: NodeId, flavor: impl Into<String>, image: impl Into<String>, now: Timestamp) -> Self {
        NodeRecord {
            node_id,
            instance_id: None,
            flavor: flavor.into(),
            image: image.into(),
            state: NodeState::Requested,
            created_at: now,
            idle_since: None,
            terminated_at: None,
        }
    }

    /// Returns the record after moving to `target` at `now`. Entering Idle
    /// stamps `idle_since`; leaving it clears the stamp.
    pub fn transition(&self, target: NodeState, now: Timestamp) -> Result<NodeRecord, CoreError> {
        if !self.state.can_transition(target) {
            return Err(CoreError::IllegalTransition { from: self.state, to: target });
        }
        let mut next = self.clone();
        next.state = target;
        next.idle_since = if target == NodeState::Idle { Some(now) } else { None };
        if target == NodeState::Terminated {
            next.terminated_at = Some(now);
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SharedStorageSpec {
    pub home_gb: u64,
    pub work_gb: u64,
    pub software_gb: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub name: String,
    pub max_nodes: u32,
    pub min_nodes: u32,
    pub idle_timeout: Duration,
    pub reconcile_interval: Duration,
    pub node_flavor: String,
    pub node_image: String,
    pub cores_per_node: u32,
    pub mem_per_node_bytes: u64,
    pub rmax_per_node_gflops: f64,
    pub storage: SharedStorageSpec,
    pub host_mpi: MpiRuntime,
    pub mpi_rule: MpiCompatRule,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |msg: &'static str| Err(CoreError::InvalidConfig(msg));
        if self.name.is_empty() {
            return bad("name must not be empty");
        }
        if self.max_nodes == 0 {
            return bad("max_nodes must be at least 1");
        }
        if self.min_nodes > self.max_nodes {
            return bad("min_nodes must not exceed max_nodes");
        }
        if self.idle_timeout.is_zero() {
            return bad("idle_timeout must be positive");
        }
        if self.reconcile_interval.is_zero() {
            return bad("reconcile_interval must be positive");
        }
        if self.node_flavor.is_empty() || self.node_image.is_empty() {
            return bad("node_flavor and node_image must be set");
        }
        if self.cores_per_node == 0 {
            return bad("cores_per_node must be at least 1");
        }
        if self.mem_per_node_bytes == 0 {
            return bad("mem_per_node_bytes must be positive");
        }
        if !(self.rmax_per_node_gflops.is_finite() && self.rmax_per_node_gflops > 0.0) {
            return bad("rmax_per_node_gflops must be a positive number");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("illegal node transition {from} -> {to}")]
    IllegalTransition { from: NodeState, to: NodeState },
    #[error("illegal job transition {from} -> {to}")]
    IllegalJobTransition { from: JobState, to: JobState },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("duplicate job id {0}")]
    DuplicateJob(JobId),
    #[error("invalid job {0}: {1}")]
    InvalidJob(JobId, &'static str),
    #[error("invalid cluster config: {0}")]
    InvalidConfig(&'static str),
    #[error("clock cannot move back from {now} to {requested}")]
    ClockWentBackwards { now: Timestamp, requested: Timestamp },
}

/// Cluster tables plus the virtual clock and event log. All state changes go
/// through `&mut self`, which gives the single-writer discipline for free;
/// [`Cluster::snapshot`] hands out read-only copies.
#[derive(Debug, Clone)]
pub struct Cluster {
    config: ClusterConfig,
    clock: VirtualClock,
    pub(crate) jobs: BTreeMap<JobId, JobRecord>,
    pub(crate) nodes: BTreeMap<NodeId, NodeRecord>,
    pub(crate) queue: QueueState,
    log: EventLog,
    next_node: u64,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self, CoreError> {
        config.validate()?;
        Ok(Cluster {
            config,
            clock: VirtualClock::new(),
            jobs: BTreeMap::new(),
            nodes: BTreeMap::new(),
            queue: QueueState::default(),
            log: EventLog::new(),
            next_node: 1,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn advance_to(&mut self, t: Timestamp) -> Result<(), CoreError> {
        if self.clock.advance_to(t) {
            Ok(())
        } else {
            Err(CoreError::ClockWentBackwards { now: self.now(), requested: t })
        }
    }

    pub fn jobs(&self) -> &BTreeMap<JobId, JobRecord> {
        &self.jobs
    }

    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeRecord> {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn queue(&self) -> &QueueState {
        &self.queue
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn live_count(&self) -> usize {
        self.nodes.values().filter(|n| n.state.is_live()).count()
    }

    pub fn count_in(&self, states: &[NodeState]) -> usize {
        self.nodes.values().filter(|n| states.contains(&n.state)).count()
    }

    pub(crate) fn record<K: Into<String>, V: Into<String>>(
        &mut self,
        kind: EventKind,
        payload: impl IntoIterator<Item = (K, V)>,
    ) {
        let now = self.now();
        self.log.append(now, kind, payload);
    }

    /// Registers a fresh worker in `Requested`.
    pub fn request_node(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        let record = NodeRecord::new(id, self.config.node_flavor.clone(), self.config.node_image.clone(), self.now());
        self.nodes.insert(id, record);
        self.record(EventKind::NodeRequested, [("node", id.to_string())]);
        id
    }

    pub fn set_instance_id(&mut self, id: NodeId, instance: impl Into<String>) -> Result<(), CoreError> {
        let node = self.nodes.get_mut(&id).ok_or(CoreError::UnknownNode(id))?;
        node.instance_id = Some(instance.into());
        Ok(())
    }

    /// Moves node `id` to `target` and logs the entry event. `extra` pairs are
    /// appended to the payload after `node` and, when known, `instance`.
    pub fn transition_node(
        &mut self,
        id: NodeId,
        target: NodeState,
        extra: &[(&str, String)],
    ) -> Result<&NodeRecord, CoreError> {
        let now = self.now();
        let current = self.nodes.get(&id).ok_or(CoreError::UnknownNode(id))?;
        let next = current.transition(target, now)?;
        let kind = target.entry_event(current.state);

        let mut payload = vec![("node".to_string(), id.to_string())];
        if let Some(inst) = &next.instance_id {
            payload.push(("instance".to_string(), inst.clone()));
        }
        payload.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        self.log.append(now, kind, payload);

        self.nodes.insert(id, next);
        Ok(&self.nodes[&id])
    }

    pub(crate) fn insert_job(&mut self, spec: JobSpec) -> Result<(), CoreError> {
        spec.validate()?;
        if self.jobs.contains_key(&spec.job_id) {
            return Err(CoreError::DuplicateJob(spec.job_id));
        }
        self.jobs.insert(spec.job_id, JobRecord::new(spec));
        Ok(())
    }

    pub(crate) fn start_job(&mut self, id: JobId, nodes: BTreeSet<NodeId>) -> Result<(), CoreError> {
        let now = self.now();
        let job = self.jobs.get_mut(&id).ok_or(CoreError::UnknownJob(id))?;
        if job.state != JobState::Pending {
            return Err(CoreError::IllegalJobTransition { from: job.state, to: JobState::Running });
        }
        debug_assert_eq!(nodes.len(), job.spec.node_count as usize);
        job.state = JobState::Running;
        job.assigned_nodes = nodes;
        job.start_time = Some(now);
        let list = job.assigned_nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        let wait = now.since(job.spec.submit_time).as_millis().to_string();
        self.record(EventKind::JobStarted, [("job", id.to_string()), ("nodes", list), ("wait_ms", wait)]);
        Ok(())
    }

    /// Ends a running job and returns the nodes it held.
    pub(crate) fn end_job(&mut self, id: JobId, outcome: JobState) -> Result<BTreeSet<NodeId>, CoreError> {
        let now = self.now();
        let job = self.jobs.get_mut(&id).ok_or(CoreError::UnknownJob(id))?;
        if job.state != JobState::Running || !outcome.is_terminal() {
            return Err(CoreError::IllegalJobTransition { from: job.state, to: outcome });
        }
        job.state = outcome;
        job.end_time = Some(now);
        let nodes = std::mem::take(&mut job.assigned_nodes);
        self.record(EventKind::JobEnded, [("job", id.to_string()), ("state", outcome.to_string())]);
        Ok(nodes)
    }

    pub fn snapshot(&self) -> ClusterSnapshot {
        ClusterSnapshot {
            time: self.now(),
            nodes: self.nodes.clone(),
            pending_need: crate::scheduler::pending_need(&self.queue, &self.jobs, self.config.max_nodes),
        }
    }
}

/// Read-only copy of the node table plus the queue's capped node need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSnapshot {
    pub time: Timestamp,
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    pub pending_need: u32,
}
