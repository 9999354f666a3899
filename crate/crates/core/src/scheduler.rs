//! Strict FIFO batch queue.
//!
//! Jobs run in submit order (ties broken by job id). A job starts only when
//! `node_count` nodes are Idle at once, and a job that cannot start blocks
//! everything behind it; there is no backfill. Nodes are handed out
//! longest-idle first.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cluster::{Cluster, CoreError, JobId, JobRecord, JobSpec, JobState, NodeId, NodeRecord, NodeState};
use crate::event::EventKind;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("{job} needs {node_count} nodes but the cluster is capped at {max_nodes}")]
    JobTooLarge { job: JobId, node_count: u32, max_nodes: u32 },
    #[error("{0} is not running")]
    NotRunning(JobId),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueueState {
    pending: Vec<JobId>,
    running: BTreeSet<JobId>,
}

impl QueueState {
    pub fn pending(&self) -> &[JobId] {
        &self.pending
    }

    pub fn running(&self) -> &BTreeSet<JobId> {
        &self.running
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty() && self.running.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub job: JobId,
    pub nodes: Vec<NodeId>,
}

/// Σ node_count over pending jobs, capped at `max_nodes`.
pub fn pending_need(queue: &QueueState, jobs: &BTreeMap<JobId, JobRecord>, max_nodes: u32) -> u32 {
    let total: u64 = queue.pending.iter().filter_map(|id| jobs.get(id)).map(|j| u64::from(j.spec.node_count)).sum();
    total.min(u64::from(max_nodes)) as u32
}

/// Nodes the queue still needs beyond what is already Requested,
/// Provisioning, or Idle. Allocated nodes serve running jobs and do not count.
pub fn demand(
    queue: &QueueState,
    jobs: &BTreeMap<JobId, JobRecord>,
    nodes: &BTreeMap<NodeId, NodeRecord>,
    max_nodes: u32,
) -> u32 {
    let need = pending_need(queue, jobs, max_nodes);
    let supply = nodes
        .values()
        .filter(|n| matches!(n.state, NodeState::Requested | NodeState::Provisioning | NodeState::Idle))
        .count();
    need.saturating_sub(u32::try_from(supply).unwrap_or(u32::MAX))
}

/// FIFO placement plan without side effects.
pub fn plan_assignments(
    queue: &QueueState,
    jobs: &BTreeMap<JobId, JobRecord>,
    nodes: &BTreeMap<NodeId, NodeRecord>,
) -> Vec<Assignment> {
    let mut idle: Vec<&NodeRecord> = nodes.values().filter(|n| n.state == NodeState::Idle).collect();
    idle.sort_by_key(|n| (n.idle_since, n.node_id));
    let mut free = idle.into_iter().map(|n| n.node_id);

    let mut remaining = nodes.values().filter(|n| n.state == NodeState::Idle).count();
    let mut plan = Vec::new();
    for id in &queue.pending {
        let Some(job) = jobs.get(id) else { continue };
        let want = job.spec.node_count as usize;
        if want > remaining {
            break;
        }
        remaining -= want;
        plan.push(Assignment { job: *id, nodes: free.by_ref().take(want).collect() });
    }
    plan
}

impl Cluster {
    /// Queues a job. Jobs that could never fit under `max_nodes` are refused
    /// up front; unpinned images are accepted with an `ImageUnpinned` warning.
    pub fn submit(&mut self, spec: JobSpec) -> Result<JobId, SchedulerError> {
        let max_nodes = self.config().max_nodes;
        if spec.node_count > max_nodes {
            return Err(SchedulerError::JobTooLarge { job: spec.job_id, node_count: spec.node_count, max_nodes });
        }
        let id = spec.job_id;
        let key = (spec.submit_time, id);
        let payload = [
            ("job", id.to_string()),
            ("nodes", spec.node_count.to_string()),
            ("tasks", spec.tasks_per_node.to_string()),
            ("image", spec.image.to_string()),
        ];
        let unpinned = !spec.image.is_pinned();
        let image = spec.image.to_string();
        self.insert_job(spec)?;

        let jobs = &self.jobs;
        let pos = self
            .queue
            .pending
            .iter()
            .position(|other| {
                let o = &jobs[other].spec;
                (o.submit_time, o.job_id) > key
            })
            .unwrap_or(self.queue.pending.len());
        self.queue.pending.insert(pos, id);

        self.record(EventKind::JobSubmitted, payload);
        if unpinned {
            self.record(EventKind::ImageUnpinned, [("job", id.to_string()), ("image", image)]);
        }
        Ok(id)
    }

    pub fn demand(&self) -> u32 {
        demand(&self.queue, &self.jobs, &self.nodes, self.config().max_nodes)
    }

    /// Starts every job the FIFO plan allows at the current time.
    pub fn try_schedule(&mut self) -> Result<Vec<Assignment>, SchedulerError> {
        let plan = plan_assignments(&self.queue, &self.jobs, &self.nodes);
        for a in &plan {
            for node in &a.nodes {
                self.transition_node(*node, NodeState::Allocated, &[("job", a.job.to_string())])?;
            }
            self.start_job(a.job, a.nodes.iter().copied().collect())?;
            self.queue.pending.retain(|j| *j != a.job);
            self.queue.running.insert(a.job);
        }
        Ok(plan)
    }

    /// Ends a running job with `outcome` and returns its nodes to Idle.
    pub fn finish(&mut self, job: JobId, outcome: JobState) -> Result<BTreeSet<NodeId>, SchedulerError> {
        if !self.queue.running.contains(&job) {
            return Err(SchedulerError::NotRunning(job));
        }
        let nodes = self.end_job(job, outcome)?;
        self.queue.running.remove(&job);
        for node in &nodes {
            self.transition_node(*node, NodeState::Idle, &[("job", job.to_string())])?;
        }
        Ok(nodes)
    }
}
