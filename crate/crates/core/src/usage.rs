//! Node-time accounting derived purely from the event log.

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use crate::cluster::{JobId, NodeId, NodeState};
use crate::event::{Event, EventKind};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed event log at seq {seq}: {reason}")]
pub struct MalformedLog {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageReport {
    pub node_seconds_total: f64,
    pub node_seconds_busy: f64,
    pub utilization: f64,
    pub max_concurrent_nodes: u32,
    pub per_job_wait: BTreeMap<JobId, Duration>,
}

impl Default for UsageReport {
    fn default() -> Self {
        UsageReport {
            node_seconds_total: 0.0,
            node_seconds_busy: 0.0,
            utilization: 0.0,
            max_concurrent_nodes: 0,
            per_job_wait: BTreeMap::new(),
        }
    }
}

/// Node state reconstructed from `Node*` events, checked against the
/// lifecycle edges as it goes.
#[derive(Debug, Clone, Default)]
pub struct NodeReplay {
    states: BTreeMap<NodeId, NodeState>,
    instances: BTreeMap<NodeId, String>,
    last: Option<(u64, Timestamp)>,
}

impl NodeReplay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn states(&self) -> &BTreeMap<NodeId, NodeState> {
        &self.states
    }

    pub fn instances(&self) -> &BTreeMap<NodeId, String> {
        &self.instances
    }

    /// Feeds one event. Returns `(node, from, to)` for node transitions; a
    /// fresh `NodeRequested` reports `from == to == Requested`.
    pub fn step(&mut self, e: &Event) -> Result<Option<(NodeId, NodeState, NodeState)>, MalformedLog> {
        let bad = |reason: String| MalformedLog { seq: e.seq, reason };
        match self.last {
            Some((seq, _)) if e.seq != seq + 1 => return Err(bad(format!("seq {} follows {seq}", e.seq))),
            None if e.seq != 1 => return Err(bad("log must start at seq 1".into())),
            Some((_, t)) if e.time < t => return Err(bad("time decreases".into())),
            _ => {}
        }
        self.last = Some((e.seq, e.time));

        let Some(target) = NodeState::entered_by(e.kind) else {
            return Ok(None);
        };
        let node: NodeId =
            e.get("node").ok_or_else(|| bad("node event without node id".into()))?.parse().map_err(bad)?;
        if let Some(inst) = e.get("instance") {
            self.instances.insert(node, inst.to_string());
        }

        if e.kind == EventKind::NodeRequested {
            if self.states.contains_key(&node) {
                return Err(bad(format!("{node} requested twice")));
            }
            self.states.insert(node, NodeState::Requested);
            return Ok(Some((node, NodeState::Requested, NodeState::Requested)));
        }
        let from = *self.states.get(&node).ok_or_else(|| bad(format!("{node} used before request")))?;
        if !from.can_transition(target) || target.entry_event(from) != e.kind {
            return Err(bad(format!("{node}: {} from {from}", e.kind)));
        }
        self.states.insert(node, target);
        Ok(Some((node, from, target)))
    }
}

/// Final state of every node mentioned in `events`.
pub fn replay_nodes(events: &[Event]) -> Result<BTreeMap<NodeId, NodeState>, MalformedLog> {
    let mut replay = NodeReplay::new();
    for e in events {
        replay.step(e)?;
    }
    Ok(replay.states)
}

/// `(time, live node count)` at every change of the live count. Live means
/// any state other than Terminated or Failed.
pub fn live_timeline(events: &[Event]) -> Result<Vec<(Timestamp, u32)>, MalformedLog> {
    let mut replay = NodeReplay::new();
    let mut live: u32 = 0;
    let mut out: Vec<(Timestamp, u32)> = Vec::new();
    for e in events {
        if let Some((_, from, to)) = replay.step(e)? {
            let before = live;
            if from == to {
                live += 1;
            } else if from.is_live() != to.is_live() {
                if to.is_live() {
                    live += 1;
                } else {
                    live -= 1;
                }
            }
            if live != before {
                out.push((e.time, live));
            }
        }
    }
    Ok(out)
}

fn occupies(state: NodeState) -> bool {
    matches!(state, NodeState::Provisioning | NodeState::Idle | NodeState::Allocated | NodeState::Draining)
}

#[derive(Default)]
struct NodeClock {
    first_provisioning: Option<Timestamp>,
    terminated: Option<Timestamp>,
    allocated_since: Option<Timestamp>,
    busy: Duration,
}

/// Node-seconds, utilization, peak concurrency, and job waits from an ordered
/// log.
///
/// A node bills from its first Provisioning event until Terminated (failed
/// nodes keep billing until then); intervals still open when the log ends are
/// closed at the last event's time. Peak concurrency counts nodes in
/// Provisioning, Idle, Allocated, or Draining, sampled once all events at a
/// timestamp have been applied.
pub fn accumulate_usage(events: &[Event]) -> Result<UsageReport, MalformedLog> {
    let Some(end) = events.last().map(|e| e.time) else {
        return Ok(UsageReport::default());
    };

    let mut replay = NodeReplay::new();
    let mut clocks: BTreeMap<NodeId, NodeClock> = BTreeMap::new();
    let mut submitted: BTreeMap<JobId, Timestamp> = BTreeMap::new();
    let mut waits = BTreeMap::new();
    let mut concurrent: u32 = 0;
    let mut peak: u32 = 0;

    for (i, e) in events.iter().enumerate() {
        let bad = |reason: String| MalformedLog { seq: e.seq, reason };
        if let Some((node, from, to)) = replay.step(e)? {
            let clock = clocks.entry(node).or_default();
            if to == NodeState::Provisioning && clock.first_provisioning.is_none() {
                clock.first_provisioning = Some(e.time);
            }
            if to == NodeState::Terminated {
                clock.terminated = Some(e.time);
            }
            if from == NodeState::Allocated && to != NodeState::Allocated {
                let since = clock.allocated_since.take().expect("allocated node has a start");
                clock.busy += e.time.since(since);
            }
            if to == NodeState::Allocated {
                clock.allocated_since = Some(e.time);
            }
            if from != to {
                match (occupies(from), occupies(to)) {
                    (false, true) => concurrent += 1,
                    (true, false) => concurrent -= 1,
                    _ => {}
                }
            }
        }
        match e.kind {
            EventKind::JobSubmitted => {
                let job = parse_job(e).map_err(bad)?;
                if submitted.insert(job, e.time).is_some() {
                    return Err(MalformedLog { seq: e.seq, reason: format!("{job} submitted twice") });
                }
            }
            EventKind::JobStarted => {
                let job = parse_job(e).map_err(bad)?;
                let at = submitted
                    .get(&job)
                    .ok_or_else(|| MalformedLog { seq: e.seq, reason: format!("{job} started before submission") })?;
                waits.insert(job, e.time.since(*at));
            }
            _ => {}
        }
        let group_done = events.get(i + 1).is_none_or(|next| next.time != e.time);
        if group_done {
            peak = peak.max(concurrent);
        }
    }

    let mut total = Duration::ZERO;
    let mut busy = Duration::ZERO;
    for clock in clocks.values() {
        if let Some(start) = clock.first_provisioning {
            total += clock.terminated.unwrap_or(end).since(start);
        }
        busy += clock.busy;
        if let Some(since) = clock.allocated_since {
            busy += end.since(since);
        }
    }
    let total_s = total.as_secs_f64();
    let busy_s = busy.as_secs_f64();
    Ok(UsageReport {
        node_seconds_total: total_s,
        node_seconds_busy: busy_s,
        utilization: if total_s > 0.0 { busy_s / total_s } else { 0.0 },
        max_concurrent_nodes: peak,
        per_job_wait: waits,
    })
}

fn parse_job(e: &Event) -> Result<JobId, String> {
    e.get("job").ok_or_else(|| "job event without job id".to_string())?.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventLog;

    fn node_events(log: &mut EventLog, node: &str, steps: &[(u64, EventKind)]) {
        for &(t, kind) in steps {
            log.append(Timestamp::from_secs(t), kind, [("node", node)]);
        }
    }

    #[test]
    fn empty_log_is_all_zero() {
        let r = accumulate_usage(&[]).unwrap();
        assert_eq!(r, UsageReport::default());
        assert_eq!(r.utilization, 0.0);
    }

    #[test]
    fn single_node_interval_arithmetic() {
        use EventKind::*;
        let mut log = EventLog::new();
        node_events(
            &mut log,
            "n1",
            &[
                (0, NodeRequested),
                (0, NodeProvisioning),
                (5, NodeActive),
                (10, NodeAllocated),
                (70, NodeIdle),
                (100, NodeDraining),
                (100, NodeTerminating),
                (100, NodeTerminated),
            ],
        );
        let r = accumulate_usage(log.events()).unwrap();
        // provisioned 0..100, allocated 10..70
        assert_eq!(r.node_seconds_total, 100.0);
        assert_eq!(r.node_seconds_busy, 60.0);
        assert!((r.utilization - 0.6).abs() < 1e-12);
        assert_eq!(r.max_concurrent_nodes, 1);
    }

    #[test]
    fn failed_node_bills_until_terminated() {
        use EventKind::*;
        let mut log = EventLog::new();
        node_events(
            &mut log,
            "n1",
            &[
                (0, NodeRequested),
                (0, NodeProvisioning),
                (30, NodeActive),
                (40, NodeFailed),
                (50, NodeTerminating),
                (60, NodeTerminated),
            ],
        );
        assert_eq!(accumulate_usage(log.events()).unwrap().node_seconds_total, 60.0);
    }

    #[test]
    fn never_provisioned_node_costs_nothing() {
        use EventKind::*;
        let mut log = EventLog::new();
        node_events(
            &mut log,
            "n1",
            &[(0, NodeRequested), (0, NodeFailed), (10, NodeTerminating), (10, NodeTerminated)],
        );
        let r = accumulate_usage(log.events()).unwrap();
        assert_eq!(r.node_seconds_total, 0.0);
        assert_eq!(r.max_concurrent_nodes, 0);
    }

    #[test]
    fn illegal_history_is_malformed() {
        use EventKind::*;
        let mut log = EventLog::new();
        node_events(&mut log, "n1", &[(0, NodeRequested), (1, NodeAllocated)]);
        assert_eq!(accumulate_usage(log.events()).unwrap_err().seq, 2);

        let mut log = EventLog::new();
        node_events(&mut log, "n2", &[(0, NodeProvisioning)]);
        assert!(accumulate_usage(log.events()).is_err());
    }

    #[test]
    fn job_waits() {
        let mut log = EventLog::new();
        log.append(Timestamp(0), EventKind::JobSubmitted, [("job", "j1")]);
        log.append(Timestamp(30_000), EventKind::JobStarted, [("job", "j1")]);
        let r = accumulate_usage(log.events()).unwrap();
        assert_eq!(r.per_job_wait[&JobId(1)], Duration::from_secs(30));

        let mut log = EventLog::new();
        log.append(Timestamp(0), EventKind::JobStarted, [("job", "j1")]);
        assert!(accumulate_usage(log.events()).is_err());
    }
}
