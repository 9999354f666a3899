//! Reconciliation: compare queue demand with the node table, plan
//! create/drain/terminate actions, and carry them out against a provider.

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::cluster::{Cluster, ClusterConfig, ClusterSnapshot, CoreError, NodeId, NodeRecord, NodeState};
use crate::event::EventKind;
use crate::provider::{CloudProvider, ConcreteInstanceRequest, ProviderError};
use crate::time::{duration_millis, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    CreateNode,
    DrainNode,
    TerminateNode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleAction {
    pub kind: ActionKind,
    pub node_id: Option<NodeId>,
    pub reason: String,
}

impl ScaleAction {
    fn create(reason: String) -> Self {
        ScaleAction { kind: ActionKind::CreateNode, node_id: None, reason }
    }

    fn drain(node: NodeId, reason: String) -> Self {
        ScaleAction { kind: ActionKind::DrainNode, node_id: Some(node), reason }
    }

    fn terminate(node: NodeId, reason: String) -> Self {
        ScaleAction { kind: ActionKind::TerminateNode, node_id: Some(node), reason }
    }
}

impl fmt::Display for ScaleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node_id {
            Some(n) => write!(f, "{:?}({n}): {}", self.kind, self.reason),
            None => write!(f, "{:?}: {}", self.kind, self.reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, backoff_base: Duration::from_secs(2), backoff_factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1");
        }
        if !(self.backoff_factor.is_finite() && self.backoff_factor >= 1.0) {
            return Err("backoff_factor must be at least 1");
        }
        Ok(())
    }

    /// Wait after failed attempt `attempt` (1-based) before the next one.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let scale = self.backoff_factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64((self.backoff_base.as_secs_f64() * scale).min(1e9))
    }
}

fn is_expired(node: &NodeRecord, now: Timestamp, timeout: Duration) -> bool {
    node.state == NodeState::Idle && node.idle_since.is_some_and(|since| now.since(since) >= timeout)
}

/// Plans scaling actions. Pure: the same inputs always give the same list.
///
/// Creates come first: enough to cover `demand` (or to lift the retained
/// node count back to `min_nodes`), never pushing the live count past
/// `max_nodes`. Then, by node id, a Drain+Terminate pair for each Idle node
/// past `idle_timeout` that the queue does not need and that would not drop
/// the cluster below `min_nodes`, and a Terminate for each Failed node.
pub fn reconcile(snapshot: &ClusterSnapshot, demand: u32, config: &ClusterConfig, now: Timestamp) -> Vec<ScaleAction> {
    let nodes = || snapshot.nodes.values();
    let count = |pred: fn(NodeState) -> bool| nodes().filter(|n| pred(n.state)).count() as u32;

    let live = count(NodeState::is_live);
    let retained = count(|s| s.is_live() && s != NodeState::Terminating);
    let supply = count(|s| matches!(s, NodeState::Requested | NodeState::Provisioning | NodeState::Idle));

    let floor_gap = config.min_nodes.saturating_sub(retained);
    let headroom = config.max_nodes.saturating_sub(live);
    let creates = demand.max(floor_gap).min(headroom);

    let mut actions: Vec<ScaleAction> = (0..creates)
        .map(|i| ScaleAction::create(format!("demand {demand}, live {live}, create {} of {creates}", i + 1)))
        .collect();

    // Idle nodes beyond what pending jobs can use. The scheduler hands out
    // longest-idle first, so reclaim from the other end.
    let surplus = supply.saturating_sub(snapshot.pending_need);
    let reclaimable = surplus.min(retained.saturating_sub(config.min_nodes)) as usize;
    let mut expired: Vec<&NodeRecord> = nodes().filter(|n| is_expired(n, now, config.idle_timeout)).collect();
    expired.sort_by_key(|n| std::cmp::Reverse((n.idle_since, n.node_id)));
    expired.truncate(reclaimable);

    let mut removals: Vec<(NodeId, bool)> = expired.iter().map(|n| (n.node_id, true)).collect();
    removals.extend(nodes().filter(|n| n.state == NodeState::Failed).map(|n| (n.node_id, false)));
    removals.sort();
    for (node, drain) in removals {
        if drain {
            let idle_for = now.since(snapshot.nodes[&node].idle_since.expect("idle node has idle_since"));
            let reason = format!("idle {}s >= timeout {}s", idle_for.as_secs(), config.idle_timeout.as_secs());
            actions.push(ScaleAction::drain(node, reason.clone()));
            actions.push(ScaleAction::terminate(node, reason));
        } else {
            actions.push(ScaleAction::terminate(node, "node failed".into()));
        }
    }
    actions
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplyError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: ProviderError },
    #[error("stale action: {0}")]
    Stale(CoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionOutcome {
    Applied { node: NodeId, attempts: u32 },
    Failed { node: Option<NodeId>, error: ApplyError },
}

impl ActionOutcome {
    pub fn is_applied(&self) -> bool {
        matches!(self, ActionOutcome::Applied { .. })
    }
}

/// Runs `op` up to `retry.max_attempts` times. Each failed attempt that will
/// be retried is logged as a `ProviderRetry` event; attempt `k` is issued to
/// the provider at `now` plus the accumulated backoff.
fn with_retry<T>(
    cluster: &mut Cluster,
    node: NodeId,
    op_name: &str,
    retry: &RetryPolicy,
    mut op: impl FnMut(Timestamp) -> Result<T, ProviderError>,
) -> Result<(T, u32), (u32, ProviderError)> {
    let now = cluster.now();
    let mut delay = Duration::ZERO;
    let mut attempt = 1;
    loop {
        match op(now + delay) {
            Ok(v) => return Ok((v, attempt)),
            Err(e) if attempt >= retry.max_attempts || matches!(e, ProviderError::UnknownInstance(_)) => {
                return Err((attempt, e));
            }
            Err(e) => {
                let wait = retry.delay_after(attempt);
                cluster.record(
                    EventKind::ProviderRetry,
                    [
                        ("node", node.to_string()),
                        ("op", op_name.to_string()),
                        ("attempt", attempt.to_string()),
                        ("backoff_ms", duration_millis(wait).to_string()),
                        ("error", e.to_string()),
                    ],
                );
                delay += wait;
                attempt += 1;
            }
        }
    }
}

fn apply_one(
    cluster: &mut Cluster,
    action: &ScaleAction,
    provider: &mut dyn CloudProvider,
    request: &ConcreteInstanceRequest,
    retry: &RetryPolicy,
) -> Result<ActionOutcome, CoreError> {
    match action.kind {
        ActionKind::CreateNode => {
            let node = cluster.request_node();
            let req = request.for_node(node);
            match with_retry(cluster, node, "create", retry, |at| provider.create_instance(&req, at)) {
                Ok((instance, attempts)) => {
                    cluster.set_instance_id(node, instance)?;
                    cluster.transition_node(node, NodeState::Provisioning, &[("attempts", attempts.to_string())])?;
                    Ok(ActionOutcome::Applied { node, attempts })
                }
                Err((attempts, last)) => {
                    cluster.transition_node(node, NodeState::Failed, &[("reason", format!("create: {last}"))])?;
                    Ok(ActionOutcome::Failed {
                        node: Some(node),
                        error: ApplyError::ProviderUnavailable { attempts, last },
                    })
                }
            }
        }
        ActionKind::DrainNode => {
            let node = action.node_id.expect("drain carries a node");
            cluster.transition_node(node, NodeState::Draining, &[])?;
            Ok(ActionOutcome::Applied { node, attempts: 0 })
        }
        ActionKind::TerminateNode => {
            let node = action.node_id.expect("terminate carries a node");
            cluster.transition_node(node, NodeState::Terminating, &[])?;
            let Some(instance) = cluster.node(node).and_then(|n| n.instance_id.clone()) else {
                cluster.transition_node(node, NodeState::Terminated, &[])?;
                return Ok(ActionOutcome::Applied { node, attempts: 0 });
            };
            match with_retry(cluster, node, "delete", retry, |at| provider.delete_instance(&instance, at)) {
                Ok(((), attempts)) => {
                    cluster.transition_node(node, NodeState::Terminated, &[("attempts", attempts.to_string())])?;
                    Ok(ActionOutcome::Applied { node, attempts })
                }
                Err((_, ProviderError::UnknownInstance(_))) => {
                    // The provider has no record of it, so there is nothing left to bill.
                    cluster.transition_node(
                        node,
                        NodeState::Terminated,
                        &[("note", "unknown_instance".to_string())],
                    )?;
                    Ok(ActionOutcome::Applied { node, attempts: 1 })
                }
                Err((attempts, last)) => {
                    cluster.transition_node(node, NodeState::Failed, &[("reason", format!("delete: {last}"))])?;
                    Ok(ActionOutcome::Failed {
                        node: Some(node),
                        error: ApplyError::ProviderUnavailable { attempts, last },
                    })
                }
            }
        }
    }
}

/// Applies `actions` in order. Each action succeeds or fails on its own; a
/// failure never stops the rest. Actions whose node has moved on since
/// planning are reported as [`ApplyError::Stale`] and change nothing.
pub fn apply(
    cluster: &mut Cluster,
    actions: &[ScaleAction],
    provider: &mut dyn CloudProvider,
    request: &ConcreteInstanceRequest,
    retry: &RetryPolicy,
) -> Vec<(ScaleAction, ActionOutcome)> {
    actions
        .iter()
        .map(|action| {
            let outcome = apply_one(cluster, action, provider, request, retry)
                .unwrap_or_else(|e| ActionOutcome::Failed { node: action.node_id, error: ApplyError::Stale(e) });
            (action.clone(), outcome)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::test_support::{config, idle_node, spec};
    use crate::provider::{resolve, CloudProfile, SimProvider, SimProviderConfig};

    fn request() -> ConcreteInstanceRequest {
        resolve(&config(10), &CloudProfile::bundled("jetstream-like").unwrap()).unwrap()
    }

    fn kinds(actions: &[ScaleAction]) -> Vec<ActionKind> {
        actions.iter().map(|a| a.kind).collect()
    }

    #[test]
    fn demand_four_from_empty() {
        let c = Cluster::new(config(10)).unwrap();
        let actions = reconcile(&c.snapshot(), 4, c.config(), Timestamp(0));
        assert_eq!(kinds(&actions), vec![ActionKind::CreateNode; 4]);
    }

    #[test]
    fn expired_idle_node_scales_to_zero() {
        let mut c = Cluster::new(config(10)).unwrap();
        let n = idle_node(&mut c);
        let now = Timestamp::from_secs(300);
        let actions = reconcile(&c.snapshot(), 0, c.config(), now);
        assert_eq!(kinds(&actions), vec![ActionKind::DrainNode, ActionKind::TerminateNode]);
        assert!(actions.iter().all(|a| a.node_id == Some(n)));
        assert!(reconcile(&c.snapshot(), 0, c.config(), Timestamp::from_secs(299)).is_empty());
    }

    #[test]
    fn capped_at_max_nodes() {
        let mut c = Cluster::new(config(10)).unwrap();
        for _ in 0..10 {
            idle_node(&mut c);
        }
        assert!(reconcile(&c.snapshot(), 100, c.config(), Timestamp(0)).is_empty());
    }

    #[test]
    fn needed_idle_nodes_are_kept() {
        let mut c = Cluster::new(config(10)).unwrap();
        c.submit(spec(1, 4, 0)).unwrap();
        for _ in 0..3 {
            idle_node(&mut c);
        }
        let late = Timestamp::from_secs(10_000);
        let actions = reconcile(&c.snapshot(), c.demand(), c.config(), late);
        assert_eq!(kinds(&actions), vec![ActionKind::CreateNode]);
    }

    #[test]
    fn min_nodes_floor() {
        let mut cfg = config(10);
        cfg.min_nodes = 1;
        let mut c = Cluster::new(cfg).unwrap();
        let a = idle_node(&mut c);
        let b = idle_node(&mut c);
        let actions = reconcile(&c.snapshot(), 0, c.config(), Timestamp::from_secs(1000));
        assert_eq!(actions.len(), 2);
        // Equal idle_since, so the higher id goes first.
        assert!(actions.iter().all(|x| x.node_id == Some(b)));
        let _ = a;

        let empty = Cluster::new(c.config().clone()).unwrap();
        assert_eq!(kinds(&reconcile(&empty.snapshot(), 0, empty.config(), Timestamp(0))), vec![ActionKind::CreateNode]);
    }

    #[test]
    fn reconcile_is_idempotent() {
        let mut c = Cluster::new(config(10)).unwrap();
        idle_node(&mut c);
        c.submit(spec(1, 3, 0)).unwrap();
        let snap = c.snapshot();
        let t = Timestamp::from_secs(500);
        assert_eq!(reconcile(&snap, 2, c.config(), t), reconcile(&snap, 2, c.config(), t));
    }

    #[test]
    fn healthy_creates_reach_provisioning() {
        let mut c = Cluster::new(config(10)).unwrap();
        let mut p = SimProvider::new(SimProviderConfig::default());
        let actions = reconcile(&c.snapshot(), 2, c.config(), Timestamp(0));
        let out = apply(&mut c, &actions, &mut p, &request(), &RetryPolicy::default());
        assert!(out.iter().all(|(_, o)| o.is_applied()));
        assert_eq!(c.count_in(&[NodeState::Provisioning]), 2);
        assert_eq!(p.list_instances().len(), 2);
    }

    #[test]
    fn create_succeeds_on_third_attempt() {
        let mut c = Cluster::new(config(10)).unwrap();
        let cfg = SimProviderConfig { forced_failures: [1, 2].into_iter().collect(), ..Default::default() };
        let mut p = SimProvider::new(cfg);
        let actions = reconcile(&c.snapshot(), 1, c.config(), Timestamp(0));
        let out = apply(&mut c, &actions, &mut p, &request(), &RetryPolicy::default());
        assert_eq!(out[0].1, ActionOutcome::Applied { node: NodeId(1), attempts: 3 });
        let retries: Vec<_> = c.log().events().iter().filter(|e| e.kind == EventKind::ProviderRetry).collect();
        assert_eq!(retries.len(), 2);
        assert_eq!(retries[0].get("backoff_ms"), Some("2000"));
        assert_eq!(retries[1].get("backoff_ms"), Some("4000"));
        // Attempt 3 went out after 2s + 4s of backoff.
        assert_eq!(p.next_activation(), Some(Timestamp::from_secs(36)));
    }

    #[test]
    fn exhausted_create_fails_the_node() {
        let mut c = Cluster::new(config(10)).unwrap();
        let cfg = SimProviderConfig { forced_failures: [1, 2, 3].into_iter().collect(), ..Default::default() };
        let mut p = SimProvider::new(cfg);
        let actions = reconcile(&c.snapshot(), 1, c.config(), Timestamp(0));
        let out = apply(&mut c, &actions, &mut p, &request(), &RetryPolicy::default());
        assert!(matches!(
            out[0].1,
            ActionOutcome::Failed { error: ApplyError::ProviderUnavailable { attempts: 3, .. }, .. }
        ));
        assert_eq!(c.node(NodeId(1)).unwrap().state, NodeState::Failed);
        assert_eq!(c.log().events().last().unwrap().kind, EventKind::NodeFailed);

        // The next pass terminates the failed node without touching the provider.
        let actions = reconcile(&c.snapshot(), 0, c.config(), Timestamp(0));
        assert_eq!(kinds(&actions), vec![ActionKind::TerminateNode]);
        apply(&mut c, &actions, &mut p, &request(), &RetryPolicy::default());
        assert_eq!(c.node(NodeId(1)).unwrap().state, NodeState::Terminated);
    }

    #[test]
    fn stale_drain_is_reported() {
        let mut c = Cluster::new(config(10)).unwrap();
        let n = idle_node(&mut c);
        let actions = reconcile(&c.snapshot(), 0, c.config(), Timestamp::from_secs(300));
        c.submit(spec(1, 1, 0)).unwrap();
        c.try_schedule().unwrap();
        let mut p = SimProvider::new(SimProviderConfig::default());
        let out = apply(&mut c, &actions, &mut p, &request(), &RetryPolicy::default());
        assert!(out.iter().all(|(_, o)| matches!(o, ActionOutcome::Failed { error: ApplyError::Stale(_), .. })));
        assert_eq!(c.node(n).unwrap().state, NodeState::Allocated);
    }

    #[test]
    fn backoff_schedule() {
        let r = RetryPolicy::default();
        assert_eq!(r.delay_after(1), Duration::from_secs(2));
        assert_eq!(r.delay_after(2), Duration::from_secs(4));
        assert_eq!(r.delay_after(3), Duration::from_secs(8));
    }
}
