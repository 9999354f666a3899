mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::*;
use vcluster::autoscaler::RetryPolicy;
use vcluster::provider::SimProviderConfig;
use vcluster::scheduler::SchedulerError;
use vcluster::sim::{run_simulation, SimError, SimOptions};
use vcluster::trace::WorkloadTrace;
use vcluster::usage::{replay_nodes, NodeReplay};
use vcluster::{EventKind, EventLog, JobId, JobState, NodeState, Timestamp};

fn times_of(log: &EventLog, kind: EventKind) -> Vec<Timestamp> {
    log.events().iter().filter(|e| e.kind == kind).map(|e| e.time).collect()
}

#[test]
fn empty_trace_produces_empty_report() {
    let out = simulate(&cluster_config(10), SimProviderConfig::default(), &WorkloadTrace::default());
    assert!(out.log.is_empty());
    assert!(out.report.outcomes.is_empty());
    assert_eq!(out.report.usage.node_seconds_total, 0.0);
    assert_eq!(out.report.usage.max_concurrent_nodes, 0);
    assert!(out.report.leak_check);
}

#[test]
fn four_node_job_walkthrough() {
    // Reconcile at t=0 requests 4 nodes; fixed 30 s latency activates them at
    // 30 s where the job starts; it runs 600 s. The nodes go idle at 630 s,
    // expire at 930 s, which is a reconcile tick, and are torn down there.
    let trace = WorkloadTrace { entries: vec![entry(0, 4, 600, 3600)] };
    let out = simulate(&cluster_config(10), SimProviderConfig::default(), &trace);
    let log = &out.log;

    assert_eq!(times_of(log, EventKind::NodeRequested), vec![Timestamp::ZERO; 4]);
    let start = times_of(log, EventKind::JobStarted)[0];
    assert!((30_000..=40_000).contains(&start.as_millis()), "start {start}");
    let end = times_of(log, EventKind::JobEnded)[0];
    assert_eq!(end, start + Duration::from_secs(600));

    let started = log.events().iter().find(|e| e.kind == EventKind::JobStarted).unwrap();
    assert_eq!(started.get("nodes"), Some("n1,n2,n3,n4"));

    let terminated = times_of(log, EventKind::NodeTerminated);
    assert_eq!(terminated.len(), 4);
    assert!(terminated.iter().all(|t| *t <= end + Duration::from_secs(320)));
    assert_eq!(out.report.end_time, Timestamp::from_secs(930));

    let o = &out.report.outcomes[&JobId(1)];
    assert_eq!(o.state, JobState::Completed);
    assert_eq!(o.wait, Some(Duration::from_secs(30)));
    assert_eq!(out.report.usage.max_concurrent_nodes, 4);
    // 4 nodes billed from 0 s to 930 s, busy for 600 s each.
    assert!((out.report.usage.node_seconds_total - 4.0 * 930.0).abs() < 1e-9);
    assert!((out.report.usage.node_seconds_busy - 4.0 * 600.0).abs() < 1e-9);
    assert!(out.report.leak_check);
}

#[test]
fn identical_inputs_give_identical_logs() {
    for seed in 0..5 {
        let trace = random_trace(seed, 20, 8);
        let a = simulate(&cluster_config(10), provider(seed, 0.1), &trace);
        let b = simulate(&cluster_config(10), provider(seed, 0.1), &trace);
        assert_eq!(a.log.render(), b.log.render());
        assert_eq!(a.report.render_records(), b.report.render_records());
    }
}

#[test]
fn different_seeds_change_provider_timing() {
    let trace = random_trace(3, 10, 4);
    let a = simulate(&cluster_config(10), provider(1, 0.0), &trace);
    let b = simulate(&cluster_config(10), provider(2, 0.0), &trace);
    assert_ne!(a.log.render(), b.log.render());
}

#[test]
fn flaky_provider_still_cleans_up() {
    for seed in 0..10 {
        let trace = random_trace(seed + 100, 15, 6);
        let out = simulate(&cluster_config(10), provider(seed, 0.2), &trace);
        assert!(out.report.leak_check, "seed {seed}");
        assert!(out.report.outcomes.values().all(|o| o.state.is_terminal()));
        let created: BTreeSet<_> = out.report.instances_created.iter().collect();
        let deleted: BTreeSet<_> = out.report.instances_deleted.iter().collect();
        assert!(created.is_subset(&deleted), "seed {seed}");
    }
}

#[test]
fn provider_inventory_matches_log_reconstruction() {
    let mut config = cluster_config(6);
    config.min_nodes = 2;
    let trace = random_trace(11, 10, 6);
    let out = simulate(&config, provider(4, 0.1), &trace);

    let mut replay = NodeReplay::new();
    for e in out.log.events() {
        replay.step(e).unwrap();
    }
    let surviving: BTreeSet<String> = replay
        .states()
        .iter()
        .filter(|(_, s)| **s != NodeState::Terminated)
        .map(|(id, _)| replay.instances()[id].clone())
        .collect();
    assert_eq!(surviving.len(), 2);
    let created: BTreeSet<String> = out.report.instances_created.iter().cloned().collect();
    let deleted: BTreeSet<String> = out.report.instances_deleted.iter().cloned().collect();
    assert_eq!(created.difference(&deleted).cloned().collect::<BTreeSet<_>>(), surviving);
    assert!(out.report.leak_check);
}

#[test]
fn min_nodes_floor_is_held_with_no_work() {
    let mut config = cluster_config(6);
    config.min_nodes = 2;
    let trace = WorkloadTrace { entries: vec![entry(0, 1, 60, 120)] };
    let out = simulate(&config, SimProviderConfig::default(), &trace);
    let states = replay_nodes(out.log.events()).unwrap();
    assert_eq!(states.values().filter(|s| **s == NodeState::Idle).count(), 2);
    assert!(out.report.leak_check);
}

#[test]
fn overrunning_job_times_out_at_walltime() {
    let trace = WorkloadTrace { entries: vec![entry(0, 2, 900, 600)] };
    let out = simulate(&cluster_config(10), SimProviderConfig::default(), &trace);
    let o = &out.report.outcomes[&JobId(1)];
    assert_eq!(o.state, JobState::TimedOut);
    assert_eq!(o.end_time.unwrap().since(o.start_time.unwrap()), Duration::from_secs(600));
}

#[test]
fn head_of_line_blocking_is_strict() {
    // j1 holds 6 of 8 nodes; j2 wants 4 and blocks j3 even though j3 would fit.
    let trace =
        WorkloadTrace { entries: vec![entry(0, 6, 1000, 2000), entry(100, 4, 100, 200), entry(101, 1, 10, 20)] };
    let out = simulate(&cluster_config(8), SimProviderConfig::default(), &trace);
    let r = &out.report.outcomes;
    assert!(r[&JobId(2)].start_time.unwrap() >= r[&JobId(1)].end_time.unwrap());
    assert!(r[&JobId(3)].start_time.unwrap() >= r[&JobId(2)].start_time.unwrap());
}

#[test]
fn oversized_job_is_rejected_at_ingestion() {
    let trace = WorkloadTrace { entries: vec![entry(0, 11, 60, 120)] };
    let err = run_simulation(
        &cluster_config(10),
        &jetstream(),
        SimProviderConfig::default(),
        &RetryPolicy::default(),
        &trace,
        &SimOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, SimError::Scheduler(SchedulerError::JobTooLarge { node_count: 11, .. })));
}

#[test]
fn every_wait_is_start_minus_submit() {
    let trace = random_trace(5, 30, 8);
    let out = simulate(&cluster_config(10), provider(5, 0.0), &trace);
    assert_eq!(out.report.outcomes.len(), trace.entries.len());
    for (i, e) in trace.entries.iter().enumerate() {
        let o = &out.report.outcomes[&WorkloadTrace::job_id(i)];
        assert_eq!(o.submit_time, e.submit_time);
        let start = o.start_time.unwrap();
        assert_eq!(o.wait, Some(start.since(e.submit_time)));
        assert_eq!(out.report.usage.per_job_wait[&WorkloadTrace::job_id(i)], o.wait.unwrap());
    }
}
