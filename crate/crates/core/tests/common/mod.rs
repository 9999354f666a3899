#![allow(dead_code)]

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcluster::autoscaler::RetryPolicy;
use vcluster::cluster::SharedStorageSpec;
use vcluster::provider::{CloudProfile, Latency, SimProviderConfig};
use vcluster::repro::{ImageRef, MpiCompatRule, MpiRuntime};
use vcluster::sim::{run_simulation, SimOptions, SimulationOutput};
use vcluster::trace::{TraceEntry, WorkloadTrace};
use vcluster::{ClusterConfig, Timestamp};

pub fn cluster_config(max_nodes: u32) -> ClusterConfig {
    ClusterConfig {
        name: "vc".into(),
        max_nodes,
        min_nodes: 0,
        idle_timeout: Duration::from_secs(300),
        reconcile_interval: Duration::from_secs(10),
        node_flavor: "m1.quad".into(),
        node_image: "centos7".into(),
        cores_per_node: 6,
        mem_per_node_bytes: 64_000_000_000,
        rmax_per_node_gflops: 160.0,
        storage: SharedStorageSpec::default(),
        host_mpi: MpiRuntime::openmpi(3, 1, 0),
        mpi_rule: MpiCompatRule::default(),
    }
}

pub fn jetstream() -> CloudProfile {
    CloudProfile::bundled("jetstream-like").expect("bundled profile")
}

pub fn image() -> ImageRef {
    "hub/hpl:latest".parse().unwrap()
}

pub fn entry(submit_s: u64, nodes: u32, duration_s: u64, walltime_s: u64) -> TraceEntry {
    TraceEntry {
        submit_time: Timestamp::from_secs(submit_s),
        node_count: nodes,
        tasks_per_node: 6,
        duration: Duration::from_secs(duration_s),
        walltime_limit: Duration::from_secs(walltime_s),
        image: image(),
        mpi: MpiRuntime::openmpi(4, 0, 1),
    }
}

/// Seeded random workload: up to `max_jobs` jobs of 1..=`max_job_nodes` nodes,
/// some of which overrun their walltime.
pub fn random_trace(seed: u64, max_jobs: usize, max_job_nodes: u32) -> WorkloadTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs = rng.gen_range(1..=max_jobs);
    let mut t = 0u64;
    let entries = (0..jobs)
        .map(|_| {
            t += rng.gen_range(0..=600_000u64);
            let duration = rng.gen_range(1_000..=3_600_000u64);
            let walltime = if rng.gen_bool(0.2) { duration / 2 + 1 } else { duration + rng.gen_range(0..=600_000) };
            TraceEntry {
                submit_time: Timestamp(t),
                node_count: rng.gen_range(1..=max_job_nodes),
                tasks_per_node: rng.gen_range(1..=6),
                duration: Duration::from_millis(duration),
                walltime_limit: Duration::from_millis(walltime),
                image: image(),
                mpi: MpiRuntime::openmpi(rng.gen_range(3..=4), rng.gen_range(0..=1), 0),
            }
        })
        .collect();
    WorkloadTrace { entries }
}

pub fn provider(seed: u64, failure_rate: f64) -> SimProviderConfig {
    SimProviderConfig {
        seed,
        provision_latency: Latency::Uniform(Duration::from_secs(20), Duration::from_secs(40)),
        failure_rate,
        ..Default::default()
    }
}

pub fn simulate(config: &ClusterConfig, provider: SimProviderConfig, trace: &WorkloadTrace) -> SimulationOutput {
    run_simulation(config, &jetstream(), provider, &RetryPolicy::default(), trace, &SimOptions::default())
        .expect("simulation runs")
}
