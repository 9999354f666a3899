//! Cluster configuration files.
//!
//! Every config file in this crate (cluster config, cloud profile, derivation)
//! is TOML: sections of `key = value` pairs with typed values. A cluster
//! config looks like:
//!
//! ```toml
//! [cluster]
//! name = "vc"
//! max_nodes = 10
//! min_nodes = 0                 # optional, default 0
//! idle_timeout_s = 300
//! reconcile_interval_s = 10     # optional, default 10
//! node_flavor = "m1.medium"
//! node_image = "centos7"
//! cores_per_node = 6
//! mem_per_node_bytes = 64000000000
//! rmax_per_node_gflops = 160.0
//! host_mpi = "openmpi-3.1.0"
//! mpi_max_major_distance = 1    # optional, default 1
//!
//! [storage]                     # optional, sizes in GB
//! home_gb = 10
//! work_gb = 100
//! software_gb = 20
//!
//! [retry]                       # optional
//! max_attempts = 3
//! backoff_base_s = 2
//! backoff_factor = 2.0
//!
//! [sim_provider]                # optional
//! seed = 0
//! latency_s = 30                # fixed latency, or
//! # latency_range_s = [20, 40]  # uniform latency
//! failure_rate = 0.0
//! capacity = 16                 # optional
//! fail_calls = []               # optional, provider call numbers that always fail
//! ```
//!
//! Durations are seconds and may be integers or reals; they are rounded to
//! whole milliseconds.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::autoscaler::RetryPolicy;
use crate::cluster::{ClusterConfig, SharedStorageSpec};
use crate::provider::{Latency, SimProviderConfig};
use crate::repro::{MpiCompatRule, MpiRuntime};
use crate::time::secs_to_duration;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(f) => f,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    cluster: RawCluster,
    #[serde(default)]
    storage: Option<RawStorage>,
    #[serde(default)]
    retry: Option<RawRetry>,
    #[serde(default)]
    sim_provider: Option<RawSimProvider>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCluster {
    #[serde(default = "default_name")]
    name: String,
    max_nodes: u32,
    #[serde(default)]
    min_nodes: u32,
    idle_timeout_s: Number,
    #[serde(default)]
    reconcile_interval_s: Option<Number>,
    node_flavor: String,
    node_image: String,
    cores_per_node: u32,
    mem_per_node_bytes: u64,
    rmax_per_node_gflops: Number,
    host_mpi: String,
    #[serde(default)]
    mpi_max_major_distance: Option<u32>,
}

fn default_name() -> String {
    "vc".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStorage {
    #[serde(default)]
    home_gb: u64,
    #[serde(default)]
    work_gb: u64,
    #[serde(default)]
    software_gb: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetry {
    #[serde(default)]
    max_attempts: Option<u32>,
    #[serde(default)]
    backoff_base_s: Option<Number>,
    #[serde(default)]
    backoff_factor: Option<Number>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimProvider {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    latency_s: Option<Number>,
    #[serde(default)]
    latency_range_s: Option<[Number; 2]>,
    #[serde(default)]
    failure_rate: Option<Number>,
    #[serde(default)]
    capacity: Option<u32>,
    #[serde(default)]
    fail_calls: BTreeSet<u64>,
}

/// Everything a cluster config file carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFile {
    pub cluster: ClusterConfig,
    pub retry: RetryPolicy,
    pub sim_provider: SimProviderConfig,
}

/// Default reconcile period when the file leaves it out.
pub const DEFAULT_RECONCILE_INTERVAL: Duration = Duration::from_secs(10);

fn seconds(field: &str, n: Number) -> Result<Duration, ConfigError> {
    secs_to_duration(n.as_f64())
        .ok_or_else(|| ConfigError::Invalid(format!("{field} must be a non-negative number of seconds")))
}

impl ClusterFile {
    pub fn from_toml(text: &str) -> Result<ClusterFile, ConfigError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
        let invalid = |s: String| ConfigError::Invalid(s);

        let c = raw.cluster;
        let host_mpi: MpiRuntime =
            c.host_mpi.parse().map_err(|e: crate::repro::MpiParseError| invalid(e.to_string()))?;
        let storage = raw
            .storage
            .map(|s| SharedStorageSpec { home_gb: s.home_gb, work_gb: s.work_gb, software_gb: s.software_gb })
            .unwrap_or_default();
        let cluster = ClusterConfig {
            name: c.name,
            max_nodes: c.max_nodes,
            min_nodes: c.min_nodes,
            idle_timeout: seconds("idle_timeout_s", c.idle_timeout_s)?,
            reconcile_interval: match c.reconcile_interval_s {
                Some(n) => seconds("reconcile_interval_s", n)?,
                None => DEFAULT_RECONCILE_INTERVAL,
            },
            node_flavor: c.node_flavor,
            node_image: c.node_image,
            cores_per_node: c.cores_per_node,
            mem_per_node_bytes: c.mem_per_node_bytes,
            rmax_per_node_gflops: c.rmax_per_node_gflops.as_f64(),
            storage,
            host_mpi,
            mpi_rule: MpiCompatRule {
                max_major_distance: c.mpi_max_major_distance.unwrap_or(MpiCompatRule::default().max_major_distance),
            },
        };
        cluster.validate().map_err(|e| invalid(e.to_string()))?;

        let mut retry = RetryPolicy::default();
        if let Some(r) = raw.retry {
            if let Some(n) = r.max_attempts {
                retry.max_attempts = n;
            }
            if let Some(b) = r.backoff_base_s {
                retry.backoff_base = seconds("backoff_base_s", b)?;
            }
            if let Some(f) = r.backoff_factor {
                retry.backoff_factor = f.as_f64();
            }
        }
        retry.validate().map_err(|e| invalid(e.to_string()))?;

        let mut sim_provider = SimProviderConfig::default();
        if let Some(s) = raw.sim_provider {
            sim_provider.seed = s.seed;
            sim_provider.provision_latency = match (s.latency_s, s.latency_range_s) {
                (Some(_), Some(_)) => return Err(invalid("set latency_s or latency_range_s, not both".into())),
                (Some(n), None) => Latency::Fixed(seconds("latency_s", n)?),
                (None, Some([lo, hi])) => {
                    Latency::Uniform(seconds("latency_range_s", lo)?, seconds("latency_range_s", hi)?)
                }
                (None, None) => sim_provider.provision_latency,
            };
            if let Some(f) = s.failure_rate {
                sim_provider.failure_rate = f.as_f64();
            }
            sim_provider.capacity = s.capacity;
            sim_provider.forced_failures = s.fail_calls;
        }
        sim_provider.validate().map_err(|e| invalid(e.to_string()))?;

        Ok(ClusterFile { cluster, retry, sim_provider })
    }
}
