//! Elastic virtual-cluster orchestration.
//!
//! Jobs enter a FIFO queue, a reconciliation loop turns unmet node demand into
//! create/drain/terminate actions against a cloud provider, and ephemeral
//! workers are released again once they sit idle. Everything runs on a
//! virtual millisecond clock so whole cluster lifetimes can be simulated
//! deterministically through [`provider::SimProvider`].
//!
//! Alongside the cluster loop the crate carries a reproducibility model
//! (content-hashed derivations, image pinning, MPI compatibility) in
//! [`repro`] and an HPL input/output toolkit in [`hpl`].

pub mod autoscaler;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod event;
pub mod hpl;
pub mod provider;
pub mod repro;
pub mod scheduler;
pub mod sim;
pub mod time;
pub mod trace;
pub mod usage;

pub use cluster::{Cluster, ClusterConfig, JobId, JobRecord, JobSpec, JobState, NodeId, NodeRecord, NodeState};
pub use event::{Event, EventKind, EventLog};
pub use time::Timestamp;
