//! Workload traces: one job per line, whitespace-separated, fixed field order:
//!
//! ```text
//! # submit_s  nodes  tasks_per_node  duration_s  walltime_s  image              mpi
//! 0           4      6               600         3600        hub/hpl:latest     openmpi-4.0.1
//! ```
//!
//! Times are seconds (integer or decimal, kept to the millisecond). Blank
//! lines and lines starting with `#` are ignored. Entries must be sorted by
//! submit time; job ids `j1, j2, ...` follow line order.

use std::fmt::Write;
use std::time::Duration;

use thiserror::Error;

use crate::cluster::{JobId, JobSpec};
use crate::repro::{ImageRef, MpiRuntime};
use crate::time::{duration_millis, secs_to_duration, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub submit_time: Timestamp,
    pub node_count: u32,
    pub tasks_per_node: u32,
    pub duration: Duration,
    pub walltime_limit: Duration,
    pub image: ImageRef,
    pub mpi: MpiRuntime,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkloadTrace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {reason}")]
pub struct TraceError {
    pub line: usize,
    pub reason: String,
}

pub const HEADER: &str = "# submit_s nodes tasks_per_node duration_s walltime_s image mpi\n";

fn fmt_secs(ms: u64) -> String {
    if ms.is_multiple_of(1000) {
        (ms / 1000).to_string()
    } else {
        let s = format!("{}.{:03}", ms / 1000, ms % 1000);
        s.trim_end_matches('0').to_string()
    }
}

impl TraceEntry {
    pub fn validate(&self) -> Result<(), String> {
        if self.node_count == 0 || self.tasks_per_node == 0 {
            return Err("nodes and tasks_per_node must be positive".into());
        }
        if self.duration.is_zero() {
            return Err("duration must be positive".into());
        }
        if self.walltime_limit.is_zero() {
            return Err("walltime must be positive".into());
        }
        Ok(())
    }

    pub fn render_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}\n",
            fmt_secs(self.submit_time.as_millis()),
            self.node_count,
            self.tasks_per_node,
            fmt_secs(duration_millis(self.duration)),
            fmt_secs(duration_millis(self.walltime_limit)),
            self.image,
            self.mpi
        )
    }

    fn parse_line(line: &str) -> Result<TraceEntry, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(format!("expected 7 fields, found {}", toks.len()));
        }
        let secs = |i: usize, name: &str| -> Result<Duration, String> {
            toks[i]
                .parse::<f64>()
                .ok()
                .and_then(secs_to_duration)
                .ok_or_else(|| format!("{name} {:?} is not a non-negative number of seconds", toks[i]))
        };
        let count = |i: usize, name: &str| -> Result<u32, String> {
            toks[i].parse::<u32>().map_err(|_| format!("{name} {:?} is not a non-negative integer", toks[i]))
        };
        let entry = TraceEntry {
            submit_time: Timestamp(duration_millis(secs(0, "submit time")?)),
            node_count: count(1, "nodes")?,
            tasks_per_node: count(2, "tasks_per_node")?,
            duration: secs(3, "duration")?,
            walltime_limit: secs(4, "walltime")?,
            image: toks[5].parse().map_err(|e: crate::repro::ImageParseError| e.to_string())?,
            mpi: toks[6].parse().map_err(|e: crate::repro::MpiParseError| e.to_string())?,
        };
        entry.validate()?;
        Ok(entry)
    }
}

impl WorkloadTrace {
    pub fn parse(text: &str) -> Result<WorkloadTrace, TraceError> {
        let mut entries: Vec<TraceEntry> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| TraceError { line: idx + 1, reason };
            let entry = TraceEntry::parse_line(trimmed).map_err(err)?;
            if entries.last().is_some_and(|prev| prev.submit_time > entry.submit_time) {
                return Err(err("entries must be sorted by submit time".into()));
            }
            entries.push(entry);
        }
        Ok(WorkloadTrace { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::from(HEADER);
        for e in &self.entries {
            let _ = write!(out, "{}", e.render_line());
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn job_id(index: usize) -> JobId {
        JobId(index as u64 + 1)
    }

    /// Job spec for entry `index`, with `command` filled in by the caller.
    pub fn job_spec(&self, index: usize, command: String) -> JobSpec {
        let e = &self.entries[index];
        JobSpec {
            job_id: Self::job_id(index),
            node_count: e.node_count,
            tasks_per_node: e.tasks_per_node,
            walltime_limit: e.walltime_limit,
            image: e.image.clone(),
            command,
            submit_time: e.submit_time,
        }
    }
}
