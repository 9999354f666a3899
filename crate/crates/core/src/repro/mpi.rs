use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MpiImpl {
    OpenMpi,
    Mpich,
    Other(String),
}

impl fmt::Display for MpiImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MpiImpl::OpenMpi => f.write_str("openmpi"),
            MpiImpl::Mpich => f.write_str("mpich"),
            MpiImpl::Other(name) => f.write_str(name),
        }
    }
}

/// An MPI implementation at a specific `major.minor.patch` release.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MpiRuntime {
    pub implementation: MpiImpl,
    pub version: (u32, u32, u32),
}

impl MpiRuntime {
    pub fn new(implementation: MpiImpl, major: u32, minor: u32, patch: u32) -> Self {
        MpiRuntime { implementation, version: (major, minor, patch) }
    }

    pub fn openmpi(major: u32, minor: u32, patch: u32) -> Self {
        Self::new(MpiImpl::OpenMpi, major, minor, patch)
    }

    pub fn mpich(major: u32, minor: u32, patch: u32) -> Self {
        Self::new(MpiImpl::Mpich, major, minor, patch)
    }

    pub fn major(&self) -> u32 {
        self.version.0
    }
}

impl fmt::Display for MpiRuntime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b, c) = self.version;
        write!(f, "{}-{a}.{b}.{c}", self.implementation)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MPI runtime {0:?}: expected <implementation>-<major>.<minor>.<patch>")]
pub struct MpiParseError(pub String);

impl FromStr for MpiRuntime {
    type Err = MpiParseError;

    /// Parses `openmpi-4.0.1`, `mpich-3.3.2`, or `<name>-x.y.z` for anything else.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MpiParseError(s.to_string());
        let (name, version) = s.rsplit_once('-').ok_or_else(err)?;
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(err());
        }
        let mut parts = version.split('.');
        let mut next = || -> Result<u32, MpiParseError> {
            let p = parts.next().ok_or_else(err)?;
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            p.parse().map_err(|_| err())
        };
        let version = (next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(err());
        }
        let implementation = match name.to_ascii_lowercase().as_str() {
            "openmpi" => MpiImpl::OpenMpi,
            "mpich" => MpiImpl::Mpich,
            _ => MpiImpl::Other(name.to_string()),
        };
        Ok(MpiRuntime { implementation, version })
    }
}

/// How far apart host and container major versions may be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpiCompatRule {
    pub max_major_distance: u32,
}

impl Default for MpiCompatRule {
    fn default() -> Self {
        MpiCompatRule { max_major_distance: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compatibility {
    Compatible,
    Incompatible(String),
}

impl Compatibility {
    pub fn is_compatible(&self) -> bool {
        matches!(self, Compatibility::Compatible)
    }
}

/// Host MPI launches the container's MPI ranks, so both sides must be the
/// same implementation and within `rule.max_major_distance` major releases.
pub fn check_mpi_compat(host: &MpiRuntime, container: &MpiRuntime, rule: MpiCompatRule) -> Compatibility {
    if host.implementation != container.implementation {
        return Compatibility::Incompatible(format!(
            "implementation mismatch: host {} vs container {}",
            host.implementation, container.implementation
        ));
    }
    let distance = host.major().abs_diff(container.major());
    if distance > rule.max_major_distance {
        return Compatibility::Incompatible(format!(
            "major version distance {distance} exceeds {} (host {host}, container {container})",
            rule.max_major_distance
        ));
    }
    Compatibility::Compatible
}
