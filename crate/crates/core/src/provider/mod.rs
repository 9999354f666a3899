//! Cloud provider contract, per-cloud naming profiles, and the simulated
//! provider used for desk-scale runs.
//!
//! A [`CloudProfile`] captures everything that differs between two OpenStack
//! clouds running the same cluster stack: the base image name, the flavor
//! names, and whether the private network needs explicit DHCP servers.
//! [`resolve`] turns the cloud-neutral names in a [`ClusterConfig`] into a
//! [`ConcreteInstanceRequest`] for one cloud.

mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterConfig, NodeId};
use crate::time::Timestamp;

pub use sim::{Latency, SimProvider, SimProviderConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub private_net_name: String,
    #[serde(default)]
    pub explicit_dhcp: bool,
    #[serde(default)]
    pub dhcp_servers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudProfile {
    pub name: String,
    pub image_map: BTreeMap<String, String>,
    pub flavor_map: BTreeMap<String, String>,
    pub network: NetworkSpec,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("profile file: {0}")]
    Syntax(String),
    #[error("profile {profile}: {reason}")]
    Invalid { profile: String, reason: String },
    #[error("no {kind} mapping for logical name {name:?}")]
    UnmappedName { kind: &'static str, name: String },
}

const BUNDLED: [(&str, &str); 2] = [
    ("jetstream-like", include_str!("../../profiles/jetstream-like.toml")),
    ("redcloud-like", include_str!("../../profiles/redcloud-like.toml")),
];

impl CloudProfile {
    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let profile: CloudProfile = toml::from_str(text).map_err(|e| ProfileError::Syntax(e.message().to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(name, _)| *name)
    }

    pub fn bundled(name: &str) -> Option<CloudProfile> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| CloudProfile::from_toml(text).expect("bundled profiles are valid"))
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let invalid = |reason: String| ProfileError::Invalid { profile: self.name.clone(), reason };
        if self.name.trim().is_empty() {
            return Err(invalid("name must not be empty".into()));
        }
        for (kind, map) in [("image", &self.image_map), ("flavor", &self.flavor_map)] {
            let mut seen = BTreeSet::new();
            for (logical, concrete) in map {
                if logical.is_empty() || concrete.is_empty() {
                    return Err(invalid(format!("empty {kind} name in mapping")));
                }
                if !seen.insert(concrete) {
                    return Err(invalid(format!("{kind} {concrete:?} is the target of more than one logical name")));
                }
            }
        }
        if self.network.private_net_name.is_empty() {
            return Err(invalid("network.private_net_name must not be empty".into()));
        }
        if self.network.explicit_dhcp && self.network.dhcp_servers.is_empty() {
            return Err(invalid("explicit_dhcp requires at least one dhcp server".into()));
        }
        for server in &self.network.dhcp_servers {
            if server.parse::<IpAddr>().is_err() {
                return Err(invalid(format!("dhcp server {server:?} is not an IP address")));
            }
        }
        Ok(())
    }
}

/// Provider-specific instance request produced by [`resolve`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcreteInstanceRequest {
    pub image_name: String,
    pub flavor_name: String,
    pub network: NetworkSpec,
    pub metadata: BTreeMap<String, String>,
}

impl ConcreteInstanceRequest {
    /// Copy tagged with the worker it is for.
    pub fn for_node(&self, node: NodeId) -> ConcreteInstanceRequest {
        let mut req = self.clone();
        req.metadata.insert("node_id".into(), node.to_string());
        req
    }

    /// Names of the aspects in which two requests differ.
    pub fn differences(&self, other: &ConcreteInstanceRequest) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.image_name != other.image_name {
            out.push("image_name");
        }
        if self.flavor_name != other.flavor_name {
            out.push("flavor_name");
        }
        if self.network.private_net_name != other.network.private_net_name {
            out.push("network.private_net_name");
        }
        if self.network.explicit_dhcp != other.network.explicit_dhcp
            || self.network.dhcp_servers != other.network.dhcp_servers
        {
            out.push("network.dhcp");
        }
        if self.metadata != other.metadata {
            out.push("metadata");
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "image_name = {}\nflavor_name = {}\nnetwork.private_net_name = {}\nnetwork.explicit_dhcp = {}\nnetwork.dhcp_servers = [{}]\n",
            self.image_name,
            self.flavor_name,
            self.network.private_net_name,
            self.network.explicit_dhcp,
            self.network.dhcp_servers.join(", "),
        );
        for (k, v) in &self.metadata {
            out.push_str(&format!("metadata.{k} = {v}\n"));
        }
        out
    }
}

/// Translates the config's logical image and flavor through `profile`.
pub fn resolve(config: &ClusterConfig, profile: &CloudProfile) -> Result<ConcreteInstanceRequest, ProfileError> {
    let image_name = profile
        .image_map
        .get(&config.node_image)
        .ok_or_else(|| ProfileError::UnmappedName { kind: "image", name: config.node_image.clone() })?;
    let flavor_name = profile
        .flavor_map
        .get(&config.node_flavor)
        .ok_or_else(|| ProfileError::UnmappedName { kind: "flavor", name: config.node_flavor.clone() })?;
    let mut metadata = BTreeMap::new();
    metadata.insert("cluster".to_string(), config.name.clone());
    Ok(ConcreteInstanceRequest {
        image_name: image_name.clone(),
        flavor_name: flavor_name.clone(),
        network: profile.network.clone(),
        metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Building,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activation {
    pub instance_id: String,
    pub at: Timestamp,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("capacity of {0} instances reached")]
    CapacityExceeded(u32),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
}

/// The four-operation instance contract, plus activation notifications.
///
/// `create_instance` returns as soon as the provider accepts the request; the
/// instance becomes usable later and is announced through
/// [`CloudProvider::take_activations`]. Deleting an already deleted instance
/// succeeds; deleting an id this provider never issued does not.
pub trait CloudProvider {
    fn create_instance(&mut self, req: &ConcreteInstanceRequest, now: Timestamp) -> Result<String, ProviderError>;
    fn delete_instance(&mut self, instance_id: &str, now: Timestamp) -> Result<(), ProviderError>;
    fn list_instances(&self) -> Vec<(String, InstanceState)>;

    /// Earliest pending activation, if any.
    fn next_activation(&self) -> Option<Timestamp>;
    /// Activations due at or before `now`, in activation order.
    fn take_activations(&mut self, now: Timestamp) -> Vec<Activation>;
}
