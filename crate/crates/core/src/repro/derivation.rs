use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Digest;

/// A fetched source blob. Ordered by `uri` first, which is the canonical order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Source {
    pub uri: String,
    pub digest: Digest,
}

/// Complete build specification for one package.
///
/// `inputs` and `sources` are sets, so the order in which a derivation file
/// lists them never reaches the hash.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Derivation {
    pub name: String,
    #[serde(default)]
    pub inputs: BTreeSet<Digest>,
    #[serde(default)]
    pub sources: BTreeSet<Source>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
    #[serde(default)]
    pub builder: String,
}

/// On-disk form of a derivation. Lists may repeat entries; duplicates
/// collapse on conversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationFile {
    pub name: String,
    #[serde(default)]
    pub builder: String,
    #[serde(default)]
    pub inputs: Vec<Digest>,
    #[serde(default)]
    pub sources: Vec<Source>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl From<DerivationFile> for Derivation {
    fn from(f: DerivationFile) -> Self {
        Derivation {
            name: f.name,
            inputs: f.inputs.into_iter().collect(),
            sources: f.sources.into_iter().collect(),
            config: f.config,
            builder: f.builder,
        }
    }
}

impl From<&Derivation> for DerivationFile {
    fn from(d: &Derivation) -> Self {
        DerivationFile {
            name: d.name.clone(),
            builder: d.builder.clone(),
            inputs: d.inputs.iter().copied().collect(),
            sources: d.sources.iter().cloned().collect(),
            config: d.config.clone(),
        }
    }
}

impl Derivation {
    pub fn new(name: impl Into<String>) -> Self {
        Derivation { name: name.into(), ..Default::default() }
    }

    pub fn with_input(mut self, d: Digest) -> Self {
        self.inputs.insert(d);
        self
    }

    pub fn with_source(mut self, uri: impl Into<String>, digest: Digest) -> Self {
        self.sources.insert(Source { uri: uri.into(), digest });
        self
    }

    pub fn with_config(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.config.insert(key.into(), value.into());
        self
    }

    pub fn with_builder(mut self, builder: impl Into<String>) -> Self {
        self.builder = builder.into();
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str::<DerivationFile>(text).map(Derivation::from)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&DerivationFile::from(self)).expect("derivation always serializes")
    }

    pub fn digest(&self) -> Digest {
        hash_derivation(self)
    }
}

const DOMAIN_TAG: &[u8] = b"vcluster-derivation-v1";

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn put_count(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u64).to_be_bytes());
}

/// Canonical byte encoding hashed by [`hash_derivation`].
///
/// Field order: name, inputs ascending, sources by uri, config by key,
/// builder. Every variable-length field and every collection carries a
/// big-endian u64 length prefix, so no two distinct derivations encode to the
/// same bytes.
pub fn canonical_bytes(d: &Derivation) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    put_bytes(&mut out, DOMAIN_TAG);
    put_bytes(&mut out, d.name.as_bytes());

    put_count(&mut out, d.inputs.len());
    for input in &d.inputs {
        out.extend_from_slice(input.as_bytes());
    }

    put_count(&mut out, d.sources.len());
    for src in &d.sources {
        put_bytes(&mut out, src.uri.as_bytes());
        out.extend_from_slice(src.digest.as_bytes());
    }

    put_count(&mut out, d.config.len());
    for (k, v) in &d.config {
        put_bytes(&mut out, k.as_bytes());
        put_bytes(&mut out, v.as_bytes());
    }

    put_bytes(&mut out, d.builder.as_bytes());
    out
}

pub fn hash_derivation(d: &Derivation) -> Digest {
    Digest::of(&canonical_bytes(d))
}
