use std::collections::{BTreeMap, BTreeSet};

use super::{hash_derivation, Derivation, Digest, StoreError};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub digest: Digest,
    pub name: String,
    pub realized_at: Timestamp,
    pub refs: BTreeSet<Digest>,
}

/// Append-only, hash-indexed store. Realization is simulated: recording an
/// entry stands in for building the package.
#[derive(Debug, Clone, Default)]
pub struct Store {
    entries: BTreeMap<Digest, StoreEntry>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &Digest) -> Option<&StoreEntry> {
        self.entries.get(digest)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.entries.contains_key(digest)
    }

    pub fn entries(&self) -> impl Iterator<Item = &StoreEntry> {
        self.entries.values()
    }

    /// Realizes `d`, returning the existing entry untouched when its digest is
    /// already present.
    pub fn realize(&mut self, d: &Derivation, now: Timestamp) -> Result<StoreEntry, StoreError> {
        let digest = hash_derivation(d);
        if let Some(existing) = self.entries.get(&digest) {
            return Ok(existing.clone());
        }
        if let Some(missing) = d.inputs.iter().find(|i| !self.entries.contains_key(i)) {
            return Err(StoreError::MissingInput(*missing));
        }
        let entry = StoreEntry { digest, name: d.name.clone(), realized_at: now, refs: d.inputs.clone() };
        self.entries.insert(digest, entry.clone());
        Ok(entry)
    }
}

/// Package name → digest for one environment.
pub type EnvManifest = BTreeMap<String, Digest>;

/// Builds the environment for `entries` plus the transitive closure of their
/// refs, resolved through `store`. Two distinct digests under one name are a
/// collision; the same digest reached twice is fine.
pub fn compose_env(entries: &[StoreEntry], store: &Store) -> Result<EnvManifest, StoreError> {
    let mut manifest = EnvManifest::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<StoreEntry> = entries.iter().rev().cloned().collect();

    while let Some(entry) = stack.pop() {
        if !seen.insert(entry.digest) {
            continue;
        }
        match manifest.get(&entry.name) {
            Some(existing) if *existing != entry.digest => {
                let (first, second) =
                    if *existing < entry.digest { (*existing, entry.digest) } else { (entry.digest, *existing) };
                return Err(StoreError::NameCollision { name: entry.name.clone(), first, second });
            }
            Some(_) => {}
            None => {
                manifest.insert(entry.name.clone(), entry.digest);
            }
        }
        for r in entry.refs.iter().rev() {
            if seen.contains(r) {
                continue;
            }
            let dep = store.get(r).ok_or(StoreError::MissingInput(*r))?;
            stack.push(dep.clone());
        }
    }
    Ok(manifest)
}
