use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{Digest, StoreError};

/// Container image reference, `registry/name:tag` with an optional
/// `@<digest>` suffix once pinned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageRef {
    pub registry: String,
    pub name: String,
    pub tag: String,
    pub digest: Option<Digest>,
    pub pinned: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageParseError {
    #[error("image reference {0:?} must look like registry/name:tag[@digest]")]
    Shape(String),
    #[error("image reference contains whitespace or control characters")]
    BadCharacter,
    #[error(transparent)]
    Digest(#[from] super::DigestParseError),
}

impl ImageRef {
    pub fn new(registry: impl Into<String>, name: impl Into<String>, tag: impl Into<String>) -> Self {
        ImageRef { registry: registry.into(), name: name.into(), tag: tag.into(), digest: None, pinned: false }
    }

    pub fn pinned_to(mut self, digest: Digest) -> Self {
        self.digest = Some(digest);
        self.pinned = true;
        self
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned && self.digest.is_some()
    }

    /// Local Singularity image file for this reference, e.g. `hpl.sif`.
    pub fn sif_file_name(&self) -> String {
        let base = self.name.rsplit('/').next().unwrap_or(&self.name);
        format!("{base}.sif")
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}:{}", self.registry, self.name, self.tag)?;
        if let Some(d) = &self.digest {
            write!(f, "@{d}")?;
        }
        Ok(())
    }
}

impl FromStr for ImageRef {
    type Err = ImageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(ImageParseError::BadCharacter);
        }
        let shape = || ImageParseError::Shape(s.to_string());
        let (body, digest) = match s.split_once('@') {
            Some((body, hex)) => (body, Some(hex.parse::<Digest>()?)),
            None => (s, None),
        };
        let (registry, rest) = body.split_once('/').ok_or_else(shape)?;
        let (name, tag) = rest.rsplit_once(':').ok_or_else(shape)?;
        if registry.is_empty() || name.is_empty() || tag.is_empty() || tag.contains('/') {
            return Err(shape());
        }
        Ok(ImageRef {
            registry: registry.to_string(),
            name: name.to_string(),
            tag: tag.to_string(),
            pinned: digest.is_some(),
            digest,
        })
    }
}

/// Resolves a mutable `name:tag` to the digest it currently points at.
pub trait ImageRegistry {
    fn lookup(&self, name: &str, tag: &str) -> Option<Digest>;
}

impl<F> ImageRegistry for F
where
    F: Fn(&str, &str) -> Option<Digest>,
{
    fn lookup(&self, name: &str, tag: &str) -> Option<Digest> {
        self(name, tag)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StaticRegistry {
    entries: BTreeMap<(String, String), Digest>,
}

impl StaticRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tag: &str, digest: Digest) {
        self.entries.insert((name.to_string(), tag.to_string()), digest);
    }
}

impl ImageRegistry for StaticRegistry {
    fn lookup(&self, name: &str, tag: &str) -> Option<Digest> {
        self.entries.get(&(name.to_string(), tag.to_string())).copied()
    }
}

/// Replaces the mutable tag's meaning with an immutable digest. Already
/// pinned references come back unchanged without consulting the registry.
pub fn pin_image(image: &ImageRef, registry: &impl ImageRegistry) -> Result<ImageRef, StoreError> {
    if image.is_pinned() {
        return Ok(image.clone());
    }
    let digest = registry.lookup(&image.name, &image.tag).ok_or_else(|| StoreError::UnknownImage(image.to_string()))?;
    Ok(image.clone().pinned_to(digest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> StaticRegistry {
        let mut r = StaticRegistry::new();
        r.insert("nix-ompi", "latest", Digest::of(b"nix-ompi image"));
        r
    }

    #[test]
    fn pins_via_lookup() {
        let img = ImageRef::new("hub", "nix-ompi", "latest");
        let pinned = pin_image(&img, &registry()).unwrap();
        assert!(pinned.is_pinned());
        assert_eq!(pinned.digest, Some(Digest::of(b"nix-ompi image")));
    }

    #[test]
    fn pinning_is_idempotent() {
        let img = ImageRef::new("hub", "nix-ompi", "latest").pinned_to(Digest::of(b"old"));
        let empty = |_: &str, _: &str| None;
        assert_eq!(pin_image(&img, &empty).unwrap(), img);
    }

    #[test]
    fn unknown_image() {
        let img = ImageRef::new("hub", "missing", "latest");
        assert!(matches!(pin_image(&img, &registry()), Err(StoreError::UnknownImage(_))));
    }

    #[test]
    fn parse_and_render() {
        let img: ImageRef = "localhost:5000/ctl/hpl:2.3".parse().unwrap();
        assert_eq!(img.registry, "localhost:5000");
        assert_eq!(img.name, "ctl/hpl");
        assert_eq!(img.tag, "2.3");
        assert!(!img.pinned);
        assert_eq!(img.to_string(), "localhost:5000/ctl/hpl:2.3");
        assert_eq!(img.sif_file_name(), "hpl.sif");

        let pinned = img.clone().pinned_to(Digest::of(b"x"));
        assert_eq!(pinned.to_string().parse::<ImageRef>().unwrap(), pinned);
    }

    #[test]
    fn parse_rejects_malformed() {
        for bad in ["hpl", "hub/hpl", "/hpl:1", "hub/:1", "hub/hpl:", "hub/hpl:1@zz", "hub/h pl:1"] {
            assert!(bad.parse::<ImageRef>().is_err(), "{bad}");
        }
    }
}
