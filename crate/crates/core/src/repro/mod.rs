//! Reproducibility model: content-hashed derivations realized into a
//! hash-indexed store, pinned image references, and host/container MPI
//! compatibility.

mod derivation;
mod digest;
mod image;
mod mpi;
mod store;

pub use derivation::{canonical_bytes, hash_derivation, Derivation, DerivationFile, Source};
pub use digest::{Digest, DigestParseError};
pub use image::{pin_image, ImageParseError, ImageRef, ImageRegistry, StaticRegistry};
pub use mpi::{check_mpi_compat, Compatibility, MpiCompatRule, MpiImpl, MpiParseError, MpiRuntime};
pub use store::{compose_env, EnvManifest, Store, StoreEntry};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("derivation input {0} has not been realized")]
    MissingInput(Digest),
    #[error("name collision for {name}: {first} vs {second}")]
    NameCollision { name: String, first: Digest, second: Digest },
    #[error("no registry entry for image {0}")]
    UnknownImage(String),
}
