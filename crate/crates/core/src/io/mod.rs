//! On-disk formats: pixmaps, checkpoints, dataset directories and digests.

pub mod checkpoint;
pub mod dataset;
pub mod pnm;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, load_manifest, save_dataset, Manifest, SCHEMA_VERSION};
pub use pnm::{read_pgm, read_ppm, write_pgm, write_ppm};

/// SHA-256 of the canonical JSON form of `value` (object keys sorted).
pub fn config_digest<S: Serialize>(value: &S) -> Result<[u8; 32]> {
    let canonical = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = serde_json::to_vec(&canonical).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Sha256::digest(&bytes).into())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
