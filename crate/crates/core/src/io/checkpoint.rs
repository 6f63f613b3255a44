//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `CHRF` |
//! | 4 | format version (`u32`, currently 1) |
//! | 32 | SHA-256 digest of the experiment configuration |
//! | 4 + n | `u32` length, then JSON `{"field": FieldConfig, "num_images": N}` |
//! | 4 | number of parameter blocks (`u32`) |
//!
//! followed by one block per parameter: `u32` name length, UTF-8 name,
//! `u32` rank, `u64` per dimension, then the values as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChronoField, FieldConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CHRF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    field: FieldConfig,
    num_images: usize,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub field: FieldConfig,
    pub num_images: usize,
    pub params: ParamStore<f64>,
}

impl Checkpoint {
    /// Rebuilds the field with the stored parameters.
    pub fn into_field<T: Scalar>(self) -> Result<ChronoField<T>> {
        let mut field = ChronoField::<T>::new(self.field, self.num_images)?;
        field.load_store(self.params.cast::<T>())?;
        Ok(field)
    }
}

pub fn encode_checkpoint<T: Scalar>(field: &ChronoField<T>, digest: &[u8; 32]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        field: field.config.clone(),
        num_images: field.num_images,
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(field.store.len() as u32).to_le_bytes());
    for p in field.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let n = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let blocks = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..blocks {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.add(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        digest,
        field: meta.field,
        num_images: meta.num_images,
        params,
    })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, field: &ChronoField<T>, digest: &[u8; 32]) -> Result<()> {
    let bytes = encode_checkpoint(field, digest)?;
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TriPlaneConfig;

    fn small() -> FieldConfig {
        FieldConfig {
            geo_hidden: vec![8],
            app_hidden: vec![8],
            xyz_frequencies: 1,
            dir_frequencies: 1,
            triplane: TriPlaneConfig {
                resolution: 3,
                channels: 2,
                init_scale: 0.1,
            },
            illum_dim: 2,
            ..FieldConfig::desk()
        }
    }

    #[test]
    fn round_trip_is_exact_for_both_precisions() {
        let f = ChronoField::<f32>::new(small(), 3).unwrap();
        let bytes = encode_checkpoint(&f, &[7; 32]).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.digest, [7; 32]);
        let g: ChronoField<f32> = ck.into_field().unwrap();
        for (a, b) in f.store.iter().zip(g.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
        let h = ChronoField::<f64>::new(FieldConfig { seed: 9, ..small() }, 3).unwrap();
        let back: ChronoField<f64> = decode_checkpoint(&encode_checkpoint(&h, &[0; 32]).unwrap())
            .unwrap()
            .into_field()
            .unwrap();
        assert_eq!(encode_checkpoint(&back, &[0; 32]).unwrap(), encode_checkpoint(&h, &[0; 32]).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let f = ChronoField::<f64>::new(small(), 1).unwrap();
        let bytes = encode_checkpoint(&f, &[0; 32]).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut future = bytes.clone();
        future[4] = 2;
        assert!(decode_checkpoint(&future).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
    }
}
