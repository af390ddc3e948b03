//! Binary checkpoint.
//!
//! ```text
//! magic      8 bytes "SEMCOMCK"
//! version    u32
//! stage      u8
//! gcn        u32 layer count + 1, u64 per width, f64 layer-norm epsilon
//! codec      u64 feature, semantic, symbols
//! sigma_s    f64
//! tensors    u32 count, then per tensor: name, u32 rank, u64 per axis, f64 data
//! embeddings u32 count, u64 dim, then per row: label, u8 seen, f64 data
//! config     u32 count, then key, value
//! sha256     32 bytes over everything before it
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Integers and floats are
//! little-endian; tensors are row-major. Nothing time-dependent is stored, so
//! identical state always yields identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::{CodecDims, CodecStack};
use crate::dataset::ByteReader;
use crate::error::{Error, Result};
use crate::gcn::{CategoryEmbeddingTable, GcnModel};
use crate::nn::Parameters;
use crate::rng::rng_from;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEMCOMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Last completed training stage.
    pub stage: u8,
    pub gcn: GcnModel,
    pub codec: CodecStack,
    /// Embeddings of every seen and unseen category.
    pub embeddings: CategoryEmbeddingTable,
    /// Standard deviation of the channel symbols over the training set;
    /// zero until stage two has run.
    pub sigma_s: f64,
    pub config: BTreeMap<String, String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    put_u64(out, n as u64);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        out.push(self.stage);

        let dims = self.gcn.dims();
        put_u32(&mut out, dims.len() as u32);
        for d in &dims {
            put_len(&mut out, *d);
        }
        put_f64(&mut out, self.gcn.layers.first().map_or(0.0, |l| l.eps));
        let cd = self.codec.dims();
        put_len(&mut out, cd.feature);
        put_len(&mut out, cd.semantic);
        put_len(&mut out, cd.symbols);
        put_f64(&mut out, self.sigma_s);

        let tensors: Vec<_> = self.gcn.tensors().into_iter().chain(self.codec.tensors()).collect();
        put_u32(&mut out, tensors.len() as u32);
        for t in &tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len() as u32);
            for s in &t.shape {
                put_len(&mut out, *s);
            }
            out.reserve(8 * t.data.len());
            for v in t.data {
                put_f64(&mut out, *v);
            }
        }

        put_u32(&mut out, self.embeddings.len() as u32);
        put_len(&mut out, self.embeddings.dim());
        for (label, seen, v) in self.embeddings.entries() {
            put_str(&mut out, label);
            out.push(u8::from(seen));
            for x in v {
                put_f64(&mut out, *x);
            }
        }

        put_u32(&mut out, self.config.len() as u32);
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch; file is corrupted".into()));
        }
        let mut r = ByteReader::new(&body[8..]);
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let stage = r.u8()?;
        let n_dims = r.u32()? as usize;
        let dims = (0..n_dims).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let eps = r.f64()?;
        let codec_dims = CodecDims {
            feature: r.usize()?,
            semantic: r.usize()?,
            symbols: r.usize()?,
        };
        let sigma_s = r.f64()?;

        // shapes come from the stored dims; values are overwritten below
        let mut rng = rng_from(0);
        let mut gcn = GcnModel::new(&dims, eps, &mut rng).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut codec = CodecStack::new(codec_dims, &mut rng);
        if gcn.output_dim() != codec_dims.semantic {
            return Err(Error::Checkpoint(format!(
                "GCN output {} does not match semantic dimension {}",
                gcn.output_dim(),
                codec_dims.semantic
            )));
        }

        let expected: Vec<(String, Vec<usize>)> = gcn
            .tensors()
            .into_iter()
            .chain(codec.tensors())
            .map(|t| (t.name, t.shape))
            .collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "{count} tensors stored, {} expected",
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (name, shape) in &expected {
            let stored = r.string()?;
            let rank = r.u32()? as usize;
            let stored_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            if &stored != name || &stored_shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{stored}` {stored_shape:?} where `{name}` {shape:?} was expected"
                )));
            }
            let n: usize = shape.iter().product();
            values.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        {
            let mut slots = gcn.tensors_mut();
            slots.extend(codec.tensors_mut());
            for (slot, v) in slots.into_iter().zip(&values) {
                slot.copy_from_slice(v);
            }
        }

        let rows = r.u32()? as usize;
        let dim = r.usize()?;
        if rows > 0 && dim != codec_dims.semantic {
            return Err(Error::Checkpoint(format!(
                "embedding dimension {dim} does not match semantic dimension {}",
                codec_dims.semantic
            )));
        }
        let mut entries = Vec::with_capacity(rows);
        for _ in 0..rows {
            let label = r.string()?;
            let seen = r.u8()? != 0;
            let v = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            entries.push((label, seen, v));
        }
        let embeddings = CategoryEmbeddingTable::new(entries)?;

        let n_cfg = r.u32()? as usize;
        let mut config = BTreeMap::new();
        for _ in 0..n_cfg {
            let k = r.string()?;
            let v = r.string()?;
            config.insert(k, v);
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes after config".into()));
        }
        Ok(Self {
            stage,
            gcn,
            codec,
            embeddings,
            sigma_s,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let mut rng = rng_from(3);
        let gcn = GcnModel::new(&[3, 5, 5], 1e-3, &mut rng).unwrap();
        let codec = CodecStack::new(
            CodecDims {
                feature: 4,
                semantic: 5,
                symbols: 2,
            },
            &mut rng,
        );
        let embeddings = CategoryEmbeddingTable::new(vec![
            ("b".into(), true, vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ("a".into(), false, vec![0.5; 5]),
        ])
        .unwrap();
        Checkpoint {
            stage: 2,
            gcn,
            codec,
            embeddings,
            sigma_s: 0.75,
            config: [("lr".to_string(), "0.0001".to_string())].into_iter().collect(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = small();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = small().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = small().to_bytes();
        bytes[8] = 9;
        let n = bytes.len();
        let digest = Sha256::digest(&bytes[..n - 32]);
        bytes[n - 32..].copy_from_slice(&digest);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(m)) if m.contains("version")));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut c = small();
        let mut rng = rng_from(1);
        c.codec = CodecStack::new(
            CodecDims {
                feature: 4,
                semantic: 6,
                symbols: 2,
            },
            &mut rng,
        );
        assert!(Checkpoint::from_bytes(&c.to_bytes()).is_err());
    }
}
