//! Precomputed feature vectors and the label map that names their classes.
//!
//! Feature file layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "SEMCFEAT"
//! version  u32      1
//! count    u64      N
//! dim      u64      F
//! N × { label u32, F × f64 }
//! ```
//!
//! The label map is UTF-8 text, one `id<TAB>label<TAB>seen|unseen` line per
//! class.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"SEMCFEAT";
pub const FEATURE_VERSION: u32 = 1;

/// Labeled feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u32>,
}

impl FeatureDataset {
    pub fn new(features: Array2<f64>, labels: Vec<u32>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimMismatch {
                context: "dataset labels",
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("dataset contains non-finite features".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows whose label satisfies `keep`, in their original order.
    pub fn filter(&self, keep: impl Fn(u32) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        Self {
            features: self.features.select(ndarray::Axis(0), &idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::Format(format!("write failed: {e}"));
        w.write_all(FEATURE_MAGIC).map_err(io)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim() as u64).to_le_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(4 + 8 * self.dim());
        for (label, row) in self.labels.iter().zip(self.features.rows()) {
            buf.clear();
            buf.extend_from_slice(&label.to_le_bytes());
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("read failed: {e}")))?;
        let mut cur = ByteReader::new(&bytes);
        if cur.take(8)? != FEATURE_MAGIC {
            return Err(Error::Format("not a feature file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!(
                "feature file version {version}, expected {FEATURE_VERSION}"
            )));
        }
        let n = usize::try_from(cur.u64()?).map_err(|_| Error::Format("sample count too large".into()))?;
        let f = usize::try_from(cur.u64()?).map_err(|_| Error::Format("dimension too large".into()))?;
        let expected = n
            .checked_mul(4 + 8 * f)
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        if cur.remaining() != expected {
            return Err(Error::Format(format!(
                "feature file body is {} bytes, header implies {expected}",
                cur.remaining()
            )));
        }
        let mut labels = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * f);
        for _ in 0..n {
            labels.push(cur.u32()?);
            for _ in 0..f {
                values.push(cur.f64()?);
            }
        }
        let features = Array2::from_shape_vec((n, f), values).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(features, labels)
    }
}

/// Little-endian cursor over a byte slice.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length too large".into()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub id: u32,
    pub label: String,
    pub seen: bool,
}

/// Class id ↔ category label ↔ split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMap {
    entries: BTreeMap<u32, LabelEntry>,
}

impl LabelMap {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut names = std::collections::BTreeSet::new();
        for e in entries {
            if !names.insert(e.label.clone()) {
                return Err(Error::Format(format!("label `{}` appears twice", e.label)));
            }
            if map.insert(e.id, e.clone()).is_some() {
                return Err(Error::Format(format!("label id {} appears twice", e.id)));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn get(&self, id: u32) -> Option<&LabelEntry> {
        self.entries.get(&id)
    }

    pub fn require(&self, id: u32) -> Result<&LabelEntry> {
        self.get(id).ok_or_else(|| Error::NotFound {
            kind: "label id",
            name: id.to_string(),
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = &LabelEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen_labels(&self) -> Vec<String> {
        self.entries().filter(|e| e.seen).map(|e| e.label.clone()).collect()
    }

    pub fn unseen_labels(&self) -> Vec<String> {
        self.entries().filter(|e| !e.seen).map(|e| e.label.clone()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in self.entries() {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                e.id,
                e.label,
                if e.seen { "seen" } else { "unseen" }
            ));
        }
        s
    }

    pub fn from_tsv<R: BufRead>(source: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(i + 1, "expected id, label and split"));
            }
            let id = f[0]
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad label id `{}`", f[0])))?;
            let seen = match f[2] {
                "seen" => true,
                "unseen" => false,
                other => return Err(Error::parse(i + 1, format!("split must be seen or unseen, got `{other}`"))),
            };
            entries.push(LabelEntry {
                id,
                label: f[1].to_string(),
                seen,
            });
        }
        Self::new(entries)
    }
}
