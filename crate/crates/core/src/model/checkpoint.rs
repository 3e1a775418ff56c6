//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//! `b"CPVAECKP"`, `u32` format version, `u64` header length, UTF-8 JSON
//! header, `u32` array count, then per array: `u32` name length, name,
//! `u32` rank, `u64` per dimension, `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::CpVaeModel;
use crate::error::{Error, Result};
use crate::numeric::ParamStore;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 8] = b"CPVAECKP";
pub const FORMAT_VERSION: u32 = 1;

/// A named array read back from a parameter file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_arrays<W: Write>(mut w: W, header: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Sanity cap on any single length field so a corrupt file cannot request
/// an absurd allocation.
const MAX_LEN: u64 = 1 << 34;

pub fn read_arrays<R: Read>(r: R) -> Result<(serde_json::Value, Vec<NamedArray>)> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")?.as_slice() != MAGIC {
        return Err(Error::Checkpoint("not a parameter file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let hlen = r.u64("header length")?;
    if hlen > MAX_LEN {
        return Err(Error::Checkpoint("header length is implausible".into()));
    }
    let header: serde_json::Value = serde_json::from_slice(&r.bytes(hlen as usize, "header")?)?;
    let count = r.u32("array count")?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.u32("name length")? as usize;
        let name = String::from_utf8(r.bytes(nlen, "name")?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n > MAX_LEN {
            return Err(Error::Checkpoint(format!("array `{name}` is implausibly large")));
        }
        let raw = r.bytes(n as usize * 8, &name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(NamedArray { name, shape, values });
    }
    Ok((header, arrays))
}

/// Copies arrays into `store`, requiring an exact match of names and shapes.
pub fn restore_arrays(store: &mut ParamStore, arrays: Vec<NamedArray>) -> Result<()> {
    if arrays.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "file has {} arrays, model has {}",
            arrays.len(),
            store.len()
        )));
    }
    for a in arrays {
        let id = store
            .find(&a.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array `{}`", a.name)))?;
        let t = store.get_mut(id);
        if t.shape() != a.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "array `{}` has shape {:?}, model expects {:?}",
                a.name,
                a.shape,
                t.shape()
            )));
        }
        t.values_mut().copy_from_slice(&a.values);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    model: ModelConfig,
    vocab_fingerprint: String,
    vocab: Vec<String>,
    extra: serde_json::Value,
}

/// A trained model with its vocabulary and free-form metadata
/// (training configuration, basis assignment, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CpVaeModel,
    pub vocab: Vocabulary,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: "cpvae".into(),
            model: self.model.config().clone(),
            vocab_fingerprint: self.vocab.fingerprint(),
            vocab: self.vocab.tokens().to_vec(),
            extra: self.extra.clone(),
        };
        let mut out = Vec::new();
        write_arrays(&mut out, &serde_json::to_value(&header)?, self.model.store())?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, arrays) = read_arrays(bytes)?;
        let header: Header = serde_json::from_value(header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.kind != "cpvae" {
            return Err(Error::Checkpoint(format!("file holds a `{}`, not a model", header.kind)));
        }
        let vocab = Vocabulary::from_tokens(header.vocab);
        if vocab.fingerprint() != header.vocab_fingerprint {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        if vocab.len() != header.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }
        let mut model = CpVaeModel::skeleton(header.model)?;
        restore_arrays(model.store_mut(), arrays)?;
        Ok(Self {
            model,
            vocab,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
