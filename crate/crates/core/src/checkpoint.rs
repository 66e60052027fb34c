//! Versioned, checksummed checkpoint container.
//!
//! ```text
//! magic "NRNCKPT\0" | u32 version | u64 payload length | payload | sha256(payload)
//! payload (v2): u64 len + meta JSON | u64 len + RNG JSON (0 = none) | tensors
//! payload (v1): u64 len + meta JSON | tensors
//! tensors: u32 count, then per tensor u32 name len, name, u32 ndim, u64 dims, f64 LE data
//! ```
//!
//! Version 1 files carry no RNG state; they load with a migration note.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"NRNCKPT\0";
pub const VERSION: u32 = 2;
const HEADER: usize = 8 + 4 + 8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, Value>,
    pub tensors: BTreeMap<String, Tensor>,
    pub rng: Option<RngState>,
    /// Set when the file was written by an older format version.
    pub migration_note: Option<String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint payload ends early".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn chunk(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl serde::Serialize) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
        self.meta.insert(key.to_string(), v);
        Ok(())
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{key}` entry")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("checkpoint `{key}`: {e}")))
    }

    pub fn insert_params(&mut self, prefix: &str, params: &ParamStore) {
        for (name, t) in params.iter() {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Every tensor under `prefix`, with the prefix stripped.
    pub fn params(&self, prefix: &str) -> ParamStore {
        let mut p = ParamStore::new();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(prefix) {
                p.insert(rest, t.clone());
            }
        }
        p
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.encode(VERSION)
    }

    /// Serializes in the given format version (1 or 2).
    pub fn encode(&self, version: u32) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let push_chunk = |payload: &mut Vec<u8>, bytes: &[u8]| {
            payload.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            payload.extend_from_slice(bytes);
        };
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        push_chunk(&mut payload, &meta);
        match version {
            1 => {}
            2 => {
                let rng = match &self.rng {
                    Some(r) => serde_json::to_vec(r).map_err(|e| Error::Format(e.to_string()))?,
                    None => Vec::new(),
                };
                push_chunk(&mut payload, &rng);
            }
            v => return Err(Error::Format(format!("cannot write checkpoint version {v}"))),
        }
        payload.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            payload.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                payload.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER + payload.len() + 32);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let integrity = |message: String| Error::Integrity {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER || bytes[..8] != MAGIC {
            return Err(integrity("missing checkpoint header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version == 0 || version > VERSION {
            return Err(Error::Format(format!(
                "{}: checkpoint version {version} is not supported (reader handles 1..={VERSION})",
                path.display()
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != HEADER + len + 32 {
            return Err(integrity(format!(
                "expected {} bytes, found {} (truncated or padded)",
                HEADER + len + 32,
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER..HEADER + len];
        if Sha256::digest(payload).as_slice() != &bytes[HEADER + len..] {
            return Err(integrity("checksum mismatch".into()));
        }

        let mut r = Reader { bytes: payload, pos: 0 };
        let meta: BTreeMap<String, Value> =
            serde_json::from_slice(r.chunk()?).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
        let (rng, migration_note) = if version >= 2 {
            let raw = r.chunk()?;
            let rng = if raw.is_empty() {
                None
            } else {
                Some(serde_json::from_slice(raw).map_err(|e| Error::Format(format!("checkpoint rng: {e}")))?)
            };
            (rng, None)
        } else {
            (
                None,
                Some("migrated from checkpoint format v1: no RNG state recorded; resumed runs reseed from the config".to_string()),
            )
        };
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|e| Error::Format(format!("tensor name: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != payload.len() {
            return Err(Error::Format("trailing bytes in checkpoint payload".into()));
        }
        Ok(Self {
            meta,
            tensors,
            rng,
            migration_note,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("epoch", 3).unwrap();
        c.set_meta("kind", "brain").unwrap();
        c.tensors.insert("a.w".into(), Tensor::new([2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        c.tensors.insert("a.b".into(), Tensor::zeros([2]));
        let mut rng = stream(5, "x");
        let _: u64 = rng.random();
        c.rng = Some(RngState::capture(&rng));
        c
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        let first = fs::read(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        back.save(&p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn truncation_and_corruption_are_integrity_errors() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("mem");
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 5], p),
            Err(Error::Integrity { .. })
        ));
        let mut bad = bytes.clone();
        bad[HEADER + 3] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Integrity { .. })));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes, Path::new("m")), Err(Error::Format(_))));
    }

    #[test]
    fn v1_migrates_without_rng() {
        let c = sample();
        let v1 = c.encode(1).unwrap();
        let back = Checkpoint::from_bytes(&v1, Path::new("old")).unwrap();
        assert_eq!(back.tensors, c.tensors);
        assert_eq!(back.meta, c.meta);
        assert!(back.rng.is_none());
        assert!(back.migration_note.unwrap().contains("v1"));
    }
}
