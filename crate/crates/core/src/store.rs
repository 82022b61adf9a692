//! Embedding store: a binary record file with a JSON sidecar, plus a JSON
//! Lines interchange form shared with external exporters.
//!
//! Binary layout (little-endian): `b"QEMB"`, `u32` version, `u64` record
//! count, `u32` dimension, then per record a `u32`-prefixed UTF-8 id, a `u8`
//! channel tag and `dim` `f32` values.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::embed::{Channel, Embedding, Fingerprint};
use crate::error::{Error, Result};
use crate::scalar::normalize_in_place;

const STORE_MAGIC: &[u8; 4] = b"QEMB";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSidecar {
    pub count: usize,
    pub dim: usize,
    pub fingerprint: Option<Fingerprint>,
    /// Free-form provenance (model tag, role, source fingerprint).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub records: Vec<Embedding<f64>>,
    pub fingerprint: Option<Fingerprint>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    channel: Channel,
    vec: Vec<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

impl EmbeddingStore {
    pub fn new(records: Vec<Embedding<f64>>, fingerprint: Option<Fingerprint>) -> Self {
        Self {
            records,
            fingerprint,
            meta: serde_json::Value::Null,
        }
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.vec.len())
    }

    pub fn get(&self, id: &str) -> Option<&Embedding<f64>> {
        self.records.iter().find(|r| r.owner_id == id)
    }

    fn check(&self) -> Result<()> {
        let dim = self.dim();
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.vec.len(),
                });
            }
            if !seen.insert(r.owner_id.as_str()) {
                return Err(Error::DuplicateId(r.owner_id.clone()));
            }
        }
        Ok(())
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        self.check()?;
        w.write_all(STORE_MAGIC)?;
        w.write_u32::<LittleEndian>(STORE_VERSION)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        for r in &self.records {
            w.write_u32::<LittleEndian>(r.owner_id.len() as u32)?;
            w.write_all(r.owner_id.as_bytes())?;
            w.write_u8(r.channel.to_u8())?;
            for &x in &r.vec {
                w.write_f32::<LittleEndian>(x as f32)?;
            }
        }
        Ok(())
    }

    /// Reads records and re-normalizes each one in `f64` (the file holds
    /// `f32`, which only keeps unit norm to about 1e-7).
    pub fn read_binary(mut r: impl Read) -> Result<Vec<Embedding<f64>>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::parse("embedding store", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != STORE_VERSION {
            return Err(Error::parse(
                "embedding store",
                format!("unsupported version {version}"),
            ));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id)?;
            let owner_id = String::from_utf8(id)
                .map_err(|e| Error::parse(format!("record {i}"), e.to_string()))?;
            let tag = r.read_u8()?;
            let channel = Channel::from_u8(tag).ok_or_else(|| {
                Error::parse(format!("record {i}"), format!("unknown channel tag {tag}"))
            })?;
            let mut vec = (0..dim)
                .map(|_| Ok(r.read_f32::<LittleEndian>()? as f64))
                .collect::<Result<Vec<f64>>>()?;
            normalize_in_place(&mut vec).ok_or(Error::ZeroVector)?;
            records.push(Embedding {
                owner_id,
                channel,
                vec,
            });
        }
        Ok(records)
    }

    /// Writes `path` and its `path.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))?;
        let sidecar = StoreSidecar {
            count: self.records.len(),
            dim: self.dim(),
            fingerprint: self.fingerprint.clone(),
            meta: self.meta.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records = Self::read_binary(BufReader::new(File::open(path)?))?;
        let side = sidecar_path(path);
        let (fingerprint, meta) = if side.exists() {
            let s: StoreSidecar = serde_json::from_slice(&std::fs::read(side)?)?;
            (s.fingerprint, s.meta)
        } else {
            (None, serde_json::Value::Null)
        };
        let store = Self {
            records,
            fingerprint,
            meta,
        };
        store.check()?;
        Ok(store)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            let rec = JsonRecord {
                id: r.owner_id.clone(),
                channel: r.channel,
                vec: r.vec.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses `{"id", "channel", "vec"}` lines. Vectors are normalized when
    /// they are not already unit length.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("jsonl line {}", i + 1), e.to_string()))?;
            let mut vec = rec.vec;
            normalize_in_place(&mut vec).ok_or(Error::ZeroVector)?;
            records.push(Embedding {
                owner_id: rec.id,
                channel: rec.channel,
                vec,
            });
        }
        let store = Self::new(records, None);
        store.check()?;
        Ok(store)
    }

    /// Loads either format, chosen by extension (`.jsonl` or binary).
    pub fn open(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "jsonl") {
            Self::read_jsonl(BufReader::new(File::open(path)?))
        } else {
            Self::load(path)
        }
    }
}
