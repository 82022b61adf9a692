//! Okapi BM25 inverted index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 4] = b"QBM2";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn idf(n_units: usize, df: usize) -> f64 {
    let (n, df) = (n_units as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    /// Unit ids in ascending order; postings refer to positions here.
    unit_ids: Vec<String>,
    lengths: Vec<u32>,
    avg_len: f64,
    params: Bm25Params,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    n: usize,
    k1: f64,
    b: f64,
    avg_len: f64,
    terms: usize,
}

impl Bm25Index {
    pub fn build<'a>(
        units: impl IntoIterator<Item = (&'a str, &'a TokenSeq)>,
        params: Bm25Params,
    ) -> Result<Self> {
        let mut units: Vec<(&str, &TokenSeq)> = units.into_iter().collect();
        if units.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        units.sort_by(|a, b| a.0.cmp(b.0));
        if let Some(w) = units.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.to_string()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(units.len());
        for (idx, (_, toks)) in units.iter().enumerate() {
            lengths.push(toks.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in toks.iter() {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings
                    .entry(t.to_string())
                    .or_default()
                    .push((idx as u32, c));
            }
        }
        let total: u64 = lengths.iter().map(|&l| l as u64).sum();
        let avg_len = (total as f64 / lengths.len() as f64).max(f64::MIN_POSITIVE);
        Ok(Self {
            unit_ids: units.iter().map(|(id, _)| id.to_string()).collect(),
            lengths,
            avg_len,
            params,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, unit_id: &str) -> u32 {
        let Ok(idx) = self.unit_ids.binary_search_by(|u| u.as_str().cmp(unit_id)) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(idx as u32), |e| e.0)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    /// Ranks units containing at least one query token. Every query token
    /// occurrence contributes a term; ties go to the smaller unit id.
    pub fn score(&self, query: &TokenSeq, top_k: usize) -> Vec<(String, f64)> {
        let Bm25Params { k1, b } = self.params;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query.iter() {
            let Some(plist) = self.postings.get(term) else {
                continue;
            };
            let w = idf(self.len(), plist.len());
            for &(u, tf) in plist {
                let tf = tf as f64;
                let norm = 1.0 - b + b * self.lengths[u as usize] as f64 / self.avg_len;
                *acc.entry(u).or_default() += w * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = acc.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        ranked
            .into_iter()
            .map(|(u, s)| (self.unit_ids[u as usize].clone(), s))
            .collect()
    }

    /// JSON header (length-prefixed) followed by binary postings.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&IndexHeader {
            n: self.len(),
            k1: self.params.k1,
            b: self.params.b,
            avg_len: self.avg_len,
            terms: self.postings.len(),
        })?;
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        // Exact bit pattern; the JSON header is informational.
        w.write_f64::<LittleEndian>(self.avg_len)?;
        let put_str = |w: &mut dyn Write, s: &str| -> Result<()> {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_all(s.as_bytes())?;
            Ok(())
        };
        for (id, len) in self.unit_ids.iter().zip(&self.lengths) {
            put_str(&mut w, id)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        for (term, plist) in &self.postings {
            put_str(&mut w, term)?;
            w.write_u32::<LittleEndian>(plist.len() as u32)?;
            for &(u, tf) in plist {
                w.write_u32::<LittleEndian>(u)?;
                w.write_u32::<LittleEndian>(tf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::parse("bm25 index", "bad magic"));
        }
        let hlen = r.read_u32::<LittleEndian>()? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: IndexHeader = serde_json::from_slice(&hbuf)?;
        let avg_len = r.read_f64::<LittleEndian>()?;
        let get_str = |r: &mut dyn Read| -> Result<String> {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::parse("bm25 index", e.to_string()))
        };
        let mut unit_ids = Vec::with_capacity(header.n);
        let mut lengths = Vec::with_capacity(header.n);
        for _ in 0..header.n {
            unit_ids.push(get_str(&mut r)?);
            lengths.push(r.read_u32::<LittleEndian>()?);
        }
        let mut postings = BTreeMap::new();
        for _ in 0..header.terms {
            let term = get_str(&mut r)?;
            let n = r.read_u32::<LittleEndian>()? as usize;
            let plist = (0..n)
                .map(|_| Ok((r.read_u32::<LittleEndian>()?, r.read_u32::<LittleEndian>()?)))
                .collect::<Result<Vec<_>>>()?;
            postings.insert(term, plist);
        }
        Ok(Self {
            unit_ids,
            lengths,
            avg_len,
            params: Bm25Params {
                k1: header.k1,
                b: header.b,
            },
            postings,
        })
    }

    /// Distinct terms of the index, for diagnostics.
    pub fn vocabulary(&self) -> HashSet<&str> {
        self.postings.keys().map(String::as_str).collect()
    }
}
