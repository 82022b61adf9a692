//! Documents, tokenization and the chunk / sub-chunk / window hierarchy.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Trailing chunks and sub-chunks shorter than this fraction of the nominal
/// size are dropped (unless they are the only unit).
pub const MIN_TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
    pub relevant_doc: String,
}

/// Token strings with their byte spans in the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> TokenSeq {
        TokenSeq {
            tokens: self.tokens[start..end].to_vec(),
            offsets: self.offsets[start..end].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub chunk_tokens: usize,
    pub chunk_overlap: usize,
    pub sub_tokens: usize,
    pub sub_stride: usize,
    pub window_tokens: usize,
    pub dense_stride: usize,
    pub two_phase_shift: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 384,
            chunk_overlap: 64,
            sub_tokens: 256,
            sub_stride: 179,
            window_tokens: 16,
            dense_stride: 128,
            two_phase_shift: 0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.chunk_tokens == 0 || self.sub_tokens == 0 {
            return bad("chunk_tokens and sub_tokens must be positive");
        }
        if self.chunk_overlap >= self.chunk_tokens {
            return bad("chunk_overlap must be smaller than chunk_tokens");
        }
        if self.sub_stride == 0 || self.sub_stride > self.sub_tokens {
            return bad("sub_stride must be in 1..=sub_tokens");
        }
        if self.window_tokens == 0 {
            return bad("window_tokens must be positive");
        }
        Ok(())
    }
}

/// An encoding unit inside a logical chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubChunk {
    pub sub_id: String,
    pub doc_id: String,
    pub chunk_id: String,
    pub tokens: TokenSeq,
    /// `[start, end)` in chunk token indices.
    pub token_span: (usize, usize),
    /// `[start, end)` of the parent chunk in document token indices.
    pub chunk_span: (usize, usize),
    pub phase_shift: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub sub_id: String,
    pub window_index: usize,
    pub tokens: TokenSeq,
}

/// Lowercased Unicode words; punctuation and whitespace are dropped.
pub fn tokenize(text: &str) -> Result<TokenSeq> {
    let mut seq = TokenSeq::default();
    for (start, word) in text.unicode_word_indices() {
        seq.tokens.push(word.to_lowercase());
        seq.offsets.push((start, start + word.len()));
    }
    if seq.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(seq)
}

/// Unit start positions for a sequence of `len` tokens, before the tail rule.
pub fn unit_starts(len: usize, step: usize) -> Vec<usize> {
    (0..len).step_by(step.max(1)).collect()
}

/// Spans of units of nominal size `size` advancing by `step`, with the
/// partial-tail rule applied. The first unit is always kept.
fn tile(len: usize, size: usize, step: usize) -> Vec<(usize, usize)> {
    let min_tail = (MIN_TAIL_FRACTION * size as f64).ceil() as usize;
    let mut spans = Vec::new();
    for start in unit_starts(len, step) {
        let end = (start + size).min(len);
        if !spans.is_empty() && end - start < min_tail {
            continue;
        }
        spans.push((start, end));
    }
    spans
}

/// Chunk spans in document token indices.
pub fn chunk_spans(n_tokens: usize, cfg: &SegmentationConfig) -> Vec<(usize, usize)> {
    tile(
        n_tokens,
        cfg.chunk_tokens,
        cfg.chunk_tokens - cfg.chunk_overlap,
    )
}

/// Splits a document into logical chunks and sub-chunks.
///
/// When `two_phase_shift > 0`, every base sub-chunk whose shifted start still
/// falls inside the chunk gets a second-pass twin starting `two_phase_shift`
/// tokens later.
pub fn segment(doc: &Document, cfg: &SegmentationConfig) -> Result<Vec<SubChunk>> {
    cfg.validate()?;
    let tokens = tokenize(&doc.text)?;
    Ok(segment_tokens(&doc.doc_id, &tokens, cfg))
}

pub(crate) fn segment_tokens(
    doc_id: &str,
    tokens: &TokenSeq,
    cfg: &SegmentationConfig,
) -> Vec<SubChunk> {
    let mut out = Vec::new();
    for (ci, &(cs, ce)) in chunk_spans(tokens.len(), cfg).iter().enumerate() {
        let chunk_id = format!("{doc_id}#c{ci}");
        let chunk = tokens.slice(cs, ce);
        let base = tile(chunk.len(), cfg.sub_tokens, cfg.sub_stride);
        for (si, &(ss, se)) in base.iter().enumerate() {
            out.push(SubChunk {
                sub_id: format!("{chunk_id}.s{si}"),
                doc_id: doc_id.to_string(),
                chunk_id: chunk_id.clone(),
                tokens: chunk.slice(ss, se),
                token_span: (ss, se),
                chunk_span: (cs, ce),
                phase_shift: 0,
            });
        }
        if cfg.two_phase_shift > 0 {
            for (si, &(ss, _)) in base.iter().enumerate() {
                if let Some((ps, pe)) =
                    shifted_span(chunk.len(), ss, cfg.sub_tokens, cfg.two_phase_shift)
                {
                    out.push(SubChunk {
                        sub_id: format!("{chunk_id}.s{si}+{}", cfg.two_phase_shift),
                        doc_id: doc_id.to_string(),
                        chunk_id: chunk_id.clone(),
                        tokens: chunk.slice(ps, pe),
                        token_span: (ps, pe),
                        chunk_span: (cs, ce),
                        phase_shift: cfg.two_phase_shift,
                    });
                }
            }
        }
    }
    out
}

/// The second-pass span for a base sub-chunk starting at `start`, if it
/// survives the tail rule.
pub(crate) fn shifted_span(
    chunk_len: usize,
    start: usize,
    size: usize,
    shift: usize,
) -> Option<(usize, usize)> {
    let ps = start + shift;
    if ps >= chunk_len {
        return None;
    }
    let pe = (ps + size).min(chunk_len);
    let min_tail = (MIN_TAIL_FRACTION * size as f64).ceil() as usize;
    (pe - ps >= min_tail).then_some((ps, pe))
}

/// Contiguous, non-overlapping windows; the last one may be shorter.
pub fn windows_of(sub: &SubChunk, window_tokens: usize) -> Vec<Window> {
    let w = window_tokens.max(1);
    let n = sub.tokens.len();
    (0..n.div_ceil(w))
        .map(|k| Window {
            sub_id: sub.sub_id.clone(),
            window_index: k,
            tokens: sub.tokens.slice(k * w, ((k + 1) * w).min(n)),
        })
        .collect()
}

/// A standalone sub-chunk for free text such as a query or a sentence.
pub fn text_unit(id: &str, text: &str, max_tokens: usize) -> Result<SubChunk> {
    let tokens = tokenize(text)?;
    let end = tokens.len().min(max_tokens.max(1));
    Ok(SubChunk {
        sub_id: id.to_string(),
        doc_id: id.to_string(),
        chunk_id: id.to_string(),
        tokens: tokens.slice(0, end),
        token_span: (0, end),
        chunk_span: (0, end),
        phase_shift: 0,
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(reader: impl BufRead, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{what} line {}", i + 1), e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

/// Reads a JSON Lines corpus, enforcing unique ids and non-empty text.
pub fn read_documents(reader: impl BufRead) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(reader, "corpus")?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateId(d.doc_id.clone()));
        }
        if d.text.trim().is_empty() {
            return Err(Error::parse(format!("document {}", d.doc_id), "empty text"));
        }
    }
    Ok(docs)
}

pub fn read_queries(reader: impl BufRead) -> Result<Vec<Query>> {
    read_jsonl(reader, "queries")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_of(n: usize) -> Document {
        let text = (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        Document {
            doc_id: "d".into(),
            text,
            lang: "en".into(),
        }
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        let t = tokenize("La Corte di Cassazione.").unwrap();
        assert_eq!(t.tokens, ["la", "corte", "di", "cassazione"]);
    }

    #[test]
    fn tokenize_empty_is_error() {
        assert!(matches!(tokenize(""), Err(Error::EmptyText)));
        assert!(matches!(tokenize(" ,;. "), Err(Error::EmptyText)));
    }

    #[test]
    fn chunk_starts_follow_overlap_step() {
        let cfg = SegmentationConfig::default();
        assert_eq!(
            unit_starts(1000, cfg.chunk_tokens - cfg.chunk_overlap),
            [0, 320, 640, 960]
        );
        // The 40-token tail at 960 is below a quarter of 384 and is dropped.
        assert_eq!(chunk_spans(1000, &cfg), [(0, 384), (320, 704), (640, 1000)]);
        // A tail of at least 96 tokens survives.
        assert_eq!(chunk_spans(1056, &cfg).last(), Some(&(960, 1056)));
    }

    #[test]
    fn short_document_is_single_subchunk() {
        let subs = segment(&doc_of(100), &SegmentationConfig::default()).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].tokens.len(), 100);
        let tiny = segment(&doc_of(3), &SegmentationConfig::default()).unwrap();
        assert_eq!(tiny.len(), 1);
        assert_eq!(tiny[0].tokens.len(), 3);
    }

    #[test]
    fn two_phase_starts_are_shifted() {
        let cfg = SegmentationConfig {
            two_phase_shift: 8,
            ..Default::default()
        };
        let subs = segment(&doc_of(1000), &cfg).unwrap();
        for chunk in ["d#c0", "d#c1", "d#c2"] {
            let p1: Vec<_> = subs
                .iter()
                .filter(|s| s.chunk_id == chunk && s.phase_shift == 0)
                .collect();
            let p2: Vec<_> = subs
                .iter()
                .filter(|s| s.chunk_id == chunk && s.phase_shift == 8)
                .collect();
            assert!(!p2.is_empty());
            for b in &p2 {
                let base_id = b.sub_id.trim_end_matches("+8");
                let base = p1.iter().find(|s| s.sub_id == base_id).unwrap();
                assert_eq!(b.token_span.0, base.token_span.0 + 8);
            }
        }
    }

    #[test]
    fn window_counts() {
        let sub = |n| text_unit("s", &doc_of(n).text, usize::MAX).unwrap();
        let w = windows_of(&sub(256), 16);
        assert_eq!(w.len(), 16);
        assert!(w.iter().all(|w| w.tokens.len() == 16));
        let w = windows_of(&sub(250), 16);
        assert_eq!(w.len(), 16);
        assert_eq!(w.last().unwrap().tokens.len(), 10);
        let w = windows_of(&sub(5), 16);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].tokens.len(), 5);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SegmentationConfig {
            chunk_overlap: 384,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SegmentationConfig {
            sub_stride: 300,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn read_documents_rejects_duplicates_and_empty() {
        let dup =
            "{\"doc_id\":\"a\",\"text\":\"x\",\"lang\":\"en\"}\n{\"doc_id\":\"a\",\"text\":\"y\",\"lang\":\"en\"}\n";
        assert!(matches!(
            read_documents(dup.as_bytes()),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            read_documents("".as_bytes()),
            Err(Error::EmptyCorpus)
        ));
    }
}
