//! Window features to fixed 1024-dimensional embeddings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::angles::{eig_angles, lexical_angles, AngleSource, SemanticAxes};
use crate::corpus::{self, Document, SegmentationConfig, SubChunk, TokenSeq, Window};
use crate::error::{Error, Result};
use crate::qsim::{self, CircuitConfig, ObservableSet, QksEpisode};
use crate::scalar::{normalize_in_place, Real};

pub const EMBEDDING_DIM: usize = 1024;

/// Encoder construction tag folded into every fingerprint. Bump when the
/// circuit, readout or aggregation semantics change.
pub const ENCODER_TAG: &str =
    "hea:ry-rz/harmonic-layer-scale/cnot-ring;obs:z-x-y-zz-xx-yy;resample:even-split-mean;amp:reencode-features";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Current,
    Amp,
    Distilled,
    Teacher,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Current => "current",
            Channel::Amp => "amp",
            Channel::Distilled => "distilled",
            Channel::Teacher => "teacher",
        }
    }

    pub(crate) fn to_u8(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_u8(b: u8) -> Option<Self> {
        [
            Channel::Current,
            Channel::Amp,
            Channel::Distilled,
            Channel::Teacher,
        ]
        .get(b as usize)
        .copied()
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Channel::Current),
            "amp" => Ok(Channel::Amp),
            "distilled" => Ok(Channel::Distilled),
            "teacher" => Ok(Channel::Teacher),
            other => Err(Error::parse(
                "channel",
                format!("unknown channel '{other}'"),
            )),
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AngleSourceKind {
    #[default]
    Eig,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub circuit: CircuitConfig,
    pub angle_source: AngleSourceKind,
    /// Resampled window slots (W).
    pub slots: usize,
    /// Features per window (F).
    pub features: usize,
    /// 0 disables the random-feature expansion.
    pub qks_episodes: usize,
    pub qks_seed: u64,
    pub multiscale: bool,
    pub channel: Channel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationConfig::default(),
            circuit: CircuitConfig::default(),
            angle_source: AngleSourceKind::default(),
            slots: 16,
            features: 64,
            qks_episodes: 0,
            qks_seed: 0,
            multiscale: false,
            channel: Channel::Current,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.circuit.validate()?;
        if self.slots * self.features != EMBEDDING_DIM {
            return Err(Error::InvalidConfig(format!(
                "slots x features must equal {EMBEDDING_DIM}, got {} x {}",
                self.slots, self.features
            )));
        }
        if !matches!(self.channel, Channel::Current | Channel::Amp) {
            return Err(Error::InvalidConfig(
                "the encoder produces only current or amp embeddings".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub digest: String,
    pub canonical_config: String,
}

/// Recursively sorted, compact JSON.
pub fn canonical_json(v: &serde_json::Value) -> String {
    fn sort(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let sorted: BTreeMap<&String, serde_json::Value> =
                    m.iter().map(|(k, v)| (k, sort(v))).collect();
                serde_json::Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(v)).expect("json values serialize")
}

pub fn fingerprint_value(v: &serde_json::Value) -> Fingerprint {
    let canonical_config = canonical_json(v);
    let digest = hex::encode(Sha256::digest(canonical_config.as_bytes()));
    Fingerprint {
        digest,
        canonical_config,
    }
}

/// SHA-256 over the canonical JSON of the configuration and encoder tag.
pub fn fingerprint(cfg: &PipelineConfig) -> Fingerprint {
    fingerprint_value(&serde_json::json!({ "encoder": ENCODER_TAG, "pipeline": cfg }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    pub owner_id: String,
    pub channel: Channel,
    pub vec: Vec<T>,
}

impl<T: Real> Embedding<T> {
    pub fn dot(&self, other: &Self) -> T {
        crate::scalar::dot(&self.vec, &other.vec)
    }

    pub fn norm(&self) -> T {
        crate::scalar::l2_norm(&self.vec)
    }
}

/// Even-split resampling of `K` window features onto `slots` cells.
///
/// Cell `j` averages windows `[floor(jK/W), floor((j+1)K/W))`. When `K < W`
/// some cells are empty and copy the nearest preceding non-empty cell (or the
/// nearest following one at the front).
pub fn resample_windows<T: Real>(features: &[Vec<T>], slots: usize) -> Result<Vec<Vec<T>>> {
    let k = features.len();
    if k == 0 {
        return Err(Error::NoWindows);
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut cells: Vec<Option<Vec<T>>> = (0..slots)
        .map(|j| {
            let (lo, hi) = (j * k / slots, (j + 1) * k / slots);
            (hi > lo).then(|| {
                let n = T::from_usize(hi - lo).unwrap();
                (0..dim)
                    .map(|c| features[lo..hi].iter().map(|f| f[c]).sum::<T>() / n)
                    .collect()
            })
        })
        .collect();
    let mut last: Option<Vec<T>> = None;
    for cell in cells.iter_mut() {
        match cell {
            Some(v) => last = Some(v.clone()),
            None => *cell = last.clone(),
        }
    }
    let first = cells
        .iter()
        .flatten()
        .next()
        .cloned()
        .expect("at least one non-empty cell");
    Ok(cells
        .into_iter()
        .map(|c| c.unwrap_or_else(|| first.clone()))
        .collect())
}

/// Concatenates slots without normalizing.
pub fn concat_slots<T: Real>(slots: &[Vec<T>]) -> Vec<T> {
    slots.iter().flatten().copied().collect()
}

/// Concatenation followed by L2 normalization.
pub fn assemble<T: Real>(
    slots: &[Vec<T>],
    owner_id: &str,
    channel: Channel,
) -> Result<Embedding<T>> {
    let mut vec = concat_slots(slots);
    normalize_in_place(&mut vec).ok_or(Error::AllZeroEmbedding)?;
    Ok(Embedding {
        owner_id: owner_id.to_string(),
        channel,
        vec,
    })
}

/// Mean of unnormalized view vectors, then L2 normalization.
pub fn multiscale_fuse<T: Real>(
    views: &[Vec<T>],
    owner_id: &str,
    channel: Channel,
) -> Result<Embedding<T>> {
    let first = views.first().ok_or(Error::NoWindows)?;
    let n = T::from_usize(views.len()).unwrap();
    let mut vec: Vec<T> = (0..first.len())
        .map(|c| views.iter().map(|v| v[c]).sum::<T>() / n)
        .collect();
    normalize_in_place(&mut vec).ok_or(Error::AllZeroEmbedding)?;
    Ok(Embedding {
        owner_id: owner_id.to_string(),
        channel,
        vec,
    })
}

/// Normalized mean of sub-chunk embeddings.
pub fn doc_embedding<T: Real>(doc_id: &str, subs: &[&Embedding<T>]) -> Result<Embedding<T>> {
    let views: Vec<Vec<T>> = subs.iter().map(|e| e.vec.clone()).collect();
    let channel = subs.first().map(|e| e.channel).ok_or(Error::NoWindows)?;
    multiscale_fuse(&views, doc_id, channel)
}

/// A document with its token sequence and sub-chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedDoc {
    pub doc_id: String,
    pub lang: String,
    pub tokens: TokenSeq,
    pub subchunks: Vec<SubChunk>,
}

pub fn segment_document(doc: &Document, cfg: &SegmentationConfig) -> Result<SegmentedDoc> {
    cfg.validate()?;
    let tokens = corpus::tokenize(&doc.text)?;
    let subchunks = corpus::segment_tokens(&doc.doc_id, &tokens, cfg);
    Ok(SegmentedDoc {
        doc_id: doc.doc_id.clone(),
        lang: doc.lang.clone(),
        tokens,
        subchunks,
    })
}

/// Unnormalized encoding of one sub-chunk plus the angle provenance of each
/// window.
#[derive(Debug, Clone, PartialEq)]
pub struct SubChunkEncoding<T> {
    pub raw: Vec<T>,
    pub angle_sources: Vec<AngleSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUnit<T> {
    pub embedding: Embedding<T>,
    pub doc_id: String,
    pub angle_sources: Vec<AngleSource>,
}

pub struct Encoder<'a, T> {
    cfg: PipelineConfig,
    observables: ObservableSet,
    axes: Option<&'a SemanticAxes>,
    episodes: Vec<QksEpisode<T>>,
}

impl<'a, T: Real> Encoder<'a, T> {
    pub fn new(cfg: PipelineConfig, axes: Option<&'a SemanticAxes>) -> Result<Self> {
        cfg.validate()?;
        if cfg.angle_source == AngleSourceKind::Eig {
            match axes {
                None => return Err(Error::InvalidConfig("eig angles need semantic axes".into())),
                Some(a) if a.d_max() < cfg.circuit.n_qubits => {
                    return Err(Error::InvalidConfig(format!(
                        "axes provide {} dimensions, circuit needs {}",
                        a.d_max(),
                        cfg.circuit.n_qubits
                    )))
                }
                _ => {}
            }
        }
        let observables = qsim::default_observables(cfg.circuit.n_qubits, cfg.features)?;
        let episodes = qsim::qks_episodes(cfg.circuit.n_qubits, cfg.qks_episodes, cfg.qks_seed);
        Ok(Self {
            cfg,
            observables,
            axes,
            episodes,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(&self.cfg)
    }

    fn stream_seed(&self, sub_id: &str, window: usize, episode: usize, stage: u8) -> u64 {
        let key = format!("{sub_id}\u{0}{window}\u{0}{episode}\u{0}{stage}");
        xxh3_64_with_seed(key.as_bytes(), self.cfg.circuit.seed)
    }

    pub fn angles(&self, window: &Window) -> Result<(Vec<T>, AngleSource)> {
        let d = self.cfg.circuit.n_qubits;
        let av = match (self.cfg.angle_source, self.axes) {
            (AngleSourceKind::Eig, Some(axes)) => eig_angles(window.tokens.iter(), axes, d)?,
            _ => lexical_angles(window.tokens.iter(), d),
        };
        Ok((av.theta.into_iter().map(T::lit).collect(), av.source))
    }

    /// Feature vector of one window, averaged over random-feature episodes.
    pub fn encode_window(&self, window: &Window) -> Result<(Vec<T>, AngleSource)> {
        let (theta, source) = self.angles(window)?;
        let thetas: Vec<Vec<T>> = if self.episodes.is_empty() {
            vec![theta]
        } else {
            self.episodes.iter().map(|e| e.apply(&theta)).collect()
        };
        let shots = self.cfg.circuit.shots;
        let mut acc = vec![T::zero(); self.cfg.features];
        for (ep, th) in thetas.iter().enumerate() {
            let psi = qsim::ansatz_state(th, &self.cfg.circuit)?;
            let seed = self.stream_seed(&window.sub_id, window.window_index, ep, 0);
            let mut f = qsim::expectations(&psi, &self.observables, shots, seed);
            if self.cfg.channel == Channel::Amp {
                let amp = qsim::amplitude_state(&f, self.cfg.circuit.n_qubits)?;
                let seed = self.stream_seed(&window.sub_id, window.window_index, ep, 1);
                f = qsim::expectations(&amp, &self.observables, shots, seed);
            }
            acc.iter_mut().zip(&f).for_each(|(a, x)| *a = *a + *x);
        }
        let n = T::from_usize(thetas.len()).unwrap();
        acc.iter_mut().for_each(|a| *a = *a / n);
        Ok((acc, source))
    }

    pub fn encode_subchunk(&self, sub: &SubChunk) -> Result<SubChunkEncoding<T>> {
        let windows = corpus::windows_of(sub, self.cfg.segmentation.window_tokens);
        let mut feats = Vec::with_capacity(windows.len());
        let mut angle_sources = Vec::with_capacity(windows.len());
        for w in &windows {
            let (f, s) = self.encode_window(w)?;
            feats.push(f);
            angle_sources.push(s);
        }
        let slots = resample_windows(&feats, self.cfg.slots)?;
        Ok(SubChunkEncoding {
            raw: concat_slots(&slots),
            angle_sources,
        })
    }

    pub fn embed_subchunk(&self, sub: &SubChunk) -> Result<Embedding<T>> {
        let enc = self.encode_subchunk(sub)?;
        let mut vec = enc.raw;
        normalize_in_place(&mut vec).ok_or(Error::AllZeroEmbedding)?;
        Ok(Embedding {
            owner_id: sub.sub_id.clone(),
            channel: self.cfg.channel,
            vec,
        })
    }

    /// Embeds free text (a query or a sentence) as a single sub-chunk.
    pub fn embed_text(&self, id: &str, text: &str) -> Result<Embedding<T>> {
        let unit = corpus::text_unit(id, text, self.cfg.segmentation.sub_tokens)?;
        self.embed_subchunk(&unit)
    }

    /// Shifted views of a base sub-chunk: itself, its phase-shifted twin and
    /// the dense-stride spans starting inside its stride cell.
    pub fn multiscale_views(&self, doc: &SegmentedDoc, sub: &SubChunk) -> Vec<SubChunk> {
        let seg = &self.cfg.segmentation;
        let chunk = doc.tokens.slice(sub.chunk_span.0, sub.chunk_span.1);
        let base = sub.token_span.0;
        let mut views = vec![sub.clone()];
        let mut push = |tag: String, (s, e): (usize, usize)| {
            views.push(SubChunk {
                sub_id: format!("{}@{tag}", sub.sub_id),
                tokens: chunk.slice(s, e),
                token_span: (s, e),
                ..sub.clone()
            });
        };
        if seg.two_phase_shift > 0 {
            if let Some(span) =
                corpus::shifted_span(chunk.len(), base, seg.sub_tokens, seg.two_phase_shift)
            {
                push(format!("p{}", seg.two_phase_shift), span);
            }
        }
        if seg.dense_stride > 0 {
            for t in (0..chunk.len()).step_by(seg.dense_stride) {
                if t > base && t < base + seg.sub_stride {
                    if let Some(span) = corpus::shifted_span(chunk.len(), t, seg.sub_tokens, 0) {
                        push(format!("d{t}"), span);
                    }
                }
            }
        }
        views
    }

    /// Encoding units of a document. With multiscale on, each base sub-chunk
    /// is fused with its views; otherwise every sub-chunk (both phases) is
    /// its own unit.
    pub fn embed_document(&self, doc: &SegmentedDoc) -> Result<Vec<EncodedUnit<T>>> {
        self.units(doc)
            .into_par_iter()
            .map(|sub| self.embed_unit(doc, sub))
            .collect()
    }

    fn units<'d>(&self, doc: &'d SegmentedDoc) -> Vec<&'d SubChunk> {
        doc.subchunks
            .iter()
            .filter(|s| !self.cfg.multiscale || s.phase_shift == 0)
            .collect()
    }

    fn embed_unit(&self, doc: &SegmentedDoc, sub: &SubChunk) -> Result<EncodedUnit<T>> {
        let channel = self.cfg.channel;
        if !self.cfg.multiscale {
            let enc = self.encode_subchunk(sub)?;
            let mut vec = enc.raw;
            normalize_in_place(&mut vec).ok_or(Error::AllZeroEmbedding)?;
            return Ok(EncodedUnit {
                embedding: Embedding {
                    owner_id: sub.sub_id.clone(),
                    channel,
                    vec,
                },
                doc_id: doc.doc_id.clone(),
                angle_sources: enc.angle_sources,
            });
        }
        let mut raws = Vec::new();
        let mut angle_sources = Vec::new();
        for view in self.multiscale_views(doc, sub) {
            let enc = self.encode_subchunk(&view)?;
            raws.push(enc.raw);
            angle_sources.extend(enc.angle_sources);
        }
        Ok(EncodedUnit {
            embedding: multiscale_fuse(&raws, &sub.sub_id, channel)?,
            doc_id: doc.doc_id.clone(),
            angle_sources,
        })
    }

    /// All units of a corpus, in document then sub-chunk order.
    pub fn embed_corpus(&self, docs: &[SegmentedDoc]) -> Result<Vec<EncodedUnit<T>>> {
        let work: Vec<(&SegmentedDoc, &SubChunk)> = docs
            .iter()
            .flat_map(|d| self.units(d).into_iter().map(move |s| (d, s)))
            .collect();
        work.into_par_iter()
            .map(|(d, s)| self.embed_unit(d, s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::text_unit;

    fn lexical_cfg() -> PipelineConfig {
        PipelineConfig {
            angle_source: AngleSourceKind::Lexical,
            ..Default::default()
        }
    }

    #[test]
    fn resample_identity_pairs_and_broadcast() {
        let f: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64, -(i as f64)]).collect();
        assert_eq!(resample_windows(&f, 16).unwrap(), f);

        let f: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64]).collect();
        let r = resample_windows(&f, 16).unwrap();
        for (j, slot) in r.iter().enumerate() {
            assert_eq!(slot[0], (2 * j) as f64 + 0.5);
        }

        let r = resample_windows(&[vec![1.0f64, 2.0]], 16).unwrap();
        assert!(r.iter().all(|s| s == &vec![1.0, 2.0]));

        assert!(matches!(
            resample_windows::<f64>(&[], 16),
            Err(Error::NoWindows)
        ));
    }

    #[test]
    fn resample_short_sequences_fill_every_slot() {
        let f: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let r = resample_windows(&f, 16).unwrap();
        assert_eq!(r.len(), 16);
        // Cells 0..3 precede the first populated cell and borrow it.
        assert_eq!(r[0][0], 0.0);
        assert_eq!(r[15][0], 4.0);
        let values: Vec<f64> = r.iter().map(|s| s[0]).collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn assemble_normalizes() {
        let mut slots = vec![vec![0.0f64; 64]; 16];
        slots.iter_mut().for_each(|s| s[0] = 1.0);
        let e = assemble(&slots, "x", Channel::Current).unwrap();
        assert_eq!(e.vec.len(), 1024);
        assert!((e.norm() - 1.0).abs() < 1e-12);
        assert!((e.vec[64] - 0.25).abs() < 1e-15);
        assert!(matches!(
            assemble(&vec![vec![0.0f64; 64]; 16], "x", Channel::Current),
            Err(Error::AllZeroEmbedding)
        ));
    }

    #[test]
    fn multiscale_fuse_cases() {
        let a = vec![1.0f64, 0.0];
        let b = vec![0.0f64, 1.0];
        let one = multiscale_fuse(std::slice::from_ref(&a), "x", Channel::Current).unwrap();
        assert_eq!(one.vec, a);
        let twice = multiscale_fuse(&[a.clone(), a.clone()], "x", Channel::Current).unwrap();
        assert_eq!(twice.vec, a);
        let mixed = multiscale_fuse(&[a.clone(), b], "x", Channel::Current).unwrap();
        assert!((mixed.vec[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_format_and_sensitivity() {
        let cfg = PipelineConfig::default();
        let fp = fingerprint(&cfg);
        assert_eq!(fp.digest.len(), 64);
        assert!(fp.digest.chars().all(|c| c.is_ascii_hexdigit()));
        let mut other = cfg.clone();
        other.circuit.shots = 2048;
        assert_ne!(fingerprint(&other).digest, fp.digest);
    }

    #[test]
    fn fingerprint_ignores_key_order() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"b": 1, "a": {"y": 2.5, "x": [1, 2]}}"#).unwrap();
        let b: serde_json::Value =
            serde_json::from_str(r#"{"a": {"x": [1, 2], "y": 2.5}, "b": 1}"#).unwrap();
        assert_eq!(fingerprint_value(&a), fingerprint_value(&b));
    }

    #[test]
    fn config_requires_axes_for_eig() {
        assert!(Encoder::<f64>::new(PipelineConfig::default(), None).is_err());
        let bad = PipelineConfig {
            slots: 8,
            ..lexical_cfg()
        };
        assert!(Encoder::<f64>::new(bad, None).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let enc = Encoder::<f64>::new(lexical_cfg(), None).unwrap();
        let text = "the quick brown fox jumps over the lazy dog again and again";
        let a = enc.embed_text("q", text).unwrap();
        let b = enc.embed_text("q", text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vec.len(), EMBEDDING_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_angle_windows_give_constant_embedding() {
        // Every window sees |0...0>: Z-type terms read 1, the rest 0. With
        // F = 64 on 12 qubits that is 12 singles + 12 ZZ pairs per slot.
        let cfg = PipelineConfig {
            angle_source: AngleSourceKind::Lexical,
            ..Default::default()
        };
        let enc = Encoder::<f64>::new(cfg, None).unwrap();
        let psi = qsim::ansatz_state(&[0.0f64; 12], &enc.cfg.circuit).unwrap();
        let f = qsim::expectations(&psi, &enc.observables, 0, 0);
        let slots = resample_windows(&vec![f; 3], 16).unwrap();
        let e = assemble(&slots, "z", Channel::Current).unwrap();
        let expect = 1.0 / (16.0f64 * 24.0).sqrt();
        for (i, x) in e.vec.iter().enumerate() {
            let k = i % 64;
            let z_type = k < 12 || (36..48).contains(&k);
            let want = if z_type { expect } else { 0.0 };
            assert!((x - want).abs() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn amp_channel_is_tagged_and_unit() {
        let cfg = PipelineConfig {
            channel: Channel::Amp,
            ..lexical_cfg()
        };
        let enc = Encoder::<f64>::new(cfg, None).unwrap();
        let e = enc.embed_text("s", "alpha beta gamma delta").unwrap();
        assert_eq!(e.channel, Channel::Amp);
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qks_episodes_change_features() {
        let base = Encoder::<f64>::new(lexical_cfg(), None).unwrap();
        let qks = Encoder::<f64>::new(
            PipelineConfig {
                qks_episodes: 4,
                ..lexical_cfg()
            },
            None,
        )
        .unwrap();
        let unit = text_unit("u", "one two three four five six", 256).unwrap();
        let a = base.embed_subchunk(&unit).unwrap();
        let b = qks.embed_subchunk(&unit).unwrap();
        assert_ne!(a.vec, b.vec);
        assert!((b.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_mode_is_seeded() {
        let mut cfg = lexical_cfg();
        cfg.circuit.shots = 256;
        cfg.circuit.seed = 7;
        let enc = Encoder::<f64>::new(cfg.clone(), None).unwrap();
        let a = enc.embed_text("s", "red green blue").unwrap();
        let b = enc.embed_text("s", "red green blue").unwrap();
        assert_eq!(a, b);
        cfg.circuit.seed = 8;
        let c = Encoder::<f64>::new(cfg, None)
            .unwrap()
            .embed_text("s", "red green blue")
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multiscale_views_cover_shift_and_dense() {
        let text = (0..600)
            .map(|i| format!("w{}", i % 97))
            .collect::<Vec<_>>()
            .join(" ");
        let doc = Document {
            doc_id: "d".into(),
            text,
            lang: "en".into(),
        };
        let mut cfg = lexical_cfg();
        cfg.multiscale = true;
        cfg.segmentation.two_phase_shift = 8;
        let seg = segment_document(&doc, &cfg.segmentation).unwrap();
        let enc = Encoder::<f64>::new(cfg, None).unwrap();
        let base = &seg.subchunks[0];
        let views = enc.multiscale_views(&seg, base);
        let starts: Vec<usize> = views.iter().map(|v| v.token_span.0).collect();
        // Base at 0, shifted at 8, dense start 128 falls inside the first
        // 179-token stride cell.
        assert_eq!(starts, [0, 8, 128]);
        let units = enc.embed_document(&seg).unwrap();
        assert!(units.iter().all(|u| !u.embedding.owner_id.contains('+')));
        assert!(units
            .iter()
            .all(|u| (u.embedding.norm() - 1.0).abs() < 1e-12));
    }
}
