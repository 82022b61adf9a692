//! Per-query hybrid retrieval runs and their evaluation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angles::{build_axes, AxesConfig, SemanticAxes};
use crate::corpus::{tokenize, Document, Query, TokenSeq};
use crate::embed::{
    segment_document, AngleSourceKind, Channel, Embedding, EncodedUnit, Encoder, PipelineConfig,
    SegmentedDoc,
};
use crate::error::{Error, Result};
use crate::evalkit::{retrieval_metrics, MetricsReport, QueryJudgment, DEFAULT_K_LIST};
use crate::fusion::{
    alpha_oracle, candidate_union, ce_rerank, dual_channel, interpolate, AlphaMode, Candidate,
    CandidateSet, CeReason, CeScores, DualMode, FusionConfig, OracleMetric, OracleReport, Ranked,
};
use crate::lexindex::{Bm25Index, Bm25Params};
use crate::vecindex::{DocAggregation, VecIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSummary {
    pub applied: bool,
    pub reason: CeReason,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    pub alpha: f64,
    pub ranking: Ranked,
}

/// One line of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub qid: String,
    pub bm25: Ranked,
    pub embed: Ranked,
    pub candidates: Vec<Candidate>,
    pub alpha: AlphaMode,
    pub alpha_used: f64,
    pub fused: Ranked,
    #[serde(default)]
    pub ce: Option<CeSummary>,
    /// Fused ranking after any cross-encoder stage.
    pub ranking: Ranked,
    #[serde(default)]
    pub sweep: Vec<SweepBlock>,
}

impl RunRecord {
    pub fn candidate_set(&self) -> CandidateSet {
        CandidateSet {
            qid: self.qid.clone(),
            entries: self.candidates.clone(),
        }
    }
}

/// Indexes consulted by a run. The vector index may hold sub-chunks, in
/// which case `doc_of` lifts their scores to documents.
pub struct Indexes<'a> {
    pub bm25: &'a Bm25Index,
    pub current: &'a VecIndex<f64>,
    pub amp: Option<&'a VecIndex<f64>>,
    pub doc_of: Option<&'a HashMap<String, String>>,
    pub aggregation: DocAggregation,
}

/// Query-side inputs: tokens for BM25 and one embedding per channel.
pub struct QueryInput {
    pub qid: String,
    pub tokens: TokenSeq,
    pub current: Embedding<f64>,
    pub amp: Option<Embedding<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub fusion: FusionConfig,
    pub sweep: bool,
}

fn dense_ranking(
    idx: &Indexes,
    index: &VecIndex<f64>,
    q: &Embedding<f64>,
    top_k: usize,
) -> Result<Ranked> {
    let mut r = match idx.doc_of {
        Some(map) => index.doc_scores(q, map, idx.aggregation)?,
        None => index.search(q, usize::MAX)?,
    };
    r.truncate(top_k);
    Ok(r)
}

pub fn run_query(
    idx: &Indexes,
    q: &QueryInput,
    opts: &RunOptions,
    ce: Option<&CeScores>,
) -> Result<RunRecord> {
    let cfg = &opts.fusion;
    let bm25 = idx.bm25.score(&q.tokens, cfg.top_k);
    let current = dense_ranking(idx, idx.current, &q.current, cfg.top_k)?;
    let embed = match (cfg.dual, idx.amp, &q.amp) {
        (DualMode::Off, _, _) => current,
        (mode, Some(amp_idx), Some(amp_q)) => {
            let amp = dense_ranking(idx, amp_idx, amp_q, cfg.top_k)?;
            let mut r = dual_channel(&current, &amp, mode, cfg.rrf_k)?;
            r.truncate(cfg.top_k);
            r
        }
        _ => {
            return Err(Error::InvalidConfig(
                "dual-channel fusion needs an amp index and amp query".into(),
            ))
        }
    };
    let cands = candidate_union(&q.qid, &bm25, &embed)?;
    let (alpha_used, fused) = cfg.fuse(&cands)?;
    let (ranking, ce_summary) = match ce {
        Some(scores) => {
            let o = ce_rerank(&q.qid, &fused, scores, cfg.top_k, cfg.ce_std_floor);
            (
                o.ranking,
                Some(CeSummary {
                    applied: o.applied,
                    reason: o.reason,
                    spearman: o.spearman,
                }),
            )
        }
        None => (fused.clone(), None),
    };
    let sweep = if opts.sweep {
        cfg.alpha_grid
            .iter()
            .map(|&a| {
                Ok(SweepBlock {
                    alpha: a,
                    ranking: interpolate(&cands, a)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(RunRecord {
        qid: q.qid.clone(),
        bm25,
        embed,
        candidates: cands.entries,
        alpha: cfg.alpha,
        alpha_used,
        fused,
        ce: ce_summary,
        ranking,
        sweep,
    })
}

/// Runs every query in parallel; records come back in input order.
pub fn run_queries(
    idx: &Indexes,
    queries: &[QueryInput],
    opts: &RunOptions,
    ce: Option<&CeScores>,
) -> Result<Vec<RunRecord>> {
    opts.fusion.validate()?;
    queries
        .par_iter()
        .map(|q| run_query(idx, q, opts, ce))
        .collect()
}

fn ids(r: &Ranked) -> Vec<String> {
    r.iter().map(|(id, _)| id.clone()).collect()
}

/// Metrics for each method recorded in the run: `bm25`, `embed`, `hybrid`,
/// plus `hybrid+ce` when a cross-encoder stage ran.
pub fn evaluate_run(
    records: &[RunRecord],
    judgments: &[QueryJudgment],
) -> Result<Vec<MetricsReport>> {
    type Extract = Box<dyn Fn(&RunRecord) -> Vec<String>>;
    let mut methods: Vec<(&str, Extract)> = vec![
        ("bm25", Box::new(|r| ids(&r.bm25))),
        ("embed", Box::new(|r| ids(&r.embed))),
        ("hybrid", Box::new(|r| ids(&r.fused))),
    ];
    if records.iter().any(|r| r.ce.is_some()) {
        methods.push(("hybrid+ce", Box::new(|r| ids(&r.ranking))));
    }
    methods
        .iter()
        .map(|(name, f)| {
            let rankings: HashMap<String, Vec<String>> =
                records.iter().map(|r| (r.qid.clone(), f(r))).collect();
            retrieval_metrics(name, &rankings, judgments, &DEFAULT_K_LIST)
        })
        .collect()
}

/// α oracle over the candidate sets stored in a run.
pub fn run_oracle(
    records: &[RunRecord],
    judgments: &[QueryJudgment],
    grid: &[f64],
    metric: OracleMetric,
) -> Result<OracleReport> {
    let by_qid: HashMap<&str, &RunRecord> = records.iter().map(|r| (r.qid.as_str(), r)).collect();
    let sets = judgments
        .iter()
        .map(|j| {
            let r = by_qid
                .get(j.qid.as_str())
                .ok_or_else(|| Error::MissingRanking(j.qid.clone()))?;
            Ok((r.candidate_set(), j.relevant.as_str()))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&CandidateSet, &str)> = sets.iter().map(|(c, r)| (c, *r)).collect();
    alpha_oracle(&refs, grid, metric)
}

pub fn judgments(queries: &[Query]) -> Vec<QueryJudgment> {
    queries
        .iter()
        .map(|q| QueryJudgment {
            qid: q.qid.clone(),
            relevant: q.relevant_doc.clone(),
        })
        .collect()
}

/// Everything needed to run document retrieval over one corpus.
pub struct Workbench {
    pub config: PipelineConfig,
    pub docs: Vec<SegmentedDoc>,
    pub axes: Option<SemanticAxes>,
    pub units: Vec<EncodedUnit<f64>>,
    pub amp_units: Option<Vec<EncodedUnit<f64>>>,
    pub bm25: Bm25Index,
    pub current: VecIndex<f64>,
    pub amp: Option<VecIndex<f64>>,
    pub doc_of: HashMap<String, String>,
}

impl Workbench {
    /// Segments, builds axes when the config asks for eig angles, embeds
    /// every unit and builds both indexes. `with_amp` also embeds the amp
    /// channel.
    pub fn build(
        documents: &[Document],
        config: PipelineConfig,
        axes_cfg: &AxesConfig,
        with_amp: bool,
    ) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let docs = documents
            .iter()
            .map(|d| segment_document(d, &config.segmentation))
            .collect::<Result<Vec<_>>>()?;
        let axes = match config.angle_source {
            AngleSourceKind::Eig => Some(build_axes(docs.iter().map(|d| &d.tokens), axes_cfg)?),
            AngleSourceKind::Lexical => None,
        };
        let cur_cfg = PipelineConfig {
            channel: Channel::Current,
            ..config.clone()
        };
        let units = Encoder::<f64>::new(cur_cfg, axes.as_ref())?.embed_corpus(&docs)?;
        let amp_units = if with_amp {
            let amp_cfg = PipelineConfig {
                channel: Channel::Amp,
                ..config.clone()
            };
            Some(Encoder::<f64>::new(amp_cfg, axes.as_ref())?.embed_corpus(&docs)?)
        } else {
            None
        };
        let bm25 = Bm25Index::build(
            docs.iter().map(|d| (d.doc_id.as_str(), &d.tokens)),
            Bm25Params::default(),
        )?;
        let fp = Some(crate::embed::fingerprint(&config));
        let embs: Vec<Embedding<f64>> = units.iter().map(|u| u.embedding.clone()).collect();
        let current = VecIndex::build(&embs, fp.clone())?;
        let amp = match &amp_units {
            Some(u) => Some(VecIndex::build(
                &u.iter().map(|x| x.embedding.clone()).collect::<Vec<_>>(),
                fp,
            )?),
            None => None,
        };
        let doc_of = units
            .iter()
            .map(|u| (u.embedding.owner_id.clone(), u.doc_id.clone()))
            .collect();
        Ok(Self {
            config,
            docs,
            axes,
            units,
            amp_units,
            bm25,
            current,
            amp,
            doc_of,
        })
    }

    pub fn encoder(&self, channel: Channel) -> Result<Encoder<'_, f64>> {
        Encoder::new(
            PipelineConfig {
                channel,
                ..self.config.clone()
            },
            self.axes.as_ref(),
        )
    }

    pub fn indexes(&self) -> Indexes<'_> {
        Indexes {
            bm25: &self.bm25,
            current: &self.current,
            amp: self.amp.as_ref(),
            doc_of: Some(&self.doc_of),
            aggregation: DocAggregation::Max,
        }
    }

    pub fn query_inputs(&self, queries: &[Query]) -> Result<Vec<QueryInput>> {
        let cur = self.encoder(Channel::Current)?;
        let amp = if self.amp.is_some() {
            Some(self.encoder(Channel::Amp)?)
        } else {
            None
        };
        queries
            .par_iter()
            .map(|q| {
                Ok(QueryInput {
                    qid: q.qid.clone(),
                    tokens: tokenize(&q.text)?,
                    current: cur.embed_text(&q.qid, &q.text)?,
                    amp: amp
                        .as_ref()
                        .map(|e| e.embed_text(&q.qid, &q.text))
                        .transpose()?,
                })
            })
            .collect()
    }

    pub fn run(
        &self,
        queries: &[Query],
        opts: &RunOptions,
        ce: Option<&CeScores>,
    ) -> Result<Vec<RunRecord>> {
        run_queries(&self.indexes(), &self.query_inputs(queries)?, opts, ce)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_run_has_one_record_per_query() {
        let fx = fixtures::corpus(fixtures::FIXTURE_SEED);
        let cfg = PipelineConfig {
            angle_source: AngleSourceKind::Lexical,
            ..Default::default()
        };
        let wb = Workbench::build(&fx.documents[..3], cfg, &AxesConfig::default(), false).unwrap();
        let queries = &fx.queries[..6];
        let opts = RunOptions {
            sweep: true,
            ..Default::default()
        };
        let run = wb.run(queries, &opts, None).unwrap();
        assert_eq!(run.len(), 6);
        assert!(run
            .iter()
            .all(|r| r.sweep.len() == opts.fusion.alpha_grid.len()));
        let reports = evaluate_run(&run, &judgments(queries)).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(r.mrr10, r.map10);
        }
    }
}
