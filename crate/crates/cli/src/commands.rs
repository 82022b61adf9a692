use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use qemb_core::angles::{build_axes as build_semantic_axes, SemanticAxes};
use qemb_core::corpus::{read_documents, read_queries, tokenize};
use qemb_core::distill::{alignment_report, fit_linear, fit_mlp, paired, TeacherSet};
use qemb_core::embed::{
    fingerprint, fingerprint_value, segment_document, AngleSourceKind, Channel, Embedding, Encoder,
    PipelineConfig, SegmentedDoc,
};
use qemb_core::evalkit::{markdown_table, pairwise_report, read_pairs, PairRecord};
use qemb_core::fixtures;
use qemb_core::fusion::{AlphaMode, CeScores, FusionConfig, OracleMetric};
use qemb_core::lexindex::{Bm25Index, Bm25Params};
use qemb_core::qkernel::{encode_and_kernel, fit_pca, kernel_diagnostics};
use qemb_core::qsim::CircuitConfig;
use qemb_core::retrieval::{
    evaluate_run, judgments, run_oracle, run_queries, Indexes, QueryInput, RunOptions, RunRecord,
};
use qemb_core::store::{sidecar_path, EmbeddingStore};
use qemb_core::vecindex::{DocAggregation, VecIndex};
use qemb_core::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::config::FileConfig;
use crate::manifest::Recorder;
use crate::{
    BuildAxesArgs, DiagPairwiseArgs, DistillArgs, EmbedArgs, EncoderArgs, EvalArgs, FixturesArgs,
    HeadArg, IndexBm25Args, IndexVecArgs, IngestArgs, KernelArgs, SearchArgs,
};

fn reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{} line {}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn record_config(rec: &mut Recorder, cfg_path: Option<&Path>) -> Result<()> {
    if let Some(p) = cfg_path {
        rec.input(p)?;
    }
    Ok(())
}

fn print_summary(v: serde_json::Value) {
    println!("{v}");
}

fn load_axes(path: &Path) -> Result<SemanticAxes> {
    SemanticAxes::read_from(reader(path)?)
}

/// Effective pipeline after `--lexical` / `--channel` overrides, plus the
/// axes it needs.
fn encoder_setup(
    base: &PipelineConfig,
    args: &EncoderArgs,
) -> Result<(PipelineConfig, Option<SemanticAxes>)> {
    let mut cfg = base.clone();
    if args.lexical {
        cfg.angle_source = AngleSourceKind::Lexical;
    }
    if let Some(c) = args.channel {
        cfg.channel = c.into();
    }
    let axes = match (&args.axes, cfg.angle_source) {
        (Some(p), AngleSourceKind::Eig) => Some(load_axes(p)?),
        (None, AngleSourceKind::Eig) => {
            return Err(Error::InvalidConfig(
                "eig angles need --axes (or pass --lexical)".into(),
            ));
        }
        (_, AngleSourceKind::Lexical) => None,
    };
    Ok((cfg, axes))
}

pub fn fixtures(a: &FixturesArgs) -> Result<()> {
    let mut rec = Recorder::new("fixtures", &a.out)?;
    let fx = fixtures::corpus(a.seed);
    rec.write_jsonl("corpus.jsonl", &fx.documents)?;
    rec.write_jsonl("queries.jsonl", &fx.queries)?;
    let mut pairs = String::new();
    for p in &fx.pairs {
        pairs.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.sentence_a,
            p.sentence_b,
            p.score,
            regime_name(p)
        ));
    }
    rec.write_bytes("pairs.tsv", pairs.as_bytes())?;

    let teacher = fixtures::planted_teacher(&fx.pairs, qemb_core::embed::EMBEDDING_DIM);
    let mut ids: Vec<&String> = teacher.keys().collect();
    ids.sort();
    let records = ids
        .iter()
        .map(|id| Embedding {
            owner_id: (*id).clone(),
            channel: Channel::Teacher,
            vec: teacher[*id].clone(),
        })
        .collect();
    write_store_jsonl(
        &mut rec,
        "teacher_pairs.jsonl",
        EmbeddingStore::new(records, None),
    )?;

    let xs = fixtures::identity_pairs(a.identity_pairs, a.identity_dim, a.seed);
    let make = |channel| {
        let recs = xs
            .iter()
            .enumerate()
            .map(|(i, v)| Embedding {
                owner_id: format!("id{i:05}"),
                channel,
                vec: v.clone(),
            })
            .collect();
        EmbeddingStore::new(recs, None)
    };
    write_store_jsonl(&mut rec, "identity_student.jsonl", make(Channel::Current))?;
    write_store_jsonl(&mut rec, "identity_teacher.jsonl", make(Channel::Teacher))?;
    rec.fingerprint(
        &fingerprint_value(
            &json!({ "fixtures": a.seed, "identity": [a.identity_pairs, a.identity_dim] }),
        )
        .digest,
    );
    rec.finish()?;
    print_summary(json!({
        "documents": fx.documents.len(),
        "queries": fx.queries.len(),
        "pairs": fx.pairs.len(),
        "identity_pairs": a.identity_pairs,
    }));
    Ok(())
}

fn regime_name(p: &PairRecord) -> String {
    serde_json::to_value(p.regime)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn write_store_jsonl(rec: &mut Recorder, name: &str, store: EmbeddingStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(rec.output(name))?);
    store.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn ingest(a: &IngestArgs, cfg: &FileConfig, cfg_path: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("ingest", &a.out)?;
    rec.input(&a.corpus)?;
    record_config(&mut rec, cfg_path)?;
    let docs = read_documents(reader(&a.corpus)?)?;
    let seg = &cfg.pipeline.segmentation;
    let segmented = docs
        .par_iter()
        .map(|d| {
            segment_document(d, seg).map_err(|e| match e {
                Error::EmptyText => Error::parse(format!("document {}", d.doc_id), "no tokens"),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rec.write_jsonl("segmented.jsonl", &segmented)?;
    rec.fingerprint(&fingerprint_value(&json!({ "segmentation": seg })).digest);
    rec.finish()?;
    let subs: usize = segmented.iter().map(|d| d.subchunks.len()).sum();
    print_summary(json!({ "documents": segmented.len(), "subchunks": subs }));
    Ok(())
}

pub fn build_axes(a: &BuildAxesArgs, cfg: &FileConfig, cfg_path: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("build-axes", &a.out)?;
    rec.input(&a.segmented)?;
    record_config(&mut rec, cfg_path)?;
    let docs: Vec<SegmentedDoc> = read_jsonl(&a.segmented)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let axes = build_semantic_axes(docs.iter().map(|d| &d.tokens), &cfg.axes)?;
    let mut bin = Vec::new();
    axes.write_to(&mut bin)?;
    rec.write_bytes("axes.bin", &bin)?;
    rec.write_json("axes.json", &axes.to_json())?;
    rec.fingerprint(&fingerprint_value(&json!({ "axes": cfg.axes })).digest);
    rec.finish()?;
    print_summary(json!({ "vocab": axes.vocab_size(), "d_max": axes.d_max() }));
    Ok(())
}

pub fn embed(a: &EmbedArgs, cfg: &FileConfig, cfg_path: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("embed", &a.out)?;
    rec.input(&a.segmented)?;
    if let Some(p) = &a.encoder.axes {
        rec.input(p)?;
    }
    record_config(&mut rec, cfg_path)?;
    let (pcfg, axes) = encoder_setup(&cfg.pipeline, &a.encoder)?;
    let docs: Vec<SegmentedDoc> = read_jsonl(&a.segmented)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let encoder = Encoder::<f64>::new(pcfg.clone(), axes.as_ref())?;
    let units = encoder.embed_corpus(&docs)?;
    let fp = fingerprint(&pcfg);
    let doc_of: serde_json::Map<String, serde_json::Value> = units
        .iter()
        .map(|u| (u.embedding.owner_id.clone(), json!(u.doc_id)))
        .collect();
    let mut store = EmbeddingStore::new(
        units.iter().map(|u| u.embedding.clone()).collect(),
        Some(fp.clone()),
    );
    store.meta = json!({ "doc_of": doc_of });
    let path = rec.output("embeddings.bin");
    store.save(&path)?;
    rec.output("embeddings.bin.json");
    rec.write_jsonl(
        "units.jsonl",
        units
            .iter()
            .map(|u| json!({ "id": u.embedding.owner_id, "doc_id": u.doc_id, "angle_sources": u.angle_sources })),
    )?;
    rec.fingerprint(&fp.digest);
    rec.finish()?;
    print_summary(
        json!({ "units": units.len(), "channel": pcfg.channel, "fingerprint": fp.digest }),
    );
    Ok(())
}

pub fn index_bm25(a: &IndexBm25Args) -> Result<()> {
    let mut rec = Recorder::new("index-bm25", &a.out)?;
    rec.input(&a.segmented)?;
    let docs: Vec<SegmentedDoc> = read_jsonl(&a.segmented)?;
    let params = Bm25Params::default();
    let idx = Bm25Index::build(docs.iter().map(|d| (d.doc_id.as_str(), &d.tokens)), params)?;
    let mut bytes = Vec::new();
    idx.write_to(&mut bytes)?;
    rec.write_bytes("bm25.idx", &bytes)?;
    rec.fingerprint(
        &fingerprint_value(&json!({ "bm25": { "k1": params.k1, "b": params.b } })).digest,
    );
    rec.finish()?;
    print_summary(json!({ "units": idx.len(), "avg_len": idx.avg_len() }));
    Ok(())
}

pub fn index_vec(a: &IndexVecArgs) -> Result<()> {
    let mut rec = Recorder::new("index-vec", &a.out)?;
    rec.input(&a.embeddings)?;
    let side = sidecar_path(&a.embeddings);
    if side.exists() {
        rec.input(&side)?;
    }
    let store = EmbeddingStore::open(&a.embeddings)?;
    let idx = VecIndex::build(&store.records, store.fingerprint.clone())?;
    store.save(&rec.output("vectors.bin"))?;
    rec.output("vectors.bin.json");
    if let Some(fp) = &store.fingerprint {
        rec.fingerprint(&fp.digest);
    }
    rec.finish()?;
    print_summary(json!({ "units": idx.len(), "dim": idx.dim(), "channel": idx.channel() }));
    Ok(())
}

/// Pipeline config recorded in an index's fingerprint.
fn pipeline_of(store: &EmbeddingStore, path: &Path) -> Result<PipelineConfig> {
    let fp = store.fingerprint.as_ref().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "{} carries no config fingerprint; rebuild it with `embed`",
            path.display()
        ))
    })?;
    let v: serde_json::Value = serde_json::from_str(&fp.canonical_config)?;
    let cfg: PipelineConfig =
        serde_json::from_value(v.get("pipeline").cloned().unwrap_or_default())?;
    if fingerprint(&cfg).digest != fp.digest {
        return Err(Error::InvalidConfig(format!(
            "{} fingerprint does not match its config",
            path.display()
        )));
    }
    Ok(cfg)
}

fn doc_map(store: &EmbeddingStore) -> Option<HashMap<String, String>> {
    let m = store.meta.get("doc_of")?.as_object()?;
    Some(
        m.iter()
            .filter_map(|(k, v)| Some((k.clone(), v.as_str()?.to_string())))
            .collect(),
    )
}

pub fn search(a: &SearchArgs, cfg: &FileConfig, cfg_path: Option<&Path>) -> Result<()> {
    let mut fusion: FusionConfig = cfg.fusion.clone();
    if let Some(alpha) = a.alpha {
        fusion.alpha = AlphaMode::Fixed(alpha);
    }
    if a.dynamic {
        let (AlphaMode::Fixed(base) | AlphaMode::Dynamic(base)) = fusion.alpha;
        fusion.alpha = AlphaMode::Dynamic(base);
    }
    if let Some(d) = a.dual {
        fusion.dual = d.into();
    }
    if let Some(k) = a.top_k {
        fusion.top_k = k;
    }
    fusion.validate()?;

    let mut rec = Recorder::new("search", &a.out)?;
    for p in [
        Some(&a.queries),
        Some(&a.bm25),
        Some(&a.vectors),
        a.amp_vectors.as_ref(),
        a.axes.as_ref(),
        a.ce.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        rec.input(p)?;
    }
    record_config(&mut rec, cfg_path)?;

    let queries = read_queries(reader(&a.queries)?)?;
    if queries.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let bm25 = Bm25Index::read_from(reader(&a.bm25)?)?;
    let cur_store = EmbeddingStore::open(&a.vectors)?;
    let pcfg = pipeline_of(&cur_store, &a.vectors)?;
    let current = VecIndex::build(&cur_store.records, cur_store.fingerprint.clone())?;
    let doc_of = doc_map(&cur_store);
    let amp = match &a.amp_vectors {
        Some(p) => {
            let s = EmbeddingStore::open(p)?;
            let amp_cfg = pipeline_of(&s, p)?;
            if (PipelineConfig {
                channel: Channel::Current,
                ..amp_cfg
            }) != pcfg
            {
                return Err(Error::InvalidConfig(
                    "current and amp indexes were built with different configs".into(),
                ));
            }
            Some(VecIndex::build(&s.records, s.fingerprint.clone())?)
        }
        None => None,
    };
    let axes = match pcfg.angle_source {
        AngleSourceKind::Eig => Some(load_axes(a.axes.as_ref().ok_or_else(|| {
            Error::InvalidConfig("the index uses eig angles; pass --axes".into())
        })?)?),
        AngleSourceKind::Lexical => None,
    };
    let cur_enc = Encoder::<f64>::new(pcfg.clone(), axes.as_ref())?;
    let amp_enc = match amp {
        Some(_) => Some(Encoder::<f64>::new(
            PipelineConfig {
                channel: Channel::Amp,
                ..pcfg.clone()
            },
            axes.as_ref(),
        )?),
        None => None,
    };
    let inputs = queries
        .par_iter()
        .map(|q| {
            Ok(QueryInput {
                qid: q.qid.clone(),
                tokens: tokenize(&q.text)?,
                current: cur_enc.embed_text(&q.qid, &q.text)?,
                amp: amp_enc
                    .as_ref()
                    .map(|e| e.embed_text(&q.qid, &q.text))
                    .transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ce =
        a.ce.as_ref()
            .map(|p| CeScores::read_tsv(reader(p)?))
            .transpose()?;
    let idx = Indexes {
        bm25: &bm25,
        current: &current,
        amp: amp.as_ref(),
        doc_of: doc_of.as_ref(),
        aggregation: DocAggregation::Max,
    };
    let opts = RunOptions {
        fusion: fusion.clone(),
        sweep: a.alpha_sweep,
    };
    let records = run_queries(&idx, &inputs, &opts, ce.as_ref())?;
    rec.write_jsonl("run.jsonl", &records)?;
    let mut summary = json!({ "queries": records.len() });
    if let Some(ce) = &ce {
        let applied = records
            .iter()
            .filter(|r| r.ce.as_ref().is_some_and(|c| c.applied))
            .count();
        summary["ce"] = json!({ "scores": ce.len(), "applied": applied });
    }
    if a.alpha_sweep {
        let js = judgments(&queries);
        let rr = run_oracle(
            &records,
            &js,
            &fusion.alpha_grid,
            OracleMetric::ReciprocalRank,
        )?;
        let ndcg = run_oracle(&records, &js, &fusion.alpha_grid, OracleMetric::Ndcg)?;
        summary["oracle_mrr"] = json!(rr.aggregate);
        rec.write_json(
            "oracle.json",
            &json!({ "reciprocal_rank": rr, "ndcg": ndcg }),
        )?;
    }
    let fp = fingerprint_value(&json!({ "pipeline": fingerprint(&pcfg).digest, "fusion": fusion }));
    rec.fingerprint(&fp.digest);
    rec.finish()?;
    print_summary(summary);
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut rec = Recorder::new("eval", &a.out)?;
    rec.input(&a.run)?;
    rec.input(&a.queries)?;
    let records: Vec<RunRecord> = read_jsonl(&a.run)?;
    let queries = read_queries(reader(&a.queries)?)?;
    let reports = evaluate_run(&records, &judgments(&queries))?;
    rec.write_json("metrics.json", &reports)?;
    let table = markdown_table(&reports);
    rec.write_bytes("metrics.md", table.as_bytes())?;
    rec.finish()?;
    print!("{table}");
    Ok(())
}

pub fn diag_pairwise(
    a: &DiagPairwiseArgs,
    cfg: &FileConfig,
    cfg_path: Option<&Path>,
) -> Result<()> {
    let mut rec = Recorder::new("diag-pairwise", &a.out)?;
    rec.input(&a.pairs)?;
    record_config(&mut rec, cfg_path)?;
    let pairs = read_pairs(reader(&a.pairs)?)?;
    let ids: Vec<(String, String)> = (0..pairs.len()).map(fixtures::pair_ids).collect();
    let cosines: Vec<f64> = match &a.store {
        Some(path) => {
            rec.input(path)?;
            let store = EmbeddingStore::open(path)?;
            if let Some(fp) = &store.fingerprint {
                rec.fingerprint(&fp.digest);
            }
            let get = |id: &str| {
                store
                    .get(id)
                    .ok_or_else(|| Error::MappingError(id.to_string()))
            };
            ids.iter()
                .map(|(ia, ib)| Ok(get(ia)?.dot(get(ib)?)))
                .collect::<Result<_>>()?
        }
        None => {
            if let Some(p) = &a.encoder.axes {
                rec.input(p)?;
            }
            let (pcfg, axes) = encoder_setup(&cfg.pipeline, &a.encoder)?;
            let enc = Encoder::<f64>::new(pcfg.clone(), axes.as_ref())?;
            rec.fingerprint(&fingerprint(&pcfg).digest);
            pairs
                .par_iter()
                .zip(&ids)
                .map(|(p, (ia, ib))| {
                    Ok(enc
                        .embed_text(ia, &p.sentence_a)?
                        .dot(&enc.embed_text(ib, &p.sentence_b)?))
                })
                .collect::<Result<_>>()?
        }
    };
    let report = pairwise_report(&cosines, &pairs)?;
    rec.write_json("report.json", &report)?;
    rec.write_bytes("histogram.csv", report.histogram.to_csv().as_bytes())?;
    rec.finish()?;
    print_summary(json!({
        "n": report.n,
        "pearson": report.pearson,
        "spearman": report.spearman,
        "mean_sim": report.mean_sim,
        "mass_at_or_above_0.5": report.histogram.mass_at_or_above(0.5),
    }));
    Ok(())
}

pub fn distill(a: &DistillArgs, cfg: &FileConfig, cfg_path: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new("distill", &a.out)?;
    rec.input(&a.student)?;
    rec.input(&a.teacher)?;
    record_config(&mut rec, cfg_path)?;
    let student = EmbeddingStore::open(&a.student)?;
    let teacher = TeacherSet::load(&a.teacher)?;
    let (ids, inputs, targets) = paired(&student, &teacher);
    if ids.len() < 2 {
        return Err(Error::InsufficientOverlap { shared: ids.len() });
    }
    let mut head = match a.head {
        HeadArg::Linear => fit_linear(&inputs, &targets, a.lambda)?,
        HeadArg::Mlp => {
            let mut m = cfg.mlp;
            m.hidden = a.hidden.unwrap_or(m.hidden);
            m.epochs = a.epochs.unwrap_or(m.epochs);
            m.lr = a.lr.unwrap_or(m.lr);
            m.seed = a.seed.unwrap_or(m.seed);
            fit_mlp(&inputs, &targets, &m)?
        }
    };
    head.meta.source_fingerprint = student.fingerprint.as_ref().map(|f| f.digest.clone());
    head.meta.teacher_model = Some(teacher.model.clone());
    head.save(&rec.output("head.bin"))?;
    rec.output("head.bin.json");

    let seed = a.seed.unwrap_or(0);
    let before_map: HashMap<String, Vec<f64>> =
        ids.iter().cloned().zip(inputs.iter().cloned()).collect();
    let after: Vec<Embedding<f64>> = student
        .records
        .iter()
        .filter(|r| teacher.vectors.contains_key(&r.owner_id))
        .map(|r| head.apply(r))
        .collect::<Result<_>>()?;
    let after_map: HashMap<String, Vec<f64>> = after
        .iter()
        .map(|e| (e.owner_id.clone(), e.vec.clone()))
        .collect();
    let before = alignment_report(&before_map, &teacher, a.align_pairs, seed)?;
    let aligned = alignment_report(&after_map, &teacher, a.align_pairs, seed)?;
    write_store_jsonl(
        &mut rec,
        "distilled.jsonl",
        EmbeddingStore::new(after, None),
    )?;
    let report = json!({
        "head": head.kind(),
        "pairs": ids.len(),
        "final_loss": head.meta.final_loss,
        "alignment_before": before,
        "alignment_after": aligned,
    });
    rec.write_json("report.json", &report)?;
    rec.fingerprint(
        &fingerprint_value(&json!({ "head": head.meta.kind, "lambda": head.meta.lambda,
        "hidden": head.meta.hidden, "epochs": head.meta.epochs, "lr": head.meta.lr, "seed": head.meta.seed }))
        .digest,
    );
    rec.finish()?;
    print_summary(
        json!({ "final_loss": head.meta.final_loss, "pairs": ids.len(), "r_after": aligned.r }),
    );
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn kernel(a: &KernelArgs) -> Result<()> {
    let mut rec = Recorder::new("kernel", &a.out)?;
    rec.input(&a.embeddings)?;
    let store = EmbeddingStore::open(&a.embeddings)?;
    let mut records: Vec<&Embedding<f64>> = store.records.iter().collect();
    records.sort_by(|x, y| x.owner_id.cmp(&y.owner_id));
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    let ids: Vec<String> = records.iter().map(|r| r.owner_id.clone()).collect();
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.vec.clone()).collect();
    let circuit = CircuitConfig {
        n_qubits: a.n_qubits,
        n_layers: a.layers,
        ..Default::default()
    };
    circuit.validate()?;
    let pca = fit_pca(&vectors, a.n_qubits)?;
    let k = encode_and_kernel(&ids, &vectors, &pca, &circuit)?;
    rec.write_bytes("kernel.csv", k.to_csv().as_bytes())?;

    let reference_vectors: HashMap<String, Vec<f64>> = match &a.reference {
        Some(p) => {
            rec.input(p)?;
            EmbeddingStore::open(p)?
                .records
                .into_iter()
                .map(|r| (r.owner_id, r.vec))
                .collect()
        }
        None => ids.iter().cloned().zip(vectors.iter().cloned()).collect(),
    };
    let mut reference = HashMap::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let (Some(x), Some(y)) = (
                reference_vectors.get(&ids[i]),
                reference_vectors.get(&ids[j]),
            ) else {
                return Err(Error::MappingError(format!(
                    "{} / {} missing from the reference",
                    ids[i], ids[j]
                )));
            };
            reference.insert((ids[i].clone(), ids[j].clone()), cosine(x, y));
        }
    }
    let diagnostics = if ids.len() >= 3 {
        match kernel_diagnostics(&k, &reference) {
            Ok(d) => json!(d),
            Err(Error::Undefined(why)) => {
                json!({ "undefined": why, "min_eigenvalue": k.min_eigenvalue() })
            }
            Err(e) => return Err(e),
        }
    } else {
        json!({ "min_eigenvalue": k.min_eigenvalue(), "note": "too few pairs for correlations" })
    };
    rec.write_json(
        "diagnostics.json",
        &json!({ "n": ids.len(), "explained_variance": pca.explained_variance, "diagnostics": diagnostics }),
    )?;
    rec.fingerprint(&fingerprint_value(&json!({ "kernel": circuit })).digest);
    rec.finish()?;
    print_summary(json!({ "n": ids.len(), "min_eigenvalue": k.min_eigenvalue() }));
    Ok(())
}
