//! Hybrid lexical/dense fusion: candidate union, α interpolation, dynamic α,
//! reciprocal rank fusion, the α oracle and guarded cross-encoder re-ranking.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{ndcg_single, rank_of, reciprocal_rank, spearman, CUTOFF};
use crate::vecindex::rank_desc;

pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0];
pub const DEFAULT_RRF_K: usize = 60;
/// Guard on the dynamic-α margin denominator.
pub const MARGIN_EPS: f64 = 1e-12;
/// Minimum fraction of the top-k that must carry a cross-encoder score.
pub const CE_MIN_COVERAGE: f64 = 0.8;

pub type Ranked = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub unit_id: String,
    pub bm25_raw: f64,
    pub embed_raw: f64,
    pub bm25_norm: f64,
    pub embed_norm: f64,
    pub in_bm25: bool,
    pub in_embed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub qid: String,
    /// Sorted by unit id.
    pub entries: Vec<Candidate>,
}

/// Min-max normalizes `raw` to [0, 1]. A constant list maps to 0.5.
pub fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        raw.iter().map(|&x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; raw.len()]
    }
}

/// Fills ids absent from `list` with the list minimum and normalizes over
/// `ids`. An empty list contributes 0 everywhere.
fn fill_and_normalize(ids: &[&str], list: &HashMap<&str, f64>) -> (Vec<f64>, Vec<f64>) {
    if list.is_empty() {
        return (vec![0.0; ids.len()], vec![0.0; ids.len()]);
    }
    let fill = list.values().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = ids
        .iter()
        .map(|id| list.get(id).copied().unwrap_or(fill))
        .collect();
    let norm = min_max(&raw);
    (raw, norm)
}

pub fn candidate_union(
    qid: &str,
    bm25: &[(String, f64)],
    embed: &[(String, f64)],
) -> Result<CandidateSet> {
    if bm25.is_empty() && embed.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let b: HashMap<&str, f64> = bm25.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let e: HashMap<&str, f64> = embed.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let mut ids: Vec<&str> = b.keys().chain(e.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let (b_raw, b_norm) = fill_and_normalize(&ids, &b);
    let (e_raw, e_norm) = fill_and_normalize(&ids, &e);
    let entries = ids
        .iter()
        .enumerate()
        .map(|(i, id)| Candidate {
            unit_id: id.to_string(),
            bm25_raw: b_raw[i],
            embed_raw: e_raw[i],
            bm25_norm: b_norm[i],
            embed_norm: e_norm[i],
            in_bm25: b.contains_key(id),
            in_embed: e.contains_key(id),
        })
        .collect();
    Ok(CandidateSet {
        qid: qid.to_string(),
        entries,
    })
}

fn ranked_by(cands: &CandidateSet, f: impl Fn(&Candidate) -> f64) -> Ranked {
    let mut out: Ranked = cands
        .entries
        .iter()
        .map(|c| (c.unit_id.clone(), f(c)))
        .collect();
    rank_desc(&mut out);
    out
}

/// Fused score `α·embed_norm + (1−α)·bm25_norm`, ranked.
pub fn interpolate(cands: &CandidateSet, alpha: f64) -> Result<Ranked> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(ranked_by(cands, |c| {
        alpha * c.embed_norm + (1.0 - alpha) * c.bm25_norm
    }))
}

/// Normalized BM25 ranking of the candidate set (the α = 0 reference).
pub fn bm25_ranking(cands: &CandidateSet) -> Ranked {
    ranked_by(cands, |c| c.bm25_norm)
}

/// Normalized embedding ranking of the candidate set (the α = 1 reference).
pub fn embed_ranking(cands: &CandidateSet) -> Ranked {
    ranked_by(cands, |c| c.embed_norm)
}

/// Confidence margin of the raw BM25 top-2, in [0, 1].
pub fn bm25_margin(cands: &CandidateSet) -> f64 {
    let mut s: Vec<f64> = cands
        .entries
        .iter()
        .filter(|c| c.in_bm25)
        .map(|c| c.bm25_raw)
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    match s.as_slice() {
        [s1, s2, ..] => ((s1 - s2) / s1.max(MARGIN_EPS)).clamp(0.0, 1.0),
        _ => 1.0,
    }
}

/// Shrinks `base_alpha` toward pure BM25 as the BM25 margin grows.
pub fn dynamic_alpha(cands: &CandidateSet, base_alpha: f64) -> Result<(f64, Ranked)> {
    let alpha = base_alpha * (1.0 - bm25_margin(cands));
    Ok((alpha, interpolate(cands, alpha)?))
}

/// Reciprocal rank fusion with 1-based ranks.
pub fn rrf(lists: &[&[(String, f64)]], k: usize) -> Ranked {
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (i, (id, _)) in list.iter().enumerate() {
            *acc.entry(id.as_str()).or_default() += 1.0 / (k + i + 1) as f64;
        }
    }
    let mut out: Ranked = acc.into_iter().map(|(id, s)| (id.to_string(), s)).collect();
    rank_desc(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMetric {
    #[default]
    ReciprocalRank,
    Ndcg,
}

impl OracleMetric {
    pub fn eval(self, ranking: &[(String, f64)], relevant: &str) -> f64 {
        let ids: Vec<&str> = ranking.iter().map(|(id, _)| id.as_str()).collect();
        let rank = rank_of(&ids, relevant);
        match self {
            OracleMetric::ReciprocalRank => reciprocal_rank(rank, CUTOFF),
            OracleMetric::Ndcg => ndcg_single(rank, CUTOFF),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleQuery {
    pub qid: String,
    pub best_alpha: f64,
    pub best_metric: f64,
    /// Metric at each grid α, in grid order.
    pub per_alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub grid: Vec<f64>,
    pub metric: OracleMetric,
    pub per_query: Vec<OracleQuery>,
    /// Mean of the per-query maxima.
    pub aggregate: f64,
    /// Mean metric at each fixed grid α.
    pub fixed: Vec<f64>,
}

/// Per-query best α over `grid`; ties go to the smallest α.
pub fn alpha_oracle(
    queries: &[(&CandidateSet, &str)],
    grid: &[f64],
    metric: OracleMetric,
) -> Result<OracleReport> {
    if queries.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    let per_query = queries
        .iter()
        .map(|(cands, rel)| {
            let per_alpha = sorted
                .iter()
                .map(|&a| Ok(metric.eval(&interpolate(cands, a)?, rel)))
                .collect::<Result<Vec<f64>>>()?;
            let mut best = 0;
            for (i, &m) in per_alpha.iter().enumerate() {
                if m > per_alpha[best] {
                    best = i;
                }
            }
            Ok(OracleQuery {
                qid: cands.qid.clone(),
                best_alpha: sorted[best],
                best_metric: per_alpha[best],
                per_alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_query.len() as f64;
    let aggregate = per_query.iter().map(|q| q.best_metric).sum::<f64>() / n;
    let fixed = (0..sorted.len())
        .map(|i| per_query.iter().map(|q| q.per_alpha[i]).sum::<f64>() / n)
        .collect();
    Ok(OracleReport {
        grid: sorted,
        metric,
        per_query,
        aggregate,
        fixed,
    })
}

/// External cross-encoder scores keyed by (qid, unit id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CeScores(HashMap<(String, String), f64>);

impl CeScores {
    pub fn insert(&mut self, qid: &str, unit: &str, score: f64) {
        self.0.insert((qid.to_string(), unit.to_string()), score);
    }

    pub fn get(&self, qid: &str, unit: &str) -> Option<f64> {
        self.0.get(&(qid.to_string(), unit.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads `qid \t unit_id \t score` lines.
    pub fn read_tsv(r: impl BufRead) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = || format!("ce line {}", i + 1);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    loc(),
                    format!("expected 3 columns, found {}", cols.len()),
                ));
            }
            let s: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(loc(), "score is not a number"))?;
            if !s.is_finite() {
                return Err(Error::parse(loc(), "score is not finite"));
            }
            out.insert(cols[0].trim(), cols[1].trim(), s);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeReason {
    Applied,
    MissingScores,
    Degenerate,
    NegativeCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeOutcome {
    pub ranking: Ranked,
    pub applied: bool,
    pub reason: CeReason,
    pub spearman: Option<f64>,
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Re-ranks the first `top_k` entries of `ranking` by cross-encoder score
/// unless a guard fires, in which case `ranking` is returned untouched.
///
/// Guards, in order: fewer than 80% of the top-k scored; CE standard
/// deviation at or below `std_floor`; Spearman between CE and base scores
/// below zero. An undefined Spearman (constant base scores) does not block.
/// Re-ranked entries keep their base scores; unscored entries follow the
/// scored ones in base order.
pub fn ce_rerank(
    qid: &str,
    ranking: &[(String, f64)],
    ce: &CeScores,
    top_k: usize,
    std_floor: f64,
) -> CeOutcome {
    let k = top_k.min(ranking.len());
    let unchanged = |reason, spearman| CeOutcome {
        ranking: ranking.to_vec(),
        applied: false,
        reason,
        spearman,
    };
    if k == 0 {
        return unchanged(CeReason::MissingScores, None);
    }
    let head = &ranking[..k];
    let scored: Vec<(usize, f64)> = head
        .iter()
        .enumerate()
        .filter_map(|(i, (id, _))| ce.get(qid, id).map(|s| (i, s)))
        .collect();
    if (scored.len() as f64) < CE_MIN_COVERAGE * k as f64 || scored.len() < 2 {
        return unchanged(CeReason::MissingScores, None);
    }
    let ce_vals: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    if population_std(&ce_vals) <= std_floor {
        return unchanged(CeReason::Degenerate, None);
    }
    let base_vals: Vec<f64> = scored.iter().map(|&(i, _)| head[i].1).collect();
    let rho = spearman(&ce_vals, &base_vals).ok();
    if rho.is_some_and(|r| r < 0.0) {
        return unchanged(CeReason::NegativeCorrelation, rho);
    }
    let mut order = scored.clone();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Ranked = order.iter().map(|&(i, _)| head[i].clone()).collect();
    let scored_idx: std::collections::HashSet<usize> = scored.iter().map(|&(i, _)| i).collect();
    out.extend(
        (0..k)
            .filter(|i| !scored_idx.contains(i))
            .map(|i| head[i].clone()),
    );
    out.extend_from_slice(&ranking[k..]);
    CeOutcome {
        ranking: out,
        applied: true,
        reason: CeReason::Applied,
        spearman: rho,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMode {
    #[default]
    Off,
    DualScore,
    Rrf,
}

/// Combines the current- and amp-channel rankings of one query.
pub fn dual_channel(
    current: &[(String, f64)],
    amp: &[(String, f64)],
    mode: DualMode,
    rrf_k: usize,
) -> Result<Ranked> {
    match mode {
        DualMode::Off => Ok(current.to_vec()),
        DualMode::Rrf => Ok(rrf(&[current, amp], rrf_k)),
        DualMode::DualScore => {
            let set = candidate_union("", current, amp)?;
            Ok(ranked_by(&set, |c| 0.5 * (c.bm25_norm + c.embed_norm)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed(f64),
    /// Base α for the BM25-confidence gate.
    Dynamic(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub alpha: AlphaMode,
    pub alpha_grid: Vec<f64>,
    pub rrf_k: usize,
    pub top_k: usize,
    pub ce_std_floor: f64,
    pub dual: DualMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: AlphaMode::Fixed(0.7),
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            rrf_k: DEFAULT_RRF_K,
            top_k: 10,
            ce_std_floor: 1e-6,
            dual: DualMode::Off,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let (AlphaMode::Fixed(a) | AlphaMode::Dynamic(a)) = self.alpha;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::AlphaOutOfRange(a));
        }
        if let Some(&bad) = self.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::AlphaOutOfRange(bad));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "alpha grid must be strictly increasing".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be positive".into()));
        }
        if self.ce_std_floor.is_nan() || self.ce_std_floor < 0.0 {
            return Err(Error::InvalidConfig(
                "ce_std_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Fuses one query's candidates with the configured α mode.
    pub fn fuse(&self, cands: &CandidateSet) -> Result<(f64, Ranked)> {
        match self.alpha {
            AlphaMode::Fixed(a) => Ok((a, interpolate(cands, a)?)),
            AlphaMode::Dynamic(a) => dynamic_alpha(cands, a),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(v: &[(&str, f64)]) -> Ranked {
        v.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    fn ids(r: &Ranked) -> Vec<&str> {
        r.iter().map(|x| x.0.as_str()).collect()
    }

    #[test]
    fn union_sizes_and_flags() {
        let a = list(&[("a", 5.0), ("b", 4.0), ("c", 3.0), ("d", 2.0), ("e", 1.0)]);
        let b = list(&[("f", 0.9), ("g", 0.8), ("h", 0.7), ("i", 0.6), ("j", 0.5)]);
        assert_eq!(candidate_union("q", &a, &b).unwrap().entries.len(), 10);
        let same = candidate_union("q", &a, &a).unwrap();
        assert_eq!(same.entries.len(), 5);
        assert!(same.entries.iter().all(|c| c.in_bm25 && c.in_embed));
        assert!(matches!(
            candidate_union("q", &[], &[]),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn min_max_arithmetic() {
        assert_eq!(min_max(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max(&[3.0, 3.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn missing_source_fills_with_minimum() {
        let c =
            candidate_union("q", &list(&[("a", 3.0), ("b", 1.0)]), &list(&[("c", 0.4)])).unwrap();
        let cc = &c.entries[2];
        assert_eq!(
            (cc.unit_id.as_str(), cc.bm25_raw, cc.bm25_norm),
            ("c", 1.0, 0.0)
        );
    }

    #[test]
    fn half_alpha_hand_fixture() {
        // bm25 a=10 b=6 c=2 -> 1, .5, 0; embed a=.1 b=.9 c=.5 -> 0, 1, .5.
        // fused: a .5, b .75, c .25.
        let c = candidate_union(
            "q",
            &list(&[("a", 10.0), ("b", 6.0), ("c", 2.0)]),
            &list(&[("b", 0.9), ("c", 0.5), ("a", 0.1)]),
        )
        .unwrap();
        let r = interpolate(&c, 0.5).unwrap();
        assert_eq!(ids(&r), ["b", "a", "c"]);
        assert!((r[0].1 - 0.75).abs() < 1e-12);
        assert_eq!(ids(&interpolate(&c, 0.0).unwrap()), ["a", "b", "c"]);
        assert_eq!(ids(&interpolate(&c, 1.0).unwrap()), ["b", "c", "a"]);
        assert!(matches!(
            interpolate(&c, 1.5),
            Err(Error::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn dynamic_gate() {
        let mk = |s1: f64, s2: f64| {
            candidate_union("q", &list(&[("a", s1), ("b", s2)]), &list(&[("a", 0.1)])).unwrap()
        };
        assert!((dynamic_alpha(&mk(2.0, 1.0), 0.7).unwrap().0 - 0.35).abs() < 1e-12);
        assert_eq!(dynamic_alpha(&mk(1.0, 1.0), 0.7).unwrap().0, 0.7);
        assert!(dynamic_alpha(&mk(1e9, 1e-9), 0.7).unwrap().0 < 1e-9);
    }

    #[test]
    fn rrf_formula() {
        let l = list(&[("x", 1.0), ("y", 0.5)]);
        let r = rrf(&[&l, &l], 60);
        assert!((r[0].1 - 2.0 / 61.0).abs() < 1e-15);
        assert_eq!(ids(&rrf(&[&l], 60)), ["x", "y"]);
        let rev = list(&[("y", 0.5), ("x", 1.0)]);
        let s = rrf(&[&l, &rev], 60);
        assert_eq!(s[0].1, s[1].1);
    }

    #[test]
    fn oracle_prefers_smallest_alpha_on_ties() {
        let c = candidate_union(
            "q",
            &list(&[("rel", 2.0), ("x", 1.0)]),
            &list(&[("rel", 0.9), ("x", 0.1)]),
        )
        .unwrap();
        let rep = alpha_oracle(
            &[(&c, "rel")],
            &DEFAULT_ALPHA_GRID,
            OracleMetric::ReciprocalRank,
        )
        .unwrap();
        assert_eq!(rep.per_query[0].best_alpha, 0.0);
        assert_eq!(rep.aggregate, 1.0);
    }

    #[test]
    fn guards_return_input_unchanged() {
        let base = list(&[("a", 0.9), ("b", 0.7), ("c", 0.5), ("d", 0.3)]);
        let mut rev = CeScores::default();
        let mut flat = CeScores::default();
        for (i, (id, _)) in base.iter().enumerate() {
            rev.insert("q", id, i as f64);
            flat.insert("q", id, 0.25);
        }
        let o = ce_rerank("q", &base, &rev, 4, 1e-6);
        assert_eq!(
            (o.applied, o.reason),
            (false, CeReason::NegativeCorrelation)
        );
        assert_eq!(o.ranking, base);
        let o = ce_rerank("q", &base, &flat, 4, 1e-6);
        assert_eq!((o.applied, o.reason), (false, CeReason::Degenerate));
        let o = ce_rerank("q", &base, &CeScores::default(), 4, 1e-6);
        assert_eq!(o.reason, CeReason::MissingScores);
    }

    #[test]
    fn small_boost_moves_one_candidate() {
        let base = list(&[("a", 0.9), ("b", 0.7), ("c", 0.5), ("d", 0.3), ("e", 0.1)]);
        let mut ce = CeScores::default();
        for (id, s) in &base {
            let boost = if id == "c" { 0.25 } else { 0.0 };
            ce.insert("q", id, s + boost);
        }
        let o = ce_rerank("q", &base, &ce, 5, 1e-6);
        assert!(o.applied);
        assert_eq!(ids(&o.ranking), ["a", "c", "b", "d", "e"]);
    }

    #[test]
    fn dual_modes() {
        let l = list(&[("x", 0.9), ("y", 0.5), ("z", 0.1)]);
        assert_eq!(
            ids(&dual_channel(&l, &l, DualMode::DualScore, 60).unwrap()),
            ["x", "y", "z"]
        );
        assert_eq!(
            dual_channel(&l, &l, DualMode::Rrf, 60).unwrap(),
            rrf(&[&l, &l], 60)
        );
        // cur x=1,y=0 ; amp y=1,x=.5,z=0 -> fill cur z=0 ; means x .75, y .5, z 0.
        let cur = list(&[("x", 0.8), ("y", 0.2)]);
        let amp = list(&[("y", 0.6), ("x", 0.4), ("z", 0.2)]);
        let r = dual_channel(&cur, &amp, DualMode::DualScore, 60).unwrap();
        assert_eq!(ids(&r), ["x", "y", "z"]);
        assert!((r[0].1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            alpha: AlphaMode::Fixed(1.2),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&FusionConfig::default()).unwrap();
        let back: FusionConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FusionConfig::default());
    }
}
