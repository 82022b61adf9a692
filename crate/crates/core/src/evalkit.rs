//! Retrieval metrics, correlation statistics and pairwise-similarity reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_K_LIST: [usize; 4] = [1, 3, 5, 10];
/// Cutoff for MRR, nDCG and MAP.
pub const CUTOFF: usize = 10;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJudgment {
    pub qid: String,
    pub relevant: String,
}

/// 1-based position of `relevant` in `ranking`.
pub fn rank_of<S: AsRef<str>>(ranking: &[S], relevant: &str) -> Option<usize> {
    ranking
        .iter()
        .position(|u| u.as_ref() == relevant)
        .map(|p| p + 1)
}

pub fn reciprocal_rank(rank: Option<usize>, cutoff: usize) -> f64 {
    match rank {
        Some(r) if r <= cutoff => 1.0 / r as f64,
        _ => 0.0,
    }
}

/// Single-relevant nDCG: the ideal DCG is 1.
pub fn ndcg_single(rank: Option<usize>, cutoff: usize) -> f64 {
    match rank {
        Some(r) if r <= cutoff => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Average precision at `cutoff` for any number of relevant ids.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], relevant: &[&str], cutoff: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, u) in ranking.iter().take(cutoff).enumerate() {
        if relevant.contains(&u.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len().min(cutoff) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub relevant: String,
    pub rank: Option<usize>,
    pub hits: BTreeMap<usize, bool>,
    pub rr: f64,
    pub ndcg: f64,
    pub ap: f64,
}

pub fn query_metrics<S: AsRef<str>>(
    qid: &str,
    ranking: &[S],
    relevant: &str,
    k_list: &[usize],
) -> QueryMetrics {
    let rank = rank_of(ranking, relevant);
    QueryMetrics {
        qid: qid.to_string(),
        relevant: relevant.to_string(),
        rank,
        hits: k_list
            .iter()
            .map(|&k| (k, rank.is_some_and(|r| r <= k)))
            .collect(),
        rr: reciprocal_rank(rank, CUTOFF),
        ndcg: ndcg_single(rank, CUTOFF),
        ap: average_precision(ranking, &[relevant], CUTOFF),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n_queries: usize,
    pub hit: BTreeMap<usize, f64>,
    pub mrr10: f64,
    pub ndcg10: f64,
    pub map10: f64,
    pub per_query: Vec<QueryMetrics>,
}

pub fn retrieval_metrics<S: AsRef<str>>(
    method: &str,
    rankings: &HashMap<String, Vec<S>>,
    judgments: &[QueryJudgment],
    k_list: &[usize],
) -> Result<MetricsReport> {
    if judgments.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let per_query = judgments
        .iter()
        .map(|j| {
            let ranking = rankings
                .get(&j.qid)
                .ok_or_else(|| Error::MissingRanking(j.qid.clone()))?;
            Ok(query_metrics(&j.qid, ranking, &j.relevant, k_list))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_query.len() as f64;
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        method: method.to_string(),
        n_queries: per_query.len(),
        hit: k_list
            .iter()
            .map(|&k| (k, mean(&|q| q.hits[&k] as u8 as f64)))
            .collect(),
        mrr10: mean(&|q| q.rr),
        ndcg10: mean(&|q| q.ndcg),
        map10: mean(&|q| q.ap),
        per_query,
    })
}

/// Markdown table in the column order H@1 H@3 H@5 H@10 nDCG MRR MAP.
pub fn markdown_table(reports: &[MetricsReport]) -> String {
    let mut s = String::from("| Method | H@1 | H@3 | H@5 | H@10 | nDCG | MRR | MAP |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let h = |k: usize| r.hit.get(&k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            r.method,
            h(1),
            h(3),
            h(5),
            h(10),
            r.ndcg10,
            r.mrr10,
            r.map10
        );
    }
    s
}

fn check_lengths<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    check_lengths(x, y)?;
    let n = T::lit(x.len() as f64);
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::Undefined("zero variance".into()));
    }
    // sqrt(s * s) == s exactly, so identical inputs give r == 1.
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks<T: Real>(x: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = T::lit((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    check_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins over `[lo, hi]`; values outside are clamped to the end
    /// bins and `hi` itself lands in the last bin.
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() {
                0
            } else {
                (b.max(0.0) as usize).min(bins - 1)
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_left(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Fraction of the mass in bins whose left edge is at or above `t`.
    pub fn mass_at_or_above(&self, t: f64) -> f64 {
        let above: usize = (0..self.counts.len())
            .filter(|&i| self.bin_left(i) >= t - 1e-12)
            .map(|i| self.counts[i])
            .sum();
        above as f64 / self.total().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.bin_left(i), c);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sim,
    Neutral,
    Dissim,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sim" => Ok(Regime::Sim),
            "neutral" => Ok(Regime::Neutral),
            "dissim" => Ok(Regime::Dissim),
            other => Err(Error::parse("regime", format!("unknown regime '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sentence_a: String,
    pub sentence_b: String,
    pub score: f64,
    pub regime: Regime,
}

/// Reads `sentence_a \t sentence_b \t score \t regime` lines. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_pairs(r: impl BufRead) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("pairs line {}", i + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                loc(),
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let score: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(loc(), "score is not a number"))?;
        if !score.is_finite() {
            return Err(Error::parse(loc(), "score is not finite"));
        }
        out.push(PairRecord {
            sentence_a: cols[0].to_string(),
            sentence_b: cols[1].to_string(),
            score,
            regime: cols[3]
                .parse()
                .map_err(|_| Error::parse(loc(), "unknown regime"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub regime: Regime,
    pub n: usize,
    pub mean_sim: f64,
    pub mean_ref: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub n: usize,
    /// `None` when the statistic is undefined (zero variance).
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mae: f64,
    pub mean_sim: f64,
    pub regimes: Vec<RegimeStats>,
    pub histogram: Histogram,
    pub notes: Vec<String>,
}

fn stat_or_note(r: Result<f64>, name: &str, notes: &mut Vec<String>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(why)) => {
            notes.push(format!("{name} undefined: {why}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Compares per-pair cosine similarities against the reference scores.
pub fn pairwise_report(cosines: &[f64], pairs: &[PairRecord]) -> Result<PairwiseReport> {
    if cosines.len() != pairs.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            got: cosines.len(),
        });
    }
    if pairs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: pairs.len(),
        });
    }
    let refs: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let mut notes = vec![
        "mae compares cosine in [-1, 1] against reference scores in [0, 1]; the scales differ"
            .to_string(),
    ];
    let pearson = stat_or_note(pearson(cosines, &refs), "pearson", &mut notes)?;
    let spearman = stat_or_note(spearman(cosines, &refs), "spearman", &mut notes)?;
    let n = pairs.len() as f64;
    let mae = cosines
        .iter()
        .zip(&refs)
        .map(|(c, r)| (c - r).abs())
        .sum::<f64>()
        / n;
    let mean_sim = cosines.iter().sum::<f64>() / n;
    let mut groups: BTreeMap<Regime, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.regime).or_default().push(i);
    }
    let regimes = groups
        .into_iter()
        .map(|(regime, idx)| {
            let m = idx.len() as f64;
            RegimeStats {
                regime,
                n: idx.len(),
                mean_sim: idx.iter().map(|&i| cosines[i]).sum::<f64>() / m,
                mean_ref: idx.iter().map(|&i| refs[i]).sum::<f64>() / m,
                mae: idx
                    .iter()
                    .map(|&i| (cosines[i] - refs[i]).abs())
                    .sum::<f64>()
                    / m,
            }
        })
        .collect();
    Ok(PairwiseReport {
        n: pairs.len(),
        pearson,
        spearman,
        mae,
        mean_sim,
        regimes,
        histogram: Histogram::new(cosines.iter().copied(), -1.0, 1.0, HISTOGRAM_BINS),
        notes,
    })
}
