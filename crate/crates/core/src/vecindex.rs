//! Exact inner-product search over unit-norm embeddings.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embed::{Channel, Embedding, Fingerprint};
use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Real};

/// Tolerance on row norms when building or loading an index.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VecIndex<T> {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<T>,
    channel: Channel,
    fingerprint: Option<Fingerprint>,
}

/// How sub-chunk scores collapse to one document score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocAggregation {
    #[default]
    Max,
    Mean,
}

fn check_unit<T: Real>(v: &[T], id: &str) -> Result<()> {
    let n = l2_norm(v).to_f64_lossy();
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidConfig(format!(
            "vector '{id}' has norm {n}, expected 1"
        )));
    }
    Ok(())
}

/// Sorts by descending score, then ascending id.
pub fn rank_desc<T: Real>(scored: &mut [(String, T)]) {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

impl<T: Real> VecIndex<T> {
    pub fn build(records: &[Embedding<T>], fingerprint: Option<Fingerprint>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyCorpus)?;
        let dim = first.vec.len();
        let channel = first.channel;
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(records.len());
        let mut rows = Vec::with_capacity(records.len() * dim);
        for r in records {
            if r.vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.vec.len(),
                });
            }
            if r.channel != channel {
                return Err(Error::ChannelMismatch {
                    index: channel.to_string(),
                    query: r.channel.to_string(),
                });
            }
            if !seen.insert(r.owner_id.as_str()) {
                return Err(Error::DuplicateId(r.owner_id.clone()));
            }
            check_unit(&r.vec, &r.owner_id)?;
            ids.push(r.owner_id.clone());
            rows.extend_from_slice(&r.vec);
        }
        Ok(Self {
            ids,
            dim,
            rows,
            channel,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn fingerprint(&self) -> Option<&Fingerprint> {
        self.fingerprint.as_ref()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Scores every row; the result is in index order.
    pub fn scan(&self, q: &Embedding<T>) -> Result<Vec<T>> {
        if q.channel != self.channel {
            return Err(Error::ChannelMismatch {
                index: self.channel.to_string(),
                query: q.channel.to_string(),
            });
        }
        if q.vec.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.vec.len(),
            });
        }
        check_unit(&q.vec, &q.owner_id)?;
        Ok((0..self.len()).map(|i| dot(self.row(i), &q.vec)).collect())
    }

    pub fn search(&self, q: &Embedding<T>, top_k: usize) -> Result<Vec<(String, T)>> {
        let mut scored: Vec<(String, T)> = self.ids.iter().cloned().zip(self.scan(q)?).collect();
        rank_desc(&mut scored);
        scored.truncate(top_k);
        Ok(scored)
    }

    /// Scores documents through their sub-chunks. `doc_of` maps every indexed
    /// sub id to its document.
    pub fn doc_scores(
        &self,
        q: &Embedding<T>,
        doc_of: &HashMap<String, String>,
        agg: DocAggregation,
    ) -> Result<Vec<(String, T)>> {
        let scores = self.scan(q)?;
        doc_score_from_subchunks(self.ids.iter().map(String::as_str).zip(scores), doc_of, agg)
    }
}

/// Collapses sub-chunk scores to per-document scores, ranked.
pub fn doc_score_from_subchunks<'a, T: Real>(
    sub_scores: impl IntoIterator<Item = (&'a str, T)>,
    doc_of: &HashMap<String, String>,
    agg: DocAggregation,
) -> Result<Vec<(String, T)>> {
    let mut per_doc: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for (sub, s) in sub_scores {
        let doc = doc_of
            .get(sub)
            .ok_or_else(|| Error::MappingError(sub.to_string()))?;
        per_doc.entry(doc.as_str()).or_default().push(s);
    }
    let mut out: Vec<(String, T)> = per_doc
        .into_iter()
        .map(|(d, v)| {
            let s = match agg {
                DocAggregation::Max => v.iter().copied().fold(T::neg_infinity(), T::max),
                DocAggregation::Mean => v.iter().copied().sum::<T>() / T::lit(v.len() as f64),
            };
            (d.to_string(), s)
        })
        .collect();
    rank_desc(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(id: &str, v: Vec<f64>) -> Embedding<f64> {
        Embedding {
            owner_id: id.into(),
            channel: Channel::Current,
            vec: v,
        }
    }

    fn index() -> VecIndex<f64> {
        let s = 0.5f64.sqrt();
        VecIndex::build(
            &[
                e("a", vec![1.0, 0.0, 0.0]),
                e("b", vec![s, s, 0.0]),
                e("c", vec![0.0, 1.0, 0.0]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn self_query_ranks_first() {
        let r = index().search(&e("q", vec![0.0, 1.0, 0.0]), 3).unwrap();
        assert_eq!(r[0].0, "c");
        assert!((r[0].1 - 1.0).abs() < 1e-9);
        assert_eq!(r[2].0, "a");
    }

    #[test]
    fn orthogonal_query_scores_zero_and_ties_by_id() {
        let r = index().search(&e("q", vec![0.0, 0.0, 1.0]), 3).unwrap();
        assert!(r.iter().all(|(_, s)| *s == 0.0));
        assert_eq!(
            r.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
    }

    #[test]
    fn channel_mismatch() {
        let mut q = e("q", vec![1.0, 0.0, 0.0]);
        q.channel = Channel::Amp;
        assert!(matches!(
            index().search(&q, 1),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_unit_rows() {
        assert!(VecIndex::build(&[e("a", vec![2.0, 0.0])], None).is_err());
    }

    #[test]
    fn doc_aggregation_max_and_mean() {
        // d1 subs {0.2, 0.9}, d2 subs {0.6, 0.6}: max favours d1, mean favours d2.
        let map: HashMap<String, String> = [("s1", "d1"), ("s2", "d1"), ("s3", "d2"), ("s4", "d2")]
            .map(|(a, b)| (a.into(), b.into()))
            .into();
        let subs = [("s1", 0.2f64), ("s2", 0.9), ("s3", 0.6), ("s4", 0.6)];
        let max = doc_score_from_subchunks(subs, &map, DocAggregation::Max).unwrap();
        assert_eq!(max[0], ("d1".to_string(), 0.9));
        let mean = doc_score_from_subchunks(subs, &map, DocAggregation::Mean).unwrap();
        assert_eq!(mean[0].0, "d2");
        assert!((mean[1].1 - 0.55).abs() < 1e-12);
        let bad = doc_score_from_subchunks([("zz", 0.1)], &map, DocAggregation::Max);
        assert!(matches!(bad, Err(Error::MappingError(_))));
    }
}
