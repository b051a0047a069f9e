//! Recall@N and MRR@100.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieval::Ranking;

pub const DEFAULT_CUTOFFS: [usize; 3] = [1, 10, 100];
pub const MRR_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Percentage of queries whose gold document is in the top N.
    pub recall_at: BTreeMap<usize, f64>,
    /// Mean reciprocal rank with ranks beyond 100 counted as zero.
    pub mrr_at_100: f64,
    pub n_queries: usize,
}

#[derive(Serialize, Deserialize)]
struct MetricsJson {
    recall: BTreeMap<String, f64>,
    mrr100: f64,
    n_queries: usize,
}

impl MetricsReport {
    pub fn recall(&self, n: usize) -> Option<f64> {
        self.recall_at.get(&n).copied()
    }

    /// `{"recall": {"1": x, "10": y, "100": z}, "mrr100": m, "n_queries": n}`
    pub fn to_json(&self) -> Result<String> {
        let j = MetricsJson {
            recall: self
                .recall_at
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            mrr100: self.mrr_at_100,
            n_queries: self.n_queries,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: MetricsJson = serde_json::from_str(s)?;
        let recall_at = j
            .recall
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| Error::Format(format!("bad recall cutoff {k:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            recall_at,
            mrr_at_100: j.mrr100,
            n_queries: j.n_queries,
        })
    }
}

pub fn score(rankings: &[Ranking], corpus: &Corpus, cutoffs: &[usize]) -> Result<MetricsReport> {
    let gold: std::collections::HashMap<&str, &str> = corpus
        .queries()
        .iter()
        .map(|q| (q.query_id.as_str(), q.gold_doc_id.as_str()))
        .collect();
    let mut hits = vec![0usize; cutoffs.len()];
    let mut rr_sum = 0.0;
    for r in rankings {
        let g = gold.get(r.query_id.as_str()).ok_or_else(|| {
            Error::Referential(format!("query {:?} has no gold document", r.query_id))
        })?;
        if let Some(rank) = r.rank_of(g) {
            for (h, &n) in hits.iter_mut().zip(cutoffs) {
                if rank <= n {
                    *h += 1;
                }
            }
            if rank <= MRR_DEPTH {
                rr_sum += 1.0 / rank as f64;
            }
        }
    }
    let n = rankings.len();
    let denom = n.max(1) as f64;
    Ok(MetricsReport {
        recall_at: cutoffs
            .iter()
            .zip(&hits)
            .map(|(&c, &h)| (c, 100.0 * h as f64 / denom))
            .collect(),
        mrr_at_100: rr_sum / denom,
        n_queries: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EmbeddingMatrix, Query, QuerySource, Split};
    use crate::retrieval::RankedDoc;

    fn corpus(n_docs: usize) -> Corpus {
        let docs = (0..n_docs)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                row: i,
            })
            .collect();
        let qs = vec![Query {
            query_id: "q".into(),
            gold_doc_id: "d0".into(),
            source: QuerySource::RealQ,
            split: Split::Test,
            row: 0,
        }];
        Corpus::new(
            docs,
            qs,
            EmbeddingMatrix::new(n_docs, 1, vec![0.0; n_docs]).unwrap(),
            EmbeddingMatrix::new(1, 1, vec![0.0]).unwrap(),
        )
        .unwrap()
    }

    fn ranking(gold_rank: usize, len: usize) -> Ranking {
        let docs = (1..=len)
            .map(|r| RankedDoc {
                doc_id: if r == gold_rank {
                    "d0".to_string()
                } else {
                    format!("d{r}")
                },
                score: 0.0,
                log_prob: -(r as f64),
            })
            .collect();
        Ranking {
            query_id: "q".into(),
            docs,
        }
    }

    #[test]
    fn gold_first() {
        let m = score(&[ranking(1, 5)], &corpus(6), &DEFAULT_CUTOFFS).unwrap();
        assert_eq!(m.recall(1), Some(100.0));
        assert_eq!(m.mrr_at_100, 1.0);
    }

    #[test]
    fn gold_third() {
        let m = score(&[ranking(3, 5)], &corpus(6), &DEFAULT_CUTOFFS).unwrap();
        assert_eq!(m.recall(1), Some(0.0));
        assert_eq!(m.recall(10), Some(100.0));
        assert!((m.mrr_at_100 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gold_at_101_counts_nothing() {
        let m = score(&[ranking(101, 120)], &corpus(121), &DEFAULT_CUTOFFS).unwrap();
        assert_eq!(m.recall(100), Some(0.0));
        assert_eq!(m.mrr_at_100, 0.0);
    }

    #[test]
    fn unknown_query_is_referential_error() {
        let mut r = ranking(1, 2);
        r.query_id = "nope".into();
        assert!(matches!(
            score(&[r], &corpus(3), &DEFAULT_CUTOFFS),
            Err(Error::Referential(_))
        ));
    }

    #[test]
    fn json_schema() {
        let m = score(&[ranking(2, 5)], &corpus(6), &DEFAULT_CUTOFFS).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["recall"]["1"], 0.0);
        assert_eq!(v["recall"]["10"], 100.0);
        assert_eq!(v["recall"]["100"], 100.0);
        assert_eq!(v["mrr100"], 0.5);
        assert_eq!(v["n_queries"], 1);
        assert_eq!(MetricsReport::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
