//! Ranking metrics (DCG, nDCG@5, recall@K) and the similarity baselines.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::retrieval::{build_score_matrix, Provenance, Ranking, ScoreMatrix};

/// Cutoffs reported by [`evaluate`].
pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

/// `Σ_{i=1}^{p} (2^{rel_i} − 1) / log2(i + 1)`; missing positions count as zero.
pub fn dcg_at_p(relevances: &[f64], p: usize) -> Result<f64> {
    if p == 0 {
        return Err(Error::out_of_range("p", p, ">= 1"));
    }
    Ok(relevances
        .iter()
        .take(p)
        .enumerate()
        .map(|(i, rel)| (2f64.powf(*rel) - 1.0) / ((i + 2) as f64).log2())
        .sum())
}

/// 1-based rank of each ground-truth caption, `None` when absent from the list.
fn ranks(ranking: &Ranking, gt: &BTreeMap<u64, u64>) -> Result<Vec<Option<usize>>> {
    if gt.is_empty() {
        return Err(Error::EmptyInput("ground truth".into()));
    }
    let lists = ranking.by_query();
    gt.iter()
        .map(|(q, c)| {
            let list = lists.get(q).ok_or(Error::MissingQuery(*q))?;
            Ok(list.items.iter().position(|s| s.caption_id == *c).map(|p| p + 1))
        })
        .collect()
}

/// Mean nDCG over the top 5 with one relevant caption per query.
pub fn ndcg5(ranking: &Ranking, gt: &BTreeMap<u64, u64>) -> Result<f64> {
    let ranks = ranks(ranking, gt)?;
    // a single relevant item makes the ideal DCG exactly 1
    let ideal = dcg_at_p(&[1.0], 5)?;
    let mut total = 0.0;
    for rank in &ranks {
        let mut rel = [0.0; 5];
        if let Some(r) = rank.filter(|r| *r <= 5) {
            rel[r - 1] = 1.0;
        }
        total += dcg_at_p(&rel, 5)? / ideal;
    }
    Ok(total / ranks.len() as f64)
}

/// Fraction of queries whose caption appears within the first `k` items.
pub fn recall_at_k(ranking: &Ranking, gt: &BTreeMap<u64, u64>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::out_of_range("K", k, ">= 1"));
    }
    let ranks = ranks(ranking, gt)?;
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ndcg5: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

#[derive(Serialize, Deserialize)]
struct MetricsRecord {
    ndcg5: f64,
    #[serde(rename = "recall@1")]
    recall_1: f64,
    #[serde(rename = "recall@5")]
    recall_5: f64,
    #[serde(rename = "recall@10")]
    recall_10: f64,
    n_queries: usize,
}

impl MetricsReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    fn record(&self) -> MetricsRecord {
        MetricsRecord {
            ndcg5: self.ndcg5,
            recall_1: self.recall(1),
            recall_5: self.recall(5),
            recall_10: self.recall(10),
            n_queries: self.n_queries,
        }
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let r = self.record();
        format!(
            "ndcg5={}\nrecall@1={}\nrecall@5={}\nrecall@10={}\nn_queries={}\n",
            r.ndcg5, r.recall_1, r.recall_5, r.recall_10, r.n_queries
        )
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.record()).expect("metrics serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: MetricsRecord = serde_json::from_str(line)?;
        Ok(Self {
            ndcg5: r.ndcg5,
            recall_at: BTreeMap::from([(1, r.recall_1), (5, r.recall_5), (10, r.recall_10)]),
            n_queries: r.n_queries,
        })
    }
}

pub fn evaluate(ranking: &Ranking, gt: &BTreeMap<u64, u64>) -> Result<MetricsReport> {
    let mut recall_at = BTreeMap::new();
    for k in RECALL_CUTOFFS {
        recall_at.insert(k, recall_at_k(ranking, gt, k)?);
    }
    Ok(MetricsReport {
        ndcg5: ndcg5(ranking, gt)?,
        recall_at,
        n_queries: gt.len(),
    })
}

/// Edit distance with unit costs over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − d(a, b) / max(|a|, |b|)`, and 1 for two empty strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Levenshtein similarity of every cleaned URL against every caption.
pub fn rank_by_levenshtein<Q: AsRef<str> + Sync, C: AsRef<str> + Sync>(
    urls: &[Q],
    captions: &[C],
) -> Result<ScoreMatrix> {
    let rows: Vec<Vec<f64>> = urls
        .par_iter()
        .map(|u| {
            captions
                .iter()
                .map(|c| levenshtein_similarity(u.as_ref(), c.as_ref()))
                .collect()
        })
        .collect();
    let scores = if rows.is_empty() {
        Matrix::zeros(0, captions.len())
    } else {
        Matrix::from_rows(&rows)?
    };
    ScoreMatrix::new(scores, Provenance::Levenshtein)
}

/// Cosine of untrained provider vectors.
pub fn rank_by_raw_similarity(queries: &EmbeddingMatrix, captions: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    build_score_matrix(queries, captions)
}
