//! Exhaustive cosine scoring of every query against every caption, and
//! top-K candidate extraction.
//!
//! Scores are computed per pair with a fixed summation order, so blocking
//! and thread count never change a single bit of the output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Reader, Writer};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};

pub const DEFAULT_BLOCK: usize = 256;
pub const SCORE_MAGIC: &[u8; 4] = b"SCM1";
const COSINE_SLACK: f64 = 1e-9;

/// Which method produced a score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    McProp,
    Levenshtein,
    External,
    Rerank,
    /// Cosine on provider vectors without any trained projection.
    Raw,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Self::McProp => "mcprop",
            Self::Levenshtein => "levenshtein",
            Self::External => "external",
            Self::Rerank => "rerank",
            Self::Raw => "raw",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "mcprop" => Self::McProp,
            "levenshtein" => Self::Levenshtein,
            "external" => Self::External,
            "rerank" => Self::Rerank,
            "raw" => Self::Raw,
            other => return Err(Error::InvalidData(format!("unknown provenance tag {other:?}"))),
        })
    }

    fn is_cosine(self) -> bool {
        matches!(self, Self::McProp | Self::Raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Matrix,
    provenance: Provenance,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, provenance: Provenance) -> Result<Self> {
        if let Some(pos) = scores.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score matrix entry {pos}")));
        }
        if provenance.is_cosine()
            && scores
                .data()
                .iter()
                .any(|v| v.abs() > 1.0 + COSINE_SLACK)
        {
            return Err(Error::InvalidData("cosine score outside [-1, 1]".into()));
        }
        Ok(Self { scores, provenance })
    }

    pub fn n_queries(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_captions(&self) -> usize {
        self.scores.cols()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn get(&self, q: usize, c: usize) -> f64 {
        self.scores.get(q, c)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.raw(SCORE_MAGIC);
        w.u32(self.n_queries())?;
        w.u32(self.n_captions())?;
        let tag = self.provenance.tag().as_bytes();
        w.u8(tag.len() as u8);
        w.raw(tag);
        w.f64s(self.scores.data());
        Ok(w.bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, SCORE_MAGIC)?;
        let n_q = r.u32()?;
        let n_c = r.u32()?;
        let tag_len = r.u8()? as usize;
        let tag = std::str::from_utf8(r.bytes(tag_len)?)
            .map_err(|_| Error::InvalidData("provenance tag is not UTF-8".into()))?;
        let provenance = Provenance::from_tag(tag)?;
        let count = n_q
            .checked_mul(n_c)
            .ok_or_else(|| Error::DimensionOverflow(format!("{n_q} x {n_c} scores")))?;
        let data = r.f64s(count)?;
        r.finish()?;
        Self::new(Matrix::from_vec(n_q, n_c, data)?, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Cosine similarity of every row of `queries` against every row of `captions`.
pub fn build_score_matrix(queries: &EmbeddingMatrix, captions: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    let q = Matrix::from_vec(
        queries.rows(),
        queries.dim(),
        queries.data().iter().map(|&v| f64::from(v)).collect(),
    )?;
    let c = Matrix::from_vec(
        captions.rows(),
        captions.dim(),
        captions.data().iter().map(|&v| f64::from(v)).collect(),
    )?;
    cosine_scores(&q, &c, DEFAULT_BLOCK, Provenance::Raw)
}

/// Blocked cosine kernel; row blocks run in parallel.
pub fn cosine_scores(queries: &Matrix, captions: &Matrix, block: usize, provenance: Provenance) -> Result<ScoreMatrix> {
    if queries.cols() != captions.cols() {
        return Err(Error::DimensionMismatch {
            context: "score matrix operand width",
            expected: queries.cols(),
            actual: captions.cols(),
        });
    }
    let block = block.max(1);
    let q = unit_rows(queries, "query row")?;
    let c = unit_rows(captions, "caption row")?;
    let n_c = c.rows();
    let mut out = Matrix::zeros(q.rows(), n_c);
    if n_c > 0 {
        out.data_mut()
            .par_chunks_mut(block * n_c)
            .enumerate()
            .for_each(|(b, chunk)| {
                let first = b * block;
                let rows = chunk.len() / n_c;
                for col_start in (0..n_c).step_by(block) {
                    let col_end = (col_start + block).min(n_c);
                    for r in 0..rows {
                        let qr = q.row(first + r);
                        let out_row = &mut chunk[r * n_c..(r + 1) * n_c];
                        for j in col_start..col_end {
                            out_row[j] = dot(qr, c.row(j));
                        }
                    }
                }
            });
    }
    ScoreMatrix::new(out, provenance)
}

fn unit_rows(m: &Matrix, what: &'static str) -> Result<Matrix> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let (u, _) = normalized(m.row(i), what)?;
        out.row_mut(i).copy_from_slice(&u);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub caption_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: u64,
    pub items: Vec<Scored>,
}

/// Ordered caption lists, one per query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking {
    pub lists: Vec<RankedList>,
}

/// Top-K output of a first-stage ranker: the input to re-ranking.
pub type CandidateSet = Ranking;

impl Ranking {
    pub fn n_queries(&self) -> usize {
        self.lists.len()
    }

    pub fn total_items(&self) -> usize {
        self.lists.iter().map(|l| l.items.len()).sum()
    }

    /// Replaces positional ids with real ones: query `i` → `query_ids[i]`.
    pub fn relabel(mut self, query_ids: &[u64], caption_ids: &[u64]) -> Result<Self> {
        for list in &mut self.lists {
            list.query_id = *query_ids
                .get(list.query_id as usize)
                .ok_or(Error::UnknownId {
                    kind: "query position",
                    id: list.query_id,
                })?;
            for item in &mut list.items {
                item.caption_id = *caption_ids
                    .get(item.caption_id as usize)
                    .ok_or(Error::UnknownId {
                        kind: "caption position",
                        id: item.caption_id,
                    })?;
            }
        }
        Ok(self)
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            lists: self
                .lists
                .iter()
                .map(|l| RankedList {
                    query_id: l.query_id,
                    items: l.items.iter().take(n).copied().collect(),
                })
                .collect(),
        }
    }

    pub fn by_query(&self) -> HashMap<u64, &RankedList> {
        self.lists.iter().map(|l| (l.query_id, l)).collect()
    }

    /// `query_id<TAB>caption_id<TAB>rank<TAB>score`, ranks from 1.
    pub fn to_candidate_tsv(&self) -> String {
        let mut out = String::from("query_id\tcaption_id\trank\tscore\n");
        for l in &self.lists {
            for (r, item) in l.items.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", l.query_id, item.caption_id, r + 1, item.score);
            }
        }
        out
    }

    /// `query_id<TAB>rank<TAB>caption_id<TAB>probability`, ranks from 1.
    pub fn to_ranking_tsv(&self) -> String {
        let mut out = String::from("query_id\trank\tcaption_id\tprobability\n");
        for l in &self.lists {
            for (r, item) in l.items.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", l.query_id, r + 1, item.caption_id, item.score);
            }
        }
        out
    }

    pub fn from_candidate_tsv(text: &str) -> Result<Self> {
        parse_ranked_tsv(text, "query_id\tcaption_id\trank\tscore", [0, 2, 1, 3])
    }

    pub fn from_ranking_tsv(text: &str) -> Result<Self> {
        parse_ranked_tsv(text, "query_id\trank\tcaption_id\tprobability", [0, 1, 2, 3])
    }
}

/// `cols` gives the field index of (query, rank, caption, score).
fn parse_ranked_tsv(text: &str, header: &str, cols: [usize; 4]) -> Result<Ranking> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == header => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {header:?}"),
            })
        }
    }
    let mut lists: Vec<RankedList> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what}"),
        };
        let query_id: u64 = fields[cols[0]].parse().map_err(|_| bad("query id"))?;
        let rank: usize = fields[cols[1]].parse().map_err(|_| bad("rank"))?;
        let caption_id: u64 = fields[cols[2]].parse().map_err(|_| bad("caption id"))?;
        let score: f64 = fields[cols[3]].parse().map_err(|_| bad("score"))?;
        if lists.last().map(|l| l.query_id) != Some(query_id) {
            lists.push(RankedList {
                query_id,
                items: Vec::new(),
            });
        }
        let list = lists.last_mut().expect("just pushed");
        if rank != list.items.len() + 1 {
            return Err(bad("rank sequence"));
        }
        list.items.push(Scored { caption_id, score });
    }
    Ok(Ranking { lists })
}

/// The `k` best captions per query, best first; equal scores favor the
/// lower caption index. Ids in the result are positions.
pub fn top_k(scores: &ScoreMatrix, k: usize) -> Result<CandidateSet> {
    let n_c = scores.n_captions();
    if k == 0 || k > n_c {
        return Err(Error::out_of_range("k", k, format!("1..={n_c}")));
    }
    let lists = (0..scores.n_queries())
        .into_par_iter()
        .map(|q| {
            let row = scores.scores.row(q);
            RankedList {
                query_id: q as u64,
                items: top_k_row(row, k)
                    .into_iter()
                    .map(|c| Scored {
                        caption_id: c as u64,
                        score: row[c],
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Ranking { lists })
}

/// Partial selection of the `k` best indices of one row.
pub fn top_k_row(row: &[f64], k: usize) -> Vec<usize> {
    let order = |a: &usize, b: &usize| {
        row[*b]
            .partial_cmp(&row[*a])
            .expect("scores are finite")
            .then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}
