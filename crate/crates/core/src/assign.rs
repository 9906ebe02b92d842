//! Bijective caption assignment: exact maximum-weight linear sum assignment
//! and the repeated-assignment procedure that yields k captions per query.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::retrieval::{RankedList, Ranking, Scored};

/// Marks a cell that no assignment may use.
pub const EXCLUDED: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub query_indices: Vec<usize>,
    pub caption_indices: Vec<usize>,
    /// Sum of the selected scores.
    pub total: f64,
}

/// Maximizes `Σ S[i][σ(i)]` over injective `σ` for an `n x m` matrix, `n <= m`.
///
/// Shortest augmenting paths with dual potentials on the negated scores,
/// `O(n² m)`. Cells equal to [`EXCLUDED`] are never selected.
pub fn linear_sum_assignment(scores: &Matrix) -> Result<AssignmentResult> {
    let n = scores.rows();
    let m = scores.cols();
    if n > m {
        return Err(Error::out_of_range("assignment rows", n, format!("<= {m} columns")));
    }
    if let Some(pos) = scores
        .data()
        .iter()
        .position(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(Error::NonFinite(format!("assignment score entry {pos}")));
    }
    if n == 0 {
        return Ok(AssignmentResult {
            query_indices: Vec::new(),
            caption_indices: Vec::new(),
            total: 0.0,
        });
    }

    let inf = f64::INFINITY;
    let cost = |i: usize, j: usize| -> f64 {
        let s = scores.get(i, j);
        if s == EXCLUDED {
            inf
        } else {
            -s
        }
    };
    // 1-based; column 0 is the virtual root of each search
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let c = cost(i0 - 1, j - 1);
                if c < inf {
                    let reduced = c - u[i0] - v[j];
                    if reduced < minv[j] {
                        minv[j] = reduced;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if delta == inf {
                return Err(Error::Infeasible(format!(
                    "row {} cannot reach a free column",
                    row - 1
                )));
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut caption_indices = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            caption_indices[owner[j] - 1] = j - 1;
        }
    }
    let total = caption_indices
        .iter()
        .enumerate()
        .map(|(i, &c)| scores.get(i, c))
        .sum();
    Ok(AssignmentResult {
        query_indices: (0..n).collect(),
        caption_indices,
        total,
    })
}

/// How assigned cells are removed before the next round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Replace with [`EXCLUDED`] so the cell can never be chosen again.
    #[default]
    NegInf,
    /// Overwrite with 0.0; a zeroed cell can win again when alternatives are negative.
    Zero,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neginf" => Ok(Self::NegInf),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!(
                "unknown mask mode `{other}` (expected neginf or zero)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NegInf => "neginf",
            Self::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKAssignment {
    /// `indices[q][t]` is the caption given to query `q` in round `t`.
    pub indices: Vec<Vec<usize>>,
    pub rounds: Vec<AssignmentResult>,
}

impl TopKAssignment {
    /// Ranked lists in round order, scored with the original matrix.
    pub fn to_ranking(&self, scores: &Matrix, query_ids: &[u64], caption_ids: &[u64]) -> Ranking {
        Ranking {
            lists: self
                .indices
                .iter()
                .enumerate()
                .map(|(q, row)| RankedList {
                    query_id: query_ids[q],
                    items: row
                        .iter()
                        .map(|&c| Scored {
                            caption_id: caption_ids[c],
                            score: scores.get(q, c),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Runs `k` assignment rounds, masking the cells chosen in each round.
pub fn bijective_top_k(scores: &Matrix, k: usize, mask: MaskMode) -> Result<TopKAssignment> {
    let n = scores.rows();
    let m = scores.cols();
    if k == 0 || k > m {
        return Err(Error::out_of_range("k", k, format!("1..={m}")));
    }
    if let Some(pos) = scores.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("assignment score entry {pos}")));
    }
    let mut working = scores.clone();
    let mut indices = vec![Vec::with_capacity(k); n];
    let mut rounds = Vec::with_capacity(k);
    for round in 0..k {
        let result = linear_sum_assignment(&working).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!("round {}: {msg}", round + 1)),
            other => other,
        })?;
        for (&q, &c) in result.query_indices.iter().zip(&result.caption_indices) {
            indices[q].push(c);
            working.set(
                q,
                c,
                match mask {
                    MaskMode::NegInf => EXCLUDED,
                    MaskMode::Zero => 0.0,
                },
            );
        }
        // report totals against the original scores
        let total = result
            .query_indices
            .iter()
            .zip(&result.caption_indices)
            .map(|(&q, &c)| scores.get(q, c))
            .sum();
        rounds.push(AssignmentResult { total, ..result });
    }
    Ok(TopKAssignment { indices, rounds })
}
