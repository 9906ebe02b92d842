//! Hinge triplet ranking loss with in-batch hardest negatives.
//!
//! For a square similarity matrix whose diagonal holds the matching pairs,
//! each item `i` pays
//! `[m + max_{j≠i} S[i][j] − S[i][i]]₊ + [m + max_{k≠i} S[k][i] − S[i][i]]₊`
//! and the batch loss is the mean over items.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn triplet_loss(similarity: &Matrix, margin: f64) -> Result<f64> {
    Ok(triplet_loss_with_grad(similarity, margin)?.0)
}

/// Loss and `dL/dS`. Ties among hardest negatives resolve to the lowest index.
pub fn triplet_loss_with_grad(similarity: &Matrix, margin: f64) -> Result<(f64, Matrix)> {
    let b = similarity.rows();
    if similarity.cols() != b {
        return Err(Error::DimensionMismatch {
            context: "triplet loss similarity matrix",
            expected: b,
            actual: similarity.cols(),
        });
    }
    if b < 2 {
        return Err(Error::out_of_range("batch size", b, ">= 2"));
    }
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, b);
    let mut total = 0.0;
    for i in 0..b {
        let positive = similarity.get(i, i);

        let (j, row_max) = hardest((0..b).filter(|&j| j != i).map(|j| (j, similarity.get(i, j))));
        let row_term = margin + row_max - positive;
        if row_term > 0.0 {
            total += row_term;
            grad.set(i, j, grad.get(i, j) + scale);
            grad.set(i, i, grad.get(i, i) - scale);
        }

        let (k, col_max) = hardest((0..b).filter(|&k| k != i).map(|k| (k, similarity.get(k, i))));
        let col_term = margin + col_max - positive;
        if col_term > 0.0 {
            total += col_term;
            grad.set(k, i, grad.get(k, i) + scale);
            grad.set(i, i, grad.get(i, i) - scale);
        }
    }
    Ok((total * scale, grad))
}

fn hardest(candidates: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    candidates.fold((usize::MAX, f64::NEG_INFINITY), |best, (idx, s)| {
        if s > best.1 {
            (idx, s)
        } else {
            best
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn satisfied_margin_costs_nothing() {
        let s = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let (loss, grad) = triplet_loss_with_grad(&s, 0.2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_item_hand_computed() {
        let s = m(&[&[0.5, 0.6], &[0.4, 0.7]]);
        let loss = triplet_loss(&s, 0.2).unwrap();
        assert!((loss - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_with_dominant_diagonal() {
        let s = m(&[&[0.9, 0.1], &[0.3, 0.8]]);
        assert_eq!(triplet_loss(&s, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_tiny_or_ragged_batches() {
        assert!(triplet_loss(&m(&[&[1.0]]), 0.2).is_err());
        assert!(triplet_loss(&Matrix::zeros(2, 3), 0.2).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference_away_from_kinks() {
        let s = m(&[&[0.3, 0.5, -0.1], &[0.2, 0.1, 0.45], &[0.0, 0.35, 0.6]]);
        let (_, grad) = triplet_loss_with_grad(&s, 0.2).unwrap();
        let h = 1e-7;
        for r in 0..3 {
            for c in 0..3 {
                let mut p = s.clone();
                p.set(r, c, s.get(r, c) + h);
                let mut n = s.clone();
                n.set(r, c, s.get(r, c) - h);
                let fd = (triplet_loss(&p, 0.2).unwrap() - triplet_loss(&n, 0.2).unwrap()) / (2.0 * h);
                assert!((fd - grad.get(r, c)).abs() < 1e-6, "({r},{c})");
            }
        }
    }
}
