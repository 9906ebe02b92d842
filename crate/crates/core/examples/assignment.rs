//! One-to-one caption assignment, and repeated rounds for a top-k list.

use capmatch::assign::{bijective_top_k, linear_sum_assignment, MaskMode};
use capmatch::linalg::Matrix;

fn main() -> capmatch::Result<()> {
    // Greedy picks column 0 for both rows; the optimum splits them.
    let s = Matrix::from_rows(&[[0.9, 0.8, 0.1], [0.85, 0.2, 0.3]])?;
    let a = linear_sum_assignment(&s)?;
    println!("assignment {:?}, total {:.2}", a.caption_indices, a.total);

    for mask in [MaskMode::NegInf, MaskMode::Zero] {
        let out = bijective_top_k(&s, 3, mask)?;
        println!("{mask}:");
        for (q, row) in out.indices.iter().enumerate() {
            println!("  query {q}: {row:?}");
        }
    }

    let neg = Matrix::from_rows(&[[-0.5, -2.0], [-1.0, -3.0]])?;
    let zero = bijective_top_k(&neg, 2, MaskMode::Zero)?;
    println!("zero mask on negative scores can repeat a caption: {:?}", zero.indices);
    Ok(())
}
