//! Exhaustive cosine search with top-k selection, comparing block sizes.

use std::time::Instant;

use capmatch::linalg::Matrix;
use capmatch::retrieval::{cosine_scores, top_k, Provenance};
use rand::{Rng, SeedableRng};

fn main() -> capmatch::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (n_q, n_c, dim) = (500, 4000, 64);
    let mut random = |rows: usize| {
        Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let queries = random(n_q)?;
    let captions = random(n_c)?;

    let mut reference = None;
    for block in [8, 64, 256] {
        let start = Instant::now();
        let s = cosine_scores(&queries, &captions, block, Provenance::Raw)?;
        println!("block {block:4}: {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
        match &reference {
            None => reference = Some(s),
            Some(r) => assert_eq!(r.scores().data(), s.scores().data(), "block size changed the scores"),
        }
    }
    let scores = reference.expect("ran at least once");
    let top = top_k(&scores, 5)?;
    for list in top.lists.iter().take(3) {
        let items: Vec<String> = list.items.iter().map(|s| format!("{}:{:.3}", s.caption_id, s.score)).collect();
        println!("query {}: {}", list.query_id, items.join("  "));
    }
    Ok(())
}
