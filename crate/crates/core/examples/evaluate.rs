//! Ranking metrics and the edit-distance baseline on a planted corpus.

use capmatch::eval::{evaluate, levenshtein, rank_by_levenshtein};
use capmatch::retrieval::top_k;
use capmatch::synthetic::{planted_corpus, SyntheticConfig};

fn main() -> capmatch::Result<()> {
    for (a, b) in [("kitten", "sitting"), ("Tower Bridge", "Tower Bridge, London"), ("", "abc")] {
        println!("lev({a:?}, {b:?}) = {}", levenshtein(a, b));
    }

    let corpus = planted_corpus(&SyntheticConfig { n_pairs: 300, ..SyntheticConfig::small(2) })?;
    let d = &corpus.dataset;
    let urls: Vec<&str> = d.queries().iter().map(|q| q.cleaned_url.as_str()).collect();
    let captions: Vec<&str> = d.captions().iter().map(|c| c.text.as_str()).collect();
    let ranking = top_k(&rank_by_levenshtein(&urls, &captions)?, 10)?.relabel(&d.query_ids(), &d.caption_ids())?;
    let report = evaluate(&ranking, d.ground_truth().expect("planted"))?;
    println!("\nlevenshtein baseline over {} queries:\n{}", d.queries().len(), report.to_key_values());
    Ok(())
}
