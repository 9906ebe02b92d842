//! Trains the hashed pair scorer and reranks a candidate list.

use capmatch::data::{sample_nonmatching_pairs, split_dataset};
use capmatch::rerank::{rerank_candidates, train_pair_scorer, CountingScorer, PairFeatureConfig, ScorerTrainConfig};
use capmatch::retrieval::{RankedList, Ranking, Scored};
use capmatch::synthetic::{planted_corpus, SyntheticConfig};

fn main() -> capmatch::Result<()> {
    let corpus = planted_corpus(&SyntheticConfig::small(3))?;
    let (train, val) = split_dataset(&corpus.dataset, 100, 3)?;
    let pairs = sample_nonmatching_pairs(&train, 1.0, 3)?;
    let scorer = train_pair_scorer(&pairs, &train, PairFeatureConfig::default(), &ScorerTrainConfig::default())?;

    // Candidate lists with the true caption buried last.
    let gt = val.ground_truth().expect("planted corpus has ground truth");
    let ids = val.caption_ids();
    let lists = val
        .queries()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut items: Vec<Scored> = (1..)
                .map(|j| ids[(i * 7 + j) % ids.len()])
                .filter(|c| *c != gt[&q.id])
                .take(9)
                .map(|caption_id| Scored { caption_id, score: 0.0 })
                .collect();
            items.push(Scored { caption_id: gt[&q.id], score: 0.0 });
            RankedList { query_id: q.id, items }
        })
        .collect();
    let candidates = Ranking { lists };

    let counting = CountingScorer::new(&scorer);
    let reranked = rerank_candidates(&candidates, &counting, &val, 10)?;
    let top1 = reranked
        .lists
        .iter()
        .filter(|l| l.items[0].caption_id == gt[&l.query_id])
        .count();
    println!("true caption ranked first for {top1}/{} queries", reranked.lists.len());
    println!("scorer calls: {}", counting.calls());
    let first = &reranked.lists[0];
    let q = val.query(first.query_id).expect("known query");
    println!("\nurl: {}", q.cleaned_url);
    for s in first.items.iter().take(3) {
        println!("  {:.3}  {}", s.score, val.caption(s.caption_id).expect("known caption").text);
    }
    Ok(())
}
