mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use capmatch::assign::{linear_sum_assignment, bijective_top_k, MaskMode};
use capmatch::data::{clean_url, sample_nonmatching_pairs, split_dataset, CaptionRecord, Dataset, Label, QueryRecord};
use capmatch::embed::{embeddings_from_bytes, embeddings_to_bytes, encode_text_hashed, EmbeddingMatrix, HashedEncoderConfig};
use capmatch::eval::{levenshtein, ndcg5, recall_at_k};
use capmatch::linalg::Matrix;
use capmatch::mcprop::{fuse_attentive, FusionParams};
use capmatch::rerank::{rerank_candidates, PairScorer};
use capmatch::retrieval::{cosine_scores, top_k, top_k_row, Provenance, RankedList, Ranking, ScoreMatrix, Scored};
use capmatch::Result;

fn dataset(n_pairs: usize, extra_captions: usize) -> Dataset {
    let queries = (0..n_pairs as u64)
        .map(|i| QueryRecord {
            id: i + 1,
            raw_url: format!("http://x/{i}.jpg"),
            cleaned_url: format!("url {i}"),
            image_embedding_ref: Some(i as usize),
            language: None,
        })
        .collect();
    let captions = (0..(n_pairs + extra_captions) as u64)
        .map(|i| CaptionRecord {
            id: 1000 + i,
            text: format!("caption {i}"),
            language: None,
        })
        .collect();
    let gt = (0..n_pairs as u64).map(|i| (i + 1, 1000 + i)).collect();
    Dataset::new(queries, captions, Some(gt)).unwrap()
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

/// Rows with `rows <= cols`.
fn wide_matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max).prop_flat_map(move |r| {
        (r..=max).prop_flat_map(move |c| {
            prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    })
}

struct Quantized;

impl PairScorer for Quantized {
    fn score(&self, q: &QueryRecord, c: &CaptionRecord) -> Result<f64> {
        // few distinct values, so ties are common
        Ok(((q.id * 7 + c.id * 13) % 4) as f64 / 3.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clean_url_is_idempotent(
        dir in "[a-z]{1,8}",
        stem in "[A-Za-z0-9_ ()]{1,20}",
        ext in prop::option::of("[a-z]{1,5}"),
    ) {
        let raw = match &ext {
            Some(e) => format!("https://h/{dir}/{stem}.{e}"),
            None => format!("https://h/{dir}/{stem}"),
        };
        if let Ok(once) = clean_url(&raw) {
            prop_assert_eq!(clean_url(&once).unwrap(), once.clone());
            prop_assert!(!once.contains('_'));
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions(n in 3usize..40, extra in 0usize..5, seed in any::<u64>(), frac in 0.05f64..0.95) {
        let d = dataset(n, extra);
        let holdout = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let (a_train, a_val) = split_dataset(&d, holdout, seed).unwrap();
        let (b_train, b_val) = split_dataset(&d, holdout, seed).unwrap();
        prop_assert_eq!(a_train.queries(), b_train.queries());
        prop_assert_eq!(a_val.captions(), b_val.captions());
        prop_assert_eq!(a_val.queries().len(), holdout);
        prop_assert_eq!(a_train.queries().len() + a_val.queries().len(), n);
        let train_ids: HashSet<u64> = a_train.query_ids().into_iter().collect();
        prop_assert!(a_val.query_ids().iter().all(|q| !train_ids.contains(q)));
    }

    #[test]
    fn sampled_negatives_never_match(n in 2usize..30, extra in 0usize..4, ratio in 0.1f64..3.0, seed in any::<u64>()) {
        let d = dataset(n, extra);
        let gt = d.ground_truth().unwrap().clone();
        match sample_nonmatching_pairs(&d, ratio, seed) {
            Ok(pairs) => {
                let negatives: Vec<_> = pairs.iter().filter(|p| p.label == Label::NonMatch).collect();
                prop_assert_eq!(negatives.len(), (ratio * n as f64).ceil() as usize);
                let unique: HashSet<_> = negatives.iter().map(|p| (p.query_id, p.caption_id)).collect();
                prop_assert_eq!(unique.len(), negatives.len());
                for p in &pairs {
                    prop_assert_eq!(p.label == Label::Match, gt[&p.query_id] == p.caption_id);
                }
            }
            Err(_) => prop_assert!((ratio * n as f64).ceil() as usize > n * (n + extra - 1)),
        }
    }

    #[test]
    fn hashed_encoding_is_order_and_thread_independent(texts in prop::collection::vec("[a-z ]{1,30}", 1..8)) {
        let config = HashedEncoderConfig::default();
        let texts: Vec<String> = texts.into_iter().filter(|t| !t.trim().is_empty()).collect();
        let forward: Vec<_> = texts.iter().map(|t| encode_text_hashed(t, &config).unwrap()).collect();
        let backward: Vec<_> = texts.iter().rev().map(|t| encode_text_hashed(t, &config).unwrap()).collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded: Vec<_> = pool.install(|| {
            use rayon::prelude::*;
            texts.par_iter().map(|t| encode_text_hashed(t, &config).unwrap()).collect()
        });
        let mut reversed = backward;
        reversed.reverse();
        prop_assert_eq!(&forward, &reversed);
        prop_assert_eq!(&forward, &threaded);
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,8}", b in "[abc]{0,8}", c in "[abc]{0,8}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn top_k_is_a_prefix_of_top_k_plus_one(row in prop::collection::vec(-3i32..3, 2..30), k in 1usize..29) {
        let row: Vec<f64> = row.into_iter().map(f64::from).collect();
        let k = k.min(row.len() - 1);
        let small = top_k_row(&row, k);
        let large = top_k_row(&row, k + 1);
        prop_assert_eq!(&small[..], &large[..k]);
        let full = top_k_row(&row, row.len());
        for w in full.windows(2) {
            prop_assert!(row[w[0]] > row[w[1]] || (row[w[0]] == row[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn recall_grows_with_k(ranks in prop::collection::vec(0usize..=12, 1..30)) {
        let (ranking, gt) = common::ranking_with_ranks(&ranks, 12);
        let mut last = 0.0;
        for k in 1..=12 {
            let r = recall_at_k(&ranking, &gt, k).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn ndcg_per_query_takes_allowed_values(rank in 0usize..=9) {
        let (ranking, gt) = common::ranking_with_ranks(&[rank], 9);
        let v = ndcg5(&ranking, &gt).unwrap();
        let allowed = [1.0, 0.630_929_753_571_457_4, 0.5, 0.430_676_558_073_393, 0.386_852_807_234_541_6, 0.0];
        prop_assert!(allowed.iter().any(|a| (a - v).abs() < 1e-12));
    }

    #[test]
    fn cosine_is_invariant_to_blocks_and_threads(q in matrix(9, 6), block in 1usize..10, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = Matrix::from_vec(7, q.cols(), (0..7 * q.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (Ok(reference), Ok(blocked)) = (
            cosine_scores(&q, &c, 64, Provenance::Raw),
            rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap()
                .install(|| cosine_scores(&q, &c, block, Provenance::Raw)),
        ) else {
            // zero rows are rejected either way
            return Ok(());
        };
        prop_assert_eq!(reference.scores().data(), blocked.scores().data());
        for v in reference.scores().data() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
        }
    }

    #[test]
    fn assignment_is_optimal(s in wide_matrix(6)) {
        let got = linear_sum_assignment(&s).unwrap();
        let best = common::brute_force_max(&s, &[]).unwrap();
        prop_assert!((got.total - best).abs() < 1e-9);
        let used: HashSet<_> = got.caption_indices.iter().collect();
        prop_assert_eq!(used.len(), s.rows());
    }

    #[test]
    fn assignment_is_row_permutation_equivariant(s in wide_matrix(6), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut perm: Vec<usize> = (0..s.rows()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let rows: Vec<Vec<f64>> = perm.iter().map(|&r| s.row(r).to_vec()).collect();
        let permuted = Matrix::from_rows(&rows).unwrap();
        let a = linear_sum_assignment(&s).unwrap();
        let b = linear_sum_assignment(&permuted).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-9);
    }

    #[test]
    fn neginf_rounds_never_reuse_cells(s in wide_matrix(6), k in 1usize..6) {
        let k = k.min(s.cols());
        // later rounds can run out of perfect matchings; that must be reported, not papered over
        let out = match bijective_top_k(&s, k, MaskMode::NegInf) {
            Ok(out) => out,
            Err(capmatch::Error::Infeasible(_)) => {
                prop_assert!(k > 1);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for row in &out.indices {
            let unique: HashSet<_> = row.iter().collect();
            prop_assert_eq!(unique.len(), k);
        }
        for round in &out.rounds {
            let unique: HashSet<_> = round.caption_indices.iter().collect();
            prop_assert_eq!(unique.len(), s.rows());
        }
    }

    #[test]
    fn fusion_reconstructs_and_ignores_u_scale(
        seed in any::<u64>(),
        u in prop::collection::vec(-3.0f64..3.0, 4),
        v in prop::collection::vec(-3.0f64..3.0, 4),
        scale in 0.1f64..10.0,
    ) {
        use rand::SeedableRng;
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let params = FusionParams::init(4, 4, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let f = fuse_attentive(&u, &v, &params).unwrap();
        prop_assert!(f.alpha_u > 0.0 && f.alpha_u < 1.0 && f.alpha_v > 0.0 && f.alpha_v < 1.0);
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in 0..4 {
            prop_assert!((f.q[k] - (f.alpha_u * u[k] / nu + f.alpha_v * v[k] / nv)).abs() < 1e-12);
        }
        // the unit direction of u does not change with its scale, only the weights may
        let scaled: Vec<f64> = u.iter().map(|x| x * scale).collect();
        let g = fuse_attentive(&scaled, &v, &params).unwrap();
        for k in 0..4 {
            let recon = g.alpha_u * u[k] / nu + g.alpha_v * v[k] / nv;
            prop_assert!((g.q[k] - recon).abs() < 1e-12);
        }
    }

    #[test]
    fn rerank_is_stable_and_bounded(n_q in 1usize..5, n_c in 2usize..20, k in 1usize..20, seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let k = k.min(n_c);
        let d = dataset(n_q.min(n_c), n_c - n_q.min(n_c));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let caption_ids = d.caption_ids();
        let lists = d.query_ids().into_iter().map(|query_id| {
            let mut ids = caption_ids.clone();
            ids.shuffle(&mut rng);
            RankedList { query_id, items: ids[..k].iter().map(|&caption_id| Scored { caption_id, score: 0.0 }).collect() }
        }).collect();
        let candidates = Ranking { lists };
        let out = rerank_candidates(&candidates, &Quantized, &d, k).unwrap();
        for (before, after) in candidates.lists.iter().zip(&out.lists) {
            let pos: BTreeMap<u64, usize> = before.items.iter().enumerate().map(|(i, s)| (s.caption_id, i)).collect();
            for w in after.items.windows(2) {
                prop_assert!((0.0..=1.0).contains(&w[0].score));
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && pos[&w[0].caption_id] < pos[&w[1].caption_id]));
            }
        }
    }

    #[test]
    fn emb1_round_trip(rows in 0usize..10, dim in 1usize..16, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..rows * dim).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
        let m = EmbeddingMatrix::new(rows, dim, data, false).unwrap();
        let bytes = embeddings_to_bytes(&m).unwrap();
        let back = embeddings_from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.data(), m.data());
        prop_assert_eq!(embeddings_to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn top_k_rejects_bad_k() {
    let s = ScoreMatrix::new(Matrix::from_rows(&[[0.1, 0.2]]).unwrap(), Provenance::Raw).unwrap();
    assert!(top_k(&s, 0).is_err());
    assert!(top_k(&s, 3).is_err());
    assert_eq!(top_k(&s, 2).unwrap().lists[0].items[0].caption_id, 1);
}
