//! Reference implementations used as test oracles. They share no code with
//! the library beyond its public data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use capmatch::linalg::Matrix;
use capmatch::mcprop::{Batch, Linear, McPropModel, QueryFusion};
use capmatch::retrieval::{RankedList, Ranking, Scored};

/// Hand-computed DCG values for a single relevant item at rank `r`.
pub fn dcg_single(rank: usize) -> f64 {
    match rank {
        1 => 1.0,
        2 => 0.630_929_753_571_457_4,
        3 => 0.5,
        4 => 0.430_676_558_073_393,
        5 => 0.386_852_807_234_541_6,
        _ => 0.0,
    }
}

/// Ranking where query `q` has its correct caption at `ranks[q]` (0 = absent).
pub fn ranking_with_ranks(ranks: &[usize], depth: usize) -> (Ranking, BTreeMap<u64, u64>) {
    let mut lists = Vec::new();
    let mut gt = BTreeMap::new();
    for (q, &r) in ranks.iter().enumerate() {
        let q = q as u64;
        let truth = 10_000 + q;
        gt.insert(q, truth);
        let items = (1..=depth)
            .map(|pos| Scored {
                caption_id: if pos == r { truth } else { 50_000 + q * 1000 + pos as u64 },
                score: -(pos as f64),
            })
            .collect();
        lists.push(RankedList { query_id: q, items });
    }
    (Ranking { lists }, gt)
}

/// Recall@K by counting.
pub fn recall_count(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r >= 1 && r <= k).count() as f64 / ranks.len() as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Maximum total over injective row → column maps (rows ≤ cols), skipping
/// maps that touch a cell in `forbidden`. `None` when no map is allowed.
pub fn brute_force_max(s: &Matrix, forbidden: &[(usize, usize)]) -> Option<f64> {
    let (n, m) = (s.rows(), s.cols());
    assert!(n <= m);
    let mut cols: Vec<usize> = (0..m).collect();
    let mut best: Option<f64> = None;
    loop {
        // Only the first n entries matter; skip duplicates of the tail order.
        let tail_sorted = cols[n..].windows(2).all(|w| w[0] < w[1]);
        if tail_sorted {
            let allowed = (0..n).all(|r| !forbidden.contains(&(r, cols[r])));
            if allowed {
                let total: f64 = (0..n).map(|r| s.get(r, cols[r])).sum();
                best = Some(best.map_or(total, |b: f64| b.max(total)));
            }
        }
        if !next_permutation(&mut cols) {
            break;
        }
    }
    best
}

fn forward(layers: &[Linear], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in layers.iter().enumerate() {
        let mut out = vec![0.0; l.out_dim];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = l.bias[o];
            for k in 0..l.in_dim {
                acc += l.weight[o * l.in_dim + k] * h[k];
            }
            *slot = if i + 1 < layers.len() { acc.tanh() } else { acc };
        }
        h = out;
    }
    h
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fused query straight from the parameter arrays.
pub fn query_oracle(model: &McPropModel, url: &[f64], image: &[f64]) -> Vec<f64> {
    let u = forward(&model.url_head.layers, url);
    let v = forward(&model.image_head.layers, image);
    let joined: Vec<f64> = u.iter().chain(&v).copied().collect();
    match &model.fusion {
        QueryFusion::Attentive(p) => {
            let logits = forward(&p.mlp.layers, &joined);
            let (au, av) = (logistic(logits[0]), logistic(logits[1]));
            let (uu, vu) = (unit(&u), unit(&v));
            uu.iter().zip(&vu).map(|(a, b)| au * a + av * b).collect()
        }
        QueryFusion::Concat(h) => forward(&h.layers, &joined),
    }
}

/// Cosine similarity matrix of a batch, recomputed from parameters.
pub fn similarity_oracle(model: &McPropModel, batch: &Batch) -> Vec<Vec<f64>> {
    let b = batch.urls.rows();
    let q: Vec<Vec<f64>> = (0..b)
        .map(|i| unit(&query_oracle(model, batch.urls.row(i), batch.images.row(i))))
        .collect();
    let c: Vec<Vec<f64>> = (0..b)
        .map(|i| unit(&forward(&model.caption_head.layers, batch.captions.row(i))))
        .collect();
    q.iter()
        .map(|qi| c.iter().map(|cj| qi.iter().zip(cj).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

/// Batch triplet loss and the smallest distance of any hinge argument or
/// hardest-negative choice from a kink.
pub fn loss_oracle(model: &McPropModel, batch: &Batch, margin: f64) -> (f64, f64) {
    let s = similarity_oracle(model, batch);
    let b = s.len();
    let mut total = 0.0;
    let mut gap = f64::INFINITY;
    for i in 0..b {
        for line in [
            (0..b).filter(|&j| j != i).map(|j| s[i][j]).collect::<Vec<_>>(),
            (0..b).filter(|&k| k != i).map(|k| s[k][i]).collect::<Vec<_>>(),
        ] {
            let mut sorted = line.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted.len() > 1 {
                gap = gap.min(sorted[0] - sorted[1]);
            }
            let arg = margin + sorted[0] - s[i][i];
            gap = gap.min(arg.abs());
            total += arg.max(0.0);
        }
    }
    (total / b as f64, gap)
}

/// Central differences of [`loss_oracle`] for every parameter, tensor by tensor.
pub fn numeric_gradient(model: &McPropModel, batch: &Batch, margin: f64, h: f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(sizes.len());
    for (t, &len) in sizes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, slot) in g.iter_mut().enumerate() {
            let original = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = original + h;
            let plus = loss_oracle(&probe, batch, margin).0;
            probe.tensors_mut()[t][k] = original - h;
            let minus = loss_oracle(&probe, batch, margin).0;
            probe.tensors_mut()[t][k] = original;
            *slot = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest per-tensor relative error ‖a − n‖ / max(‖a‖, ‖n‖).
pub fn max_relative_error(analytic: &McPropModel, numeric: &[Vec<f64>]) -> f64 {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .map(|((_, a), n)| {
            let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
            if scale < 1e-12 {
                diff
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}

/// A random small model and batch whose loss is positive and away from
/// every kink, so central differences are meaningful.
pub fn smooth_gradient_case(seed: u64) -> (McPropModel, Batch, f64) {
    use capmatch::mcprop::{FusionMode, ModelShape};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let shape = ModelShape {
            url_dim: rng.gen_range(2..=6),
            image_dim: rng.gen_range(2..=5),
            caption_dim: rng.gen_range(2..=6),
            hidden_dim: rng.gen_range(2..=6),
            common_dim: rng.gen_range(2..=5),
            fusion: if rng.gen_bool(0.5) {
                FusionMode::Attentive
            } else {
                FusionMode::Concat
            },
        };
        let mut model = McPropModel::init(&shape, rng.gen());
        let gain = rng.gen_range(0.5..2.0);
        for t in model.tensors_mut() {
            t.iter_mut().for_each(|w| *w *= gain);
        }
        let b = rng.gen_range(2..=5);
        let mut draw = |cols: usize| {
            let data = (0..b * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Matrix::from_vec(b, cols, data).unwrap()
        };
        let batch = Batch {
            urls: draw(shape.url_dim),
            images: draw(shape.image_dim),
            captions: draw(shape.caption_dim),
        };
        let margin = rng.gen_range(0.05..0.5);
        let (loss, gap) = loss_oracle(&model, &batch, margin);
        if loss > 1e-3 && gap > 1e-4 {
            return (model, batch, margin);
        }
    }
}
