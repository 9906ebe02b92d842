//! Second-stage re-ranking with a pairwise (URL text, caption) match scorer.
//!
//! [`HashedLogisticScorer`] is a trainable logistic model over hashed
//! character n-grams in three namespaces: URL-only, caption-only, and the
//! n-grams both texts share. [`ExternalScores`] lets probabilities computed
//! elsewhere (for example by a fine-tuned cross-encoder) drive the same
//! re-ranking path.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{Reader, Writer};
use crate::data::{CaptionRecord, Dataset, Label, LabeledPair, QueryRecord};
use crate::error::{Error, Result};
use crate::hashing::{char_ngrams, fnv1a};
use crate::linalg::sigmoid;
use crate::optim::{AdamConfig, AdamW};
use crate::retrieval::{CandidateSet, RankedList, Ranking, Scored};

pub const SCORER_MAGIC: &[u8; 4] = b"HLS1";
const SCORER_VERSION: u32 = 1;

/// Default number of captions kept per query after re-ranking.
pub const DEFAULT_TOP_N: usize = 5;

/// Match probability for a (query, caption) pair.
pub trait PairScorer: Sync {
    fn score(&self, query: &QueryRecord, caption: &CaptionRecord) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Namespace {
    Url = 0,
    Caption = 1,
    Shared = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairFeatureConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Hashed slots per namespace.
    pub hash_dim: usize,
    pub seed: u64,
}

impl Default for PairFeatureConfig {
    fn default() -> Self {
        Self {
            ngram_min: 3,
            ngram_max: 5,
            hash_dim: 1 << 18,
            seed: 0,
        }
    }
}

impl PairFeatureConfig {
    fn validate(&self) -> Result<()> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max || self.hash_dim == 0 {
            return Err(Error::Config(format!("invalid pair feature config {self:?}")));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        3 * self.hash_dim
    }
}

/// The distinct n-grams of each namespace, before hashing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairNgrams {
    pub url: BTreeSet<String>,
    pub caption: BTreeSet<String>,
    pub shared: BTreeSet<String>,
}

pub fn pair_ngrams(url_text: &str, caption_text: &str, config: &PairFeatureConfig) -> Result<PairNgrams> {
    config.validate()?;
    let (url_text, caption_text) = (url_text.trim(), caption_text.trim());
    if url_text.is_empty() || caption_text.is_empty() {
        return Err(Error::EmptyInput("pair text".into()));
    }
    let url: BTreeSet<String> = char_ngrams(url_text, config.ngram_min, config.ngram_max)
        .into_iter()
        .collect();
    let caption: BTreeSet<String> = char_ngrams(caption_text, config.ngram_min, config.ngram_max)
        .into_iter()
        .collect();
    let shared = url.intersection(&caption).cloned().collect();
    Ok(PairNgrams { url, caption, shared })
}

/// Sorted, de-duplicated sparse vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    /// Number of active slots belonging to `namespace`.
    pub fn namespace_count(&self, namespace: Namespace, hash_dim: usize) -> usize {
        let lo = namespace as usize * hash_dim;
        self.indices.iter().filter(|&&i| i >= lo && i < lo + hash_dim).count()
    }
}

/// Hashed pair features; every namespace block is L2-normalized.
pub fn pair_features(url_text: &str, caption_text: &str, config: &PairFeatureConfig) -> Result<SparseFeatures> {
    let grams = pair_ngrams(url_text, caption_text, config)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (ns, set) in [
        (Namespace::Url, &grams.url),
        (Namespace::Caption, &grams.caption),
        (Namespace::Shared, &grams.shared),
    ] {
        let offset = ns as usize * config.hash_dim;
        let slots: BTreeSet<usize> = set
            .iter()
            .map(|g| offset + (fnv1a(config.seed, g.as_bytes()) % config.hash_dim as u64) as usize)
            .collect();
        if slots.is_empty() {
            continue;
        }
        let value = 1.0 / (slots.len() as f64).sqrt();
        values.extend(std::iter::repeat(value).take(slots.len()));
        indices.extend(slots);
    }
    Ok(SparseFeatures { indices, values })
}

/// Logistic regression over [`pair_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct HashedLogisticScorer {
    pub config: PairFeatureConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl HashedLogisticScorer {
    pub fn zeros(config: PairFeatureConfig) -> Self {
        Self {
            config,
            weights: vec![0.0; config.feature_count()],
            bias: 0.0,
        }
    }

    fn logit(&self, features: &SparseFeatures) -> f64 {
        self.bias
            + features
                .indices
                .iter()
                .zip(&features.values)
                .map(|(&i, &v)| self.weights[i] * v)
                .sum::<f64>()
    }

    pub fn score_text(&self, url_text: &str, caption_text: &str) -> Result<f64> {
        let features = pair_features(url_text, caption_text, &self.config)?;
        Ok(sigmoid(self.logit(&features)))
    }

    /// `HLS1`, u32 version, n-gram bounds, hash dim, seed, bias, then the
    /// non-zero weights as (u32 index, f64 value) pairs.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.raw(SCORER_MAGIC);
        w.u32(SCORER_VERSION as usize)?;
        w.u32(self.config.ngram_min)?;
        w.u32(self.config.ngram_max)?;
        w.u32(self.config.hash_dim)?;
        w.u64(self.config.seed);
        w.f64s(&[self.bias]);
        let nonzero: Vec<(usize, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, v)| v.to_bits() != 0)
            .map(|(i, v)| (i, *v))
            .collect();
        w.u32(nonzero.len())?;
        for (i, v) in nonzero {
            w.u32(i)?;
            w.f64s(&[v]);
        }
        Ok(w.bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, SCORER_MAGIC)?;
        let version = r.u32()? as u32;
        if version != SCORER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config = PairFeatureConfig {
            ngram_min: r.u32()?,
            ngram_max: r.u32()?,
            hash_dim: r.u32()?,
            seed: r.u64()?,
        };
        config.validate()?;
        let bias = r.f64s(1)?[0];
        let mut scorer = Self::zeros(config);
        scorer.bias = bias;
        let n = r.u32()?;
        for _ in 0..n {
            let i = r.u32()?;
            let v = r.f64s(1)?[0];
            if i >= scorer.weights.len() {
                return Err(Error::DimensionOverflow(format!("weight index {i}")));
            }
            scorer.weights[i] = v;
        }
        r.finish()?;
        if !bias.is_finite() || scorer.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scorer parameters".into()));
        }
        Ok(scorer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl PairScorer for HashedLogisticScorer {
    fn score(&self, query: &QueryRecord, caption: &CaptionRecord) -> Result<f64> {
        self.score_text(&query.cleaned_url, &caption.text)
    }
}

pub fn score_pair(scorer: &HashedLogisticScorer, url_text: &str, caption_text: &str) -> Result<f64> {
    scorer.score_text(url_text, caption_text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerTrainConfig {
    /// Even; half matches, half non-matches per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 2,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Mini-batch AdamW on the logistic loss with balanced batches.
///
/// One epoch visits every match once; non-matches are drawn from a shuffled
/// pool, wrapping around when the pool is shorter than the match list.
pub fn train_pair_scorer(
    pairs: &[LabeledPair],
    d: &Dataset,
    features: PairFeatureConfig,
    config: &ScorerTrainConfig,
) -> Result<HashedLogisticScorer> {
    if config.batch_size < 2 || config.batch_size % 2 != 0 {
        return Err(Error::Config(format!(
            "scorer batch size must be even and >= 2, got {}",
            config.batch_size
        )));
    }
    features.validate()?;
    let encode = |p: &LabeledPair| -> Result<SparseFeatures> {
        let q = d.query(p.query_id).ok_or(Error::UnknownId {
            kind: "query",
            id: p.query_id,
        })?;
        let c = d.caption(p.caption_id).ok_or(Error::UnknownId {
            kind: "caption",
            id: p.caption_id,
        })?;
        pair_features(&q.cleaned_url, &c.text, &features)
    };
    let mut positives: Vec<SparseFeatures> = Vec::new();
    let mut negatives: Vec<SparseFeatures> = Vec::new();
    for p in pairs {
        match p.label {
            Label::Match => positives.push(encode(p)?),
            Label::NonMatch => negatives.push(encode(p)?),
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleLabel);
    }

    let mut scorer = HashedLogisticScorer::zeros(features);
    let mut optimizer = AdamW::new(
        AdamConfig::new(config.learning_rate, config.weight_decay),
        &[scorer.weights.len(), 1],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = config.batch_size / 2;
    let mut grad_w = vec![0.0; scorer.weights.len()];
    let mut touched: Vec<usize> = Vec::new();

    for _ in 0..config.epochs {
        let mut pos_order: Vec<usize> = (0..positives.len()).collect();
        let mut neg_order: Vec<usize> = (0..negatives.len()).collect();
        pos_order.shuffle(&mut rng);
        neg_order.shuffle(&mut rng);
        let mut neg_cursor = 0;
        for chunk in pos_order.chunks(half) {
            let mut batch: Vec<(&SparseFeatures, f64)> = chunk.iter().map(|&i| (&positives[i], 1.0)).collect();
            for _ in 0..chunk.len() {
                batch.push((&negatives[neg_order[neg_cursor % neg_order.len()]], 0.0));
                neg_cursor += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grad_b = 0.0;
            for (f, target) in &batch {
                let err = (sigmoid(scorer.logit(f)) - target) * scale;
                grad_b += err;
                for (&i, &v) in f.indices.iter().zip(&f.values) {
                    if grad_w[i] == 0.0 {
                        touched.push(i);
                    }
                    grad_w[i] += err * v;
                }
            }
            let mut bias = [scorer.bias];
            optimizer.step(&mut [&mut scorer.weights, &mut bias], &[&grad_w, &[grad_b]]);
            scorer.bias = bias[0];
            for i in touched.drain(..) {
                grad_w[i] = 0.0;
            }
        }
    }
    Ok(scorer)
}

/// Counts scorer invocations; safe to share across threads.
pub struct CountingScorer<'a> {
    inner: &'a dyn PairScorer,
    calls: AtomicUsize,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn PairScorer) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl PairScorer for CountingScorer<'_> {
    fn score(&self, query: &QueryRecord, caption: &CaptionRecord) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(query, caption)
    }
}

/// Re-orders each candidate list by descending scorer probability.
///
/// The sort is stable: equal probabilities keep their candidate order.
/// Each candidate is scored exactly once.
pub fn rerank_candidates(
    candidates: &CandidateSet,
    scorer: &dyn PairScorer,
    d: &Dataset,
    top_n: usize,
) -> Result<Ranking> {
    if top_n == 0 {
        return Err(Error::out_of_range("top_n", top_n, ">= 1"));
    }
    let lists = candidates
        .lists
        .par_iter()
        .map(|list| {
            if top_n > list.items.len() {
                return Err(Error::out_of_range(
                    "top_n",
                    top_n,
                    format!("<= {} candidates of query {}", list.items.len(), list.query_id),
                ));
            }
            let query = d.query(list.query_id).ok_or(Error::UnknownId {
                kind: "query",
                id: list.query_id,
            })?;
            let mut scored: Vec<Scored> = list
                .items
                .iter()
                .map(|item| {
                    let caption = d.caption(item.caption_id).ok_or(Error::UnknownId {
                        kind: "caption",
                        id: item.caption_id,
                    })?;
                    let p = scorer.score(query, caption)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::out_of_range("probability", p, "[0, 1]"));
                    }
                    Ok(Scored {
                        caption_id: item.caption_id,
                        score: p,
                    })
                })
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.score.total_cmp(&a.score));
            scored.truncate(top_n);
            Ok(RankedList {
                query_id: list.query_id,
                items: scored,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Ranking { lists })
}

/// Probabilities keyed by (query id, caption id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScores {
    pub table: HashMap<(u64, u64), f64>,
}

impl ExternalScores {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl PairScorer for ExternalScores {
    fn score(&self, query: &QueryRecord, caption: &CaptionRecord) -> Result<f64> {
        self.table
            .get(&(query.id, caption.id))
            .copied()
            .ok_or(Error::MissingPair {
                query_id: query.id,
                caption_id: caption.id,
            })
    }
}

/// Parses `query_id<TAB>caption_id<TAB>probability` lines (an optional
/// header is skipped) and checks that every candidate pair is covered.
pub fn parse_external_scores(text: &str, candidates: &CandidateSet) -> Result<ExternalScores> {
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() || (i == 0 && line.starts_with("query_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let query_id: u64 = fields[0].trim().parse().map_err(|_| bad("invalid query id".into()))?;
        let caption_id: u64 = fields[1].trim().parse().map_err(|_| bad("invalid caption id".into()))?;
        let p: f64 = fields[2].trim().parse().map_err(|_| bad("invalid probability".into()))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::out_of_range(
                "probability",
                p,
                format!("[0, 1] for pair ({query_id}, {caption_id}) on line {line_no}"),
            ));
        }
        table.insert((query_id, caption_id), p);
    }
    for list in &candidates.lists {
        for item in &list.items {
            if !table.contains_key(&(list.query_id, item.caption_id)) {
                return Err(Error::MissingPair {
                    query_id: list.query_id,
                    caption_id: item.caption_id,
                });
            }
        }
    }
    Ok(ExternalScores { table })
}

pub fn import_external_scores(path: &Path, candidates: &CandidateSet) -> Result<ExternalScores> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_external_scores(&text, candidates)
}
