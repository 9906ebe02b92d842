//! Staged pipeline: every stage reads its inputs from the output directory
//! and writes its artifacts there, so any stage can be re-run on its own.
//!
//! Artifacts are first written as `<name>.incomplete` and renamed once the
//! whole stage has succeeded.

mod config;
mod experiment;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{CandidateCount, PipelineConfig, PRESETS};
pub use experiment::{run_experiment_table, ExperimentReport, ExperimentRow, ExperimentTable};

use crate::assign::{bijective_top_k, MaskMode};
use crate::data::{clean_url_with, load_dataset_with, sample_nonmatching_pairs, split_dataset, CleanOptions, Dataset};
use crate::embed::{embeddings_from_bytes, embeddings_to_bytes, encode_texts, load_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::linalg::Matrix;
use crate::mcprop::{model_from_bytes, model_to_bytes, train_mcprop, McPropModel, ModalityInputs};
use crate::rerank::{import_external_scores, rerank_candidates, train_pair_scorer, CountingScorer, HashedLogisticScorer, PairScorer};
use crate::retrieval::{cosine_scores, top_k, CandidateSet, Provenance, RankedList, Ranking, Scored, DEFAULT_BLOCK};
use crate::synthetic::planted_corpus;

/// Captions per query in a submission.
pub const SUBMISSION_WIDTH: usize = 5;

pub const STAGES: &[&str] = &[
    "clean-urls",
    "embed",
    "train-mcprop",
    "propose",
    "train-rerank",
    "rerank",
    "assign",
    "evaluate",
];

pub mod artifact {
    pub const CORPUS: &str = "corpus.tsv";
    pub const IMAGES: &str = "images.emb";
    pub const CLEANED: &str = "cleaned_urls.tsv";
    pub const URL_EMBEDDINGS: &str = "url_embeddings.emb";
    pub const CAPTION_EMBEDDINGS: &str = "caption_embeddings.emb";
    pub const CHECKPOINT: &str = "mcprop.ckpt";
    pub const HISTORY: &str = "mcprop_history.jsonl";
    pub const CANDIDATES: &str = "candidates.tsv";
    pub const SCORER: &str = "scorer.hls";
    pub const RERANKED: &str = "reranked.tsv";
    pub const RERANK_STATS: &str = "rerank_stats.json";
    pub const ASSIGNED: &str = "assigned.tsv";
    pub const SUBMISSION: &str = "submission.tsv";
    pub const METRICS: &str = "metrics.json";
}

/// Dataset, image bank and the train / holdout split, rebuilt from config.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub full: Dataset,
    pub images: EmbeddingMatrix,
    pub train: Dataset,
    pub holdout: Dataset,
}

/// Loads the configured dataset (or generates the preset) and splits it.
pub fn load_corpus(config: &PipelineConfig) -> Result<Corpus> {
    config.validate()?;
    let options = CleanOptions {
        percent_decode: config.percent_decode,
    };
    let (full, images) = match (&config.preset, &config.dataset) {
        (Some(_), _) => {
            let corpus = planted_corpus(&config.synthetic())?;
            let queries = corpus
                .dataset
                .queries()
                .iter()
                .map(|q| {
                    let mut q = q.clone();
                    q.cleaned_url = clean_url_with(&q.raw_url, options)?;
                    Ok(q)
                })
                .collect::<Result<_>>()?;
            let d = Dataset::new(
                queries,
                corpus.dataset.captions().to_vec(),
                corpus.dataset.ground_truth().cloned(),
            )?;
            (d, corpus.images)
        }
        (None, Some(path)) => {
            let d = load_dataset_with(path, config.format.parse()?, options)?;
            let images_path = config.image_embeddings.as_ref().expect("validated");
            let images = load_embeddings(images_path)?;
            if images.rows() < d.queries().len() {
                return Err(Error::DimensionMismatch {
                    context: "image embedding rows",
                    expected: d.queries().len(),
                    actual: images.rows(),
                });
            }
            (d, images)
        }
        (None, None) => unreachable!("validated"),
    };
    let (train, holdout) = split_dataset(&full, config.holdout, config.seed)?;
    Ok(Corpus {
        full,
        images,
        train,
        holdout,
    })
}

/// Exactly [`SUBMISSION_WIDTH`] distinct caption ids per query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub rows: Vec<(u64, [u64; SUBMISSION_WIDTH])>,
}

impl Submission {
    /// Takes captions from `primary` in order, skipping repeats, then tops
    /// up from `fallback` when `primary` runs short.
    pub fn from_rankings(primary: &Ranking, fallback: &Ranking, d: &Dataset) -> Result<Self> {
        let fallback = fallback.by_query();
        let mut rows = Vec::with_capacity(primary.lists.len());
        for list in &primary.lists {
            let extra = fallback.get(&list.query_id).map(|l| l.items.as_slice()).unwrap_or(&[]);
            let mut seen = HashSet::new();
            let ids: Vec<u64> = list
                .items
                .iter()
                .chain(extra)
                .map(|s| s.caption_id)
                .filter(|id| seen.insert(*id))
                .take(SUBMISSION_WIDTH)
                .collect();
            let ids: [u64; SUBMISSION_WIDTH] = ids.try_into().map_err(|ids: Vec<u64>| {
                Error::out_of_range(
                    "submission width",
                    ids.len(),
                    format!("{SUBMISSION_WIDTH} distinct captions for query {}", list.query_id),
                )
            })?;
            for &id in &ids {
                if d.caption(id).is_none() {
                    return Err(Error::UnknownId { kind: "caption", id });
                }
            }
            rows.push((list.query_id, ids));
        }
        Ok(Self { rows })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, ids) in &self.rows {
            let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{q}\t{}", ids.join(" "));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |message: String| Error::Parse { line: i + 1, message };
            let (q, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
            let q: u64 = q.parse().map_err(|_| bad("invalid query id".into()))?;
            let ids: Vec<u64> = rest
                .split(' ')
                .map(|s| s.parse().map_err(|_| bad(format!("invalid caption id {s:?}"))))
                .collect::<Result<_>>()?;
            if ids.iter().collect::<HashSet<_>>().len() != ids.len() {
                return Err(bad("repeated caption id".into()));
            }
            let ids: [u64; SUBMISSION_WIDTH] = ids
                .try_into()
                .map_err(|v: Vec<u64>| bad(format!("expected {SUBMISSION_WIDTH} ids, found {}", v.len())))?;
            rows.push((q, ids));
        }
        Ok(Self { rows })
    }
}

/// Scorer calls made by the rerank stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RerankStats {
    pub queries: usize,
    pub candidates_per_query: usize,
    pub scorer_calls: usize,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<(&'static str, Vec<u8>)>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn add(&mut self, name: &'static str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name, bytes.into()));
    }

    fn commit(self) -> Result<()> {
        fs::create_dir_all(self.dir).map_err(|e| Error::io(self.dir, e))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = self.dir.join(format!("{name}.incomplete"));
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            staged.push((tmp, self.dir.join(name)));
        }
        for (tmp, path) in staged {
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn artifact_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.output_dir.join(name)
}

fn read_text(config: &PipelineConfig, name: &str) -> Result<String> {
    let path = artifact_path(config, name);
    fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
}

fn read_bytes(config: &PipelineConfig, name: &str) -> Result<Vec<u8>> {
    let path = artifact_path(config, name);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// Writes `query_id<TAB>raw_url<TAB>cleaned_url` for every query, plus the
/// generated corpus and image bank when a preset is used.
pub fn stage_clean_urls(config: &PipelineConfig) -> Result<()> {
    stage("clean-urls", || {
        let corpus = load_corpus(config)?;
        let mut out = Outputs::new(&config.output_dir);
        if config.preset.is_some() {
            out.add(artifact::CORPUS, corpus.full.to_tsv());
            out.add(artifact::IMAGES, embeddings_to_bytes(&corpus.images)?);
        }
        let mut tsv = String::from("query_id\traw_url\tcleaned_url\n");
        for q in corpus.full.queries() {
            let _ = writeln!(tsv, "{}\t{}\t{}", q.id, q.raw_url, q.cleaned_url);
        }
        out.add(artifact::CLEANED, tsv);
        out.commit()
    })
}

fn read_cleaned(config: &PipelineConfig, d: &Dataset) -> Result<Vec<String>> {
    let text = read_text(config, artifact::CLEANED)?;
    let mut texts = Vec::with_capacity(d.queries().len());
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let bad = |message: &str| Error::Parse {
            line: i + 1,
            message: message.into(),
        };
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let id: u64 = fields[0].parse().map_err(|_| bad("invalid query id"))?;
        if d.queries().get(texts.len()).map(|q| q.id) != Some(id) {
            return Err(bad("query order differs from the dataset"));
        }
        texts.push(fields[2].to_string());
    }
    if texts.len() != d.queries().len() {
        return Err(Error::DimensionMismatch {
            context: "cleaned url rows",
            expected: d.queries().len(),
            actual: texts.len(),
        });
    }
    Ok(texts)
}

/// Hashed embeddings of every cleaned URL and every caption.
pub fn stage_embed(config: &PipelineConfig) -> Result<()> {
    stage("embed", || {
        let corpus = load_corpus(config)?;
        let urls = read_cleaned(config, &corpus.full)?;
        let captions: Vec<&str> = corpus.full.captions().iter().map(|c| c.text.as_str()).collect();
        let encoder = config.encoder();
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::URL_EMBEDDINGS, embeddings_to_bytes(&encode_texts(&urls, &encoder)?)?);
        out.add(artifact::CAPTION_EMBEDDINGS, embeddings_to_bytes(&encode_texts(&captions, &encoder)?)?);
        out.commit()
    })
}

fn modality_inputs(config: &PipelineConfig, corpus: &Corpus) -> Result<(ModalityInputs, ModalityInputs)> {
    let urls = embeddings_from_bytes(&read_bytes(config, artifact::URL_EMBEDDINGS)?)?;
    let captions = embeddings_from_bytes(&read_bytes(config, artifact::CAPTION_EMBEDDINGS)?)?;
    Ok((
        ModalityInputs::from_embeddings(&corpus.train, &corpus.full, &urls, &captions, &corpus.images)?,
        ModalityInputs::from_embeddings(&corpus.holdout, &corpus.full, &urls, &captions, &corpus.images)?,
    ))
}

/// Trains MCProp on the training split, validating on the holdout.
pub fn stage_train_mcprop(config: &PipelineConfig) -> Result<()> {
    stage("train-mcprop", || {
        let corpus = load_corpus(config)?;
        let (train_inputs, holdout_inputs) = modality_inputs(config, &corpus)?;
        let shape = config.shape(corpus.images.dim());
        let (model, history) = train_mcprop(
            &corpus.train,
            &train_inputs,
            &corpus.holdout,
            &holdout_inputs,
            &shape,
            &config.training(),
        )?;
        let mut log = String::new();
        for record in &history {
            let m = &record.validation.metrics;
            let row = serde_json::json!({
                "epoch": record.epoch,
                "train_loss": record.train_loss,
                "ndcg5": m.ndcg5,
                "recall@1": m.recall(1),
                "mean_alpha_u": record.validation.mean_alpha_u,
                "mean_alpha_v": record.validation.mean_alpha_v,
            });
            let _ = writeln!(log, "{row}");
        }
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::CHECKPOINT, model_to_bytes(&model)?);
        out.add(artifact::HISTORY, log);
        out.commit()
    })
}

/// MCProp candidate sets for `d`, ids already resolved.
pub fn propose_candidates(model: &McPropModel, d: &Dataset, inputs: &ModalityInputs, k: usize) -> Result<CandidateSet> {
    let (queries, _) = model.encode_queries(&inputs.urls, &inputs.images)?;
    let captions = model.encode_captions(&inputs.captions)?;
    let scores = cosine_scores(&queries, &captions, DEFAULT_BLOCK, Provenance::McProp)?;
    top_k(&scores, k)?.relabel(&d.query_ids(), &d.caption_ids())
}

/// Top-K MCProp candidates for every holdout query.
pub fn stage_propose(config: &PipelineConfig) -> Result<()> {
    stage("propose", || {
        let corpus = load_corpus(config)?;
        let (_, holdout_inputs) = modality_inputs(config, &corpus)?;
        let model = model_from_bytes(&read_bytes(config, artifact::CHECKPOINT)?)?;
        let k = config
            .candidates()?
            .resolve(corpus.holdout.captions().len(), SUBMISSION_WIDTH);
        let candidates = propose_candidates(&model, &corpus.holdout, &holdout_inputs, k)?;
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::CANDIDATES, candidates.to_candidate_tsv());
        out.commit()
    })
}

/// Trains the pair scorer on matches and sampled non-matches of the
/// training split. Does nothing when external scores are configured.
pub fn stage_train_rerank(config: &PipelineConfig) -> Result<()> {
    stage("train-rerank", || {
        if config.external_scores.is_some() {
            return Ok(());
        }
        let corpus = load_corpus(config)?;
        let pairs = sample_nonmatching_pairs(&corpus.train, config.negative_ratio, config.seed)?;
        let scorer = train_pair_scorer(&pairs, &corpus.train, config.pair_features(), &config.scorer_training())?;
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::SCORER, scorer.to_bytes()?);
        out.commit()
    })
}

/// Re-orders every candidate list by scorer probability.
pub fn stage_rerank(config: &PipelineConfig) -> Result<RerankStats> {
    stage("rerank", || {
        let corpus = load_corpus(config)?;
        let candidates = Ranking::from_candidate_tsv(&read_text(config, artifact::CANDIDATES)?)?;
        let external;
        let trained;
        let scorer: &dyn PairScorer = match &config.external_scores {
            Some(path) => {
                external = import_external_scores(path, &candidates)?;
                &external
            }
            None => {
                trained = HashedLogisticScorer::from_bytes(&read_bytes(config, artifact::SCORER)?)?;
                &trained
            }
        };
        let k = candidates.lists.iter().map(|l| l.items.len()).max().unwrap_or(0);
        let counting = CountingScorer::new(scorer);
        let reranked = rerank_candidates(&candidates, &counting, &corpus.holdout, k.max(1))?;
        let stats = RerankStats {
            queries: candidates.n_queries(),
            candidates_per_query: k,
            scorer_calls: counting.calls(),
        };
        if stats.scorer_calls > stats.queries * stats.candidates_per_query {
            return Err(Error::InvalidData(format!(
                "scorer called {} times for {} queries x {} candidates",
                stats.scorer_calls, stats.queries, stats.candidates_per_query
            )));
        }
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::RERANKED, reranked.to_ranking_tsv());
        out.add(artifact::RERANK_STATS, serde_json::to_string(&stats)? + "\n");
        out.commit()?;
        Ok(stats)
    })
}

/// Score matrix over (queries, captions) of `d`: ranked probabilities where
/// available, `fill` elsewhere.
pub fn dense_scores(ranking: &Ranking, d: &Dataset, fill: f64) -> Result<Matrix> {
    let mut m = Matrix::zeros(d.queries().len(), d.captions().len());
    m.data_mut().fill(fill);
    for list in &ranking.lists {
        let q = d.query_position(list.query_id).ok_or(Error::UnknownId {
            kind: "query",
            id: list.query_id,
        })?;
        for item in &list.items {
            let c = d.caption_position(item.caption_id).ok_or(Error::UnknownId {
                kind: "caption",
                id: item.caption_id,
            })?;
            m.set(q, c, item.score);
        }
    }
    Ok(m)
}

/// Score given to pairs the re-ranker never saw; below every probability.
pub const UNRANKED_SCORE: f64 = -1.0;

/// One-to-one top-5 assignment over re-ranked probabilities.
pub fn assign_ranking(reranked: &Ranking, d: &Dataset, mask: MaskMode) -> Result<Ranking> {
    let scores = dense_scores(reranked, d, UNRANKED_SCORE)?;
    let result = bijective_top_k(&scores, SUBMISSION_WIDTH, mask)?;
    Ok(result.to_ranking(&scores, &d.query_ids(), &d.caption_ids()))
}

/// Bijective matching over the re-ranked lists; a no-op unless `assign`.
pub fn stage_assign(config: &PipelineConfig) -> Result<()> {
    stage("assign", || {
        if !config.assign {
            return Ok(());
        }
        let corpus = load_corpus(config)?;
        let reranked = Ranking::from_ranking_tsv(&read_text(config, artifact::RERANKED)?)?;
        let assigned = assign_ranking(&reranked, &corpus.holdout, config.mask_mode)?;
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::ASSIGNED, assigned.to_ranking_tsv());
        out.commit()
    })
}

/// `primary` lists followed by the items of `rest` they lack, so recall
/// beyond the submission width stays meaningful.
pub fn complete_ranking(primary: &Ranking, rest: &Ranking) -> Ranking {
    let rest = rest.by_query();
    Ranking {
        lists: primary
            .lists
            .iter()
            .map(|l| {
                let mut seen = HashSet::new();
                let tail = rest.get(&l.query_id).map(|r| r.items.as_slice()).unwrap_or(&[]);
                RankedList {
                    query_id: l.query_id,
                    items: l.items.iter().chain(tail).filter(|s| seen.insert(s.caption_id)).copied().collect(),
                }
            })
            .collect(),
    }
}

/// Scores the final ranking and writes the submission.
pub fn stage_evaluate(config: &PipelineConfig) -> Result<(Submission, MetricsReport)> {
    stage("evaluate", || {
        let corpus = load_corpus(config)?;
        let gt: &BTreeMap<u64, u64> = corpus.holdout.ground_truth().ok_or(Error::MissingGroundTruth)?;
        let reranked = Ranking::from_ranking_tsv(&read_text(config, artifact::RERANKED)?)?;
        let final_ranking = if config.assign {
            Ranking::from_ranking_tsv(&read_text(config, artifact::ASSIGNED)?)?
        } else {
            reranked.clone()
        };
        let submission = Submission::from_rankings(&final_ranking, &reranked, &corpus.holdout)?;
        let ordered = Ranking {
            lists: submission
                .rows
                .iter()
                .map(|(q, ids)| RankedList {
                    query_id: *q,
                    items: ids.iter().map(|&caption_id| Scored { caption_id, score: 0.0 }).collect(),
                })
                .collect(),
        };
        let top = complete_ranking(&ordered, &reranked);
        let metrics = evaluate(&top, gt)?;
        let mut out = Outputs::new(&config.output_dir);
        out.add(artifact::SUBMISSION, submission.to_tsv());
        out.add(artifact::METRICS, metrics.to_json_line() + "\n");
        out.commit()?;
        Ok((submission, metrics))
    })
}

/// Runs one stage by its command name.
pub fn run_stage(config: &PipelineConfig, name: &str) -> Result<()> {
    match name {
        "clean-urls" => stage_clean_urls(config),
        "embed" => stage_embed(config),
        "train-mcprop" => stage_train_mcprop(config),
        "propose" => stage_propose(config),
        "train-rerank" => stage_train_rerank(config),
        "rerank" => stage_rerank(config).map(|_| ()),
        "assign" => stage_assign(config),
        "evaluate" => stage_evaluate(config).map(|_| ()),
        other => Err(Error::Config(format!(
            "unknown stage `{other}` (valid: {})",
            STAGES.join(", ")
        ))),
    }
}

/// Every stage in order; the first failure stops the run.
pub fn run_pipeline(config: &PipelineConfig) -> Result<(Submission, MetricsReport)> {
    config.validate()?;
    for name in &STAGES[..STAGES.len() - 1] {
        run_stage(config, name)?;
    }
    stage_evaluate(config)
}
