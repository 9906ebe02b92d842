use std::fmt::Write as _;

use super::{assign_ranking, complete_ranking, load_corpus, Corpus, PipelineConfig, SUBMISSION_WIDTH};
use crate::data::sample_nonmatching_pairs;
use crate::embed::encode_texts;
use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_by_levenshtein, rank_by_raw_similarity, MetricsReport};
use crate::mcprop::{train_mcprop, FusionMode, ModalityInputs};
use crate::rerank::{rerank_candidates, train_pair_scorer, CountingScorer, HashedLogisticScorer};
use crate::retrieval::{top_k, CandidateSet, Ranking, ScoreMatrix};

use super::propose_candidates;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentTable {
    /// First-stage rankers on their own.
    Baselines,
    /// Base rankers alone and with re-ranking of their top candidates.
    Cascade,
    /// The cascade with and without one-to-one assignment.
    Bijective,
}

impl ExperimentTable {
    pub const NAMES: &'static [&'static str] = &["baselines", "cascade", "bijective"];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baselines => "baselines",
            Self::Cascade => "cascade",
            Self::Bijective => "bijective",
        }
    }
}

impl std::str::FromStr for ExperimentTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baselines" => Ok(Self::Baselines),
            "cascade" => Ok(Self::Cascade),
            "bijective" => Ok(Self::Bijective),
            other => Err(Error::Config(format!(
                "unknown experiment table `{other}` (valid: {})",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub method: String,
    pub metrics: MetricsReport,
    /// Pair-scorer invocations, for re-ranked rows.
    pub scorer_calls: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub table: ExperimentTable,
    pub n_queries: usize,
    pub candidates_per_query: usize,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# table={} queries={} candidates={}\nmethod\tndcg5\trecall@1\trecall@5\trecall@10\tscorer_calls\n",
            self.table.name(),
            self.n_queries,
            self.candidates_per_query
        );
        for r in &self.rows {
            let m = &r.metrics;
            let calls = r.scorer_calls.map_or("-".to_string(), |c| c.to_string());
            let _ = writeln!(
                out,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{calls}",
                r.method,
                m.ndcg5,
                m.recall(1),
                m.recall(5),
                m.recall(10)
            );
        }
        out
    }
}

struct Bench<'a> {
    config: &'a PipelineConfig,
    corpus: Corpus,
    train_inputs: ModalityInputs,
    holdout_inputs: ModalityInputs,
    k: usize,
    rows: Vec<ExperimentRow>,
}

impl<'a> Bench<'a> {
    fn new(config: &'a PipelineConfig) -> Result<Self> {
        let corpus = load_corpus(config)?;
        let encoder = config.encoder();
        let train_inputs = ModalityInputs::from_dataset(&corpus.train, &encoder, &corpus.images)?;
        let holdout_inputs = ModalityInputs::from_dataset(&corpus.holdout, &encoder, &corpus.images)?;
        let k = config
            .candidates()?
            .resolve(corpus.holdout.captions().len(), SUBMISSION_WIDTH);
        Ok(Self {
            config,
            corpus,
            train_inputs,
            holdout_inputs,
            k,
            rows: Vec::new(),
        })
    }

    fn top_k(&self, scores: &ScoreMatrix) -> Result<CandidateSet> {
        top_k(scores, self.k)?.relabel(&self.corpus.holdout.query_ids(), &self.corpus.holdout.caption_ids())
    }

    fn record(&mut self, method: &str, ranking: &Ranking, scorer_calls: Option<usize>) -> Result<()> {
        let gt = self.corpus.holdout.ground_truth().ok_or(Error::MissingGroundTruth)?;
        self.rows.push(ExperimentRow {
            method: method.to_string(),
            metrics: evaluate(ranking, gt)?,
            scorer_calls,
        });
        Ok(())
    }

    fn levenshtein(&self) -> Result<CandidateSet> {
        let d = &self.corpus.holdout;
        let urls: Vec<&str> = d.queries().iter().map(|q| q.cleaned_url.as_str()).collect();
        let captions: Vec<&str> = d.captions().iter().map(|c| c.text.as_str()).collect();
        self.top_k(&rank_by_levenshtein(&urls, &captions)?)
    }

    fn raw_cosine(&self) -> Result<CandidateSet> {
        let d = &self.corpus.holdout;
        let encoder = self.config.encoder();
        let urls: Vec<&str> = d.queries().iter().map(|q| q.cleaned_url.as_str()).collect();
        let captions: Vec<&str> = d.captions().iter().map(|c| c.text.as_str()).collect();
        let scores = rank_by_raw_similarity(&encode_texts(&urls, &encoder)?, &encode_texts(&captions, &encoder)?)?;
        self.top_k(&scores)
    }

    fn mcprop(&self, fusion: FusionMode) -> Result<CandidateSet> {
        let shape = crate::mcprop::ModelShape {
            fusion,
            ..self.config.shape(self.corpus.images.dim())
        };
        let (model, _) = train_mcprop(
            &self.corpus.train,
            &self.train_inputs,
            &self.corpus.holdout,
            &self.holdout_inputs,
            &shape,
            &self.config.training(),
        )?;
        propose_candidates(&model, &self.corpus.holdout, &self.holdout_inputs, self.k)
    }

    fn scorer(&self) -> Result<HashedLogisticScorer> {
        let pairs = sample_nonmatching_pairs(&self.corpus.train, self.config.negative_ratio, self.config.seed)?;
        train_pair_scorer(
            &pairs,
            &self.corpus.train,
            self.config.pair_features(),
            &self.config.scorer_training(),
        )
    }

    fn rerank(&self, candidates: &CandidateSet, scorer: &HashedLogisticScorer) -> Result<(Ranking, usize)> {
        let counting = CountingScorer::new(scorer);
        let ranking = rerank_candidates(candidates, &counting, &self.corpus.holdout, self.k)?;
        Ok((ranking, counting.calls()))
    }
}

/// Runs every method of `table` on the same split and reports them side by side.
pub fn run_experiment_table(config: &PipelineConfig, table: ExperimentTable) -> Result<ExperimentReport> {
    let mut bench = Bench::new(config)?;
    match table {
        ExperimentTable::Baselines => {
            let lev = bench.levenshtein()?;
            bench.record("levenshtein", &lev, None)?;
            let raw = bench.raw_cosine()?;
            bench.record("raw-cosine", &raw, None)?;
            for fusion in [FusionMode::Concat, FusionMode::Attentive] {
                let ranking = bench.mcprop(fusion)?;
                bench.record(&format!("mcprop-{fusion}"), &ranking, None)?;
            }
        }
        ExperimentTable::Cascade => {
            let scorer = bench.scorer()?;
            let lev = bench.levenshtein()?;
            let mcprop = bench.mcprop(config.fusion)?;
            bench.record("levenshtein", &lev, None)?;
            bench.record("mcprop", &mcprop, None)?;
            let (reranked, calls) = bench.rerank(&lev, &scorer)?;
            bench.record("rerank@levenshtein", &reranked, Some(calls))?;
            let (reranked, calls) = bench.rerank(&mcprop, &scorer)?;
            bench.record("rerank@mcprop", &reranked, Some(calls))?;
        }
        ExperimentTable::Bijective => {
            let scorer = bench.scorer()?;
            let mcprop = bench.mcprop(config.fusion)?;
            let (reranked, calls) = bench.rerank(&mcprop, &scorer)?;
            bench.record("rerank@mcprop", &reranked, Some(calls))?;
            let assigned = assign_ranking(&reranked, &bench.corpus.holdout, config.mask_mode)?;
            let assigned = complete_ranking(&assigned, &reranked);
            bench.record("rerank@mcprop+assign", &assigned, Some(calls))?;
        }
    }
    Ok(ExperimentReport {
        table,
        n_queries: bench.corpus.holdout.queries().len(),
        candidates_per_query: bench.k,
        rows: bench.rows,
    })
}
