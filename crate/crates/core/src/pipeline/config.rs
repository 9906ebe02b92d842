use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::assign::MaskMode;
use crate::data::Format;
use crate::embed::HashedEncoderConfig;
use crate::error::{Error, Result};
use crate::mcprop::{FusionMode, ModelShape, TrainingConfig};
use crate::rerank::{PairFeatureConfig, ScorerTrainConfig};
use crate::synthetic::SyntheticConfig;

pub const PRESETS: &[&str] = &["synthetic-small"];

/// How many MCProp candidates each query passes to the re-ranker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateCount {
    Fixed(usize),
    Fraction(f64),
}

impl CandidateCount {
    /// Candidates per query for a pool of `n_captions`, at least `floor`.
    pub fn resolve(self, n_captions: usize, floor: usize) -> usize {
        let k = match self {
            Self::Fixed(k) => k,
            Self::Fraction(f) => (f * n_captions as f64).ceil() as usize,
        };
        k.max(floor).min(n_captions)
    }
}

impl std::str::FromStr for CandidateCount {
    type Err = Error;

    /// `1000` is a count; `20%` or `0.2` is a fraction of the caption pool.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid candidate count `{s}` (expected an integer or a percentage)"));
        let s = s.trim();
        if let Some(pct) = s.strip_suffix('%') {
            let f: f64 = pct.trim().parse().map_err(|_| bad())?;
            return Self::Fraction(f / 100.0).checked();
        }
        if s.contains('.') {
            return Self::Fraction(s.parse().map_err(|_| bad())?).checked();
        }
        Self::Fixed(s.parse().map_err(|_| bad())?).checked()
    }
}

impl CandidateCount {
    fn checked(self) -> Result<Self> {
        match self {
            Self::Fixed(0) => Err(Error::Config("candidate_k must be positive".into())),
            Self::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::Config(format!("candidate_fraction must be in (0, 1], got {f}")))
            }
            other => Ok(other),
        }
    }
}

/// Flat pipeline configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Built-in corpus; mutually exclusive with `dataset`.
    pub preset: Option<String>,
    pub dataset: Option<PathBuf>,
    pub format: String,
    /// EMB1 file with one image row per query (file order).
    pub image_embeddings: Option<PathBuf>,
    /// Every stage artifact, checkpoints included, lands here.
    pub output_dir: PathBuf,
    /// Scores imported instead of training the pair scorer.
    pub external_scores: Option<PathBuf>,
    pub percent_decode: bool,

    pub seed: u64,
    pub holdout: usize,
    pub candidate_k: Option<usize>,
    pub candidate_fraction: Option<f64>,
    pub assign: bool,
    pub mask_mode: MaskMode,
    pub fusion: FusionMode,

    pub encoder_dim: usize,
    pub hidden_dim: usize,
    pub common_dim: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,

    pub negative_ratio: f64,
    pub rerank_hash_dim: usize,
    pub rerank_batch_size: usize,
    pub rerank_epochs: usize,
    pub rerank_learning_rate: f64,
    pub rerank_weight_decay: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainingConfig::default();
        let scorer = ScorerTrainConfig::default();
        Self {
            preset: None,
            dataset: None,
            format: "tsv".into(),
            image_embeddings: None,
            output_dir: PathBuf::from("out"),
            external_scores: None,
            percent_decode: true,
            seed: 0,
            holdout: 200,
            candidate_k: None,
            candidate_fraction: None,
            assign: false,
            mask_mode: MaskMode::NegInf,
            fusion: FusionMode::Attentive,
            encoder_dim: HashedEncoderConfig::default().out_dim,
            hidden_dim: 128,
            common_dim: 64,
            margin: train.margin,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            negative_ratio: 1.0,
            rerank_hash_dim: PairFeatureConfig::default().hash_dim,
            rerank_batch_size: scorer.batch_size,
            rerank_epochs: scorer.epochs,
            rerank_learning_rate: scorer.learning_rate,
            rerank_weight_decay: scorer.weight_decay,
        }
    }
}

impl PipelineConfig {
    pub fn preset(name: &str, output_dir: impl Into<PathBuf>) -> Result<Self> {
        if !PRESETS.contains(&name) {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (valid: {})",
                PRESETS.join(", ")
            )));
        }
        Ok(Self {
            preset: Some(name.to_string()),
            output_dir: output_dir.into(),
            ..Self::default()
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.dataset) {
            (Some(_), Some(_)) => return Err(Error::Config("set either preset or dataset, not both".into())),
            (None, None) => return Err(Error::Config("one of preset or dataset is required".into())),
            (Some(p), None) if !PRESETS.contains(&p.as_str()) => {
                return Err(Error::Config(format!(
                    "unknown preset `{p}` (valid: {})",
                    PRESETS.join(", ")
                )))
            }
            (None, Some(_)) if self.image_embeddings.is_none() => {
                return Err(Error::Config("a dataset needs image_embeddings".into()))
            }
            _ => {}
        }
        self.format.parse::<Format>()?;
        self.candidates()?;
        let counts = [
            ("holdout", self.holdout),
            ("encoder_dim", self.encoder_dim),
            ("hidden_dim", self.hidden_dim),
            ("common_dim", self.common_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("rerank_hash_dim", self.rerank_hash_dim),
            ("rerank_batch_size", self.rerank_batch_size),
            ("rerank_epochs", self.rerank_epochs),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.training().validate()?;
        self.encoder().validate()?;
        if !(self.negative_ratio > 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::Config("negative_ratio must be positive".into()));
        }
        if !(self.rerank_learning_rate > 0.0) || !(self.rerank_weight_decay >= 0.0) {
            return Err(Error::Config("invalid re-ranker optimizer settings".into()));
        }
        Ok(())
    }

    /// Fraction 0.2 when neither key is set.
    pub fn candidates(&self) -> Result<CandidateCount> {
        match (self.candidate_k, self.candidate_fraction) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set at most one of candidate_k and candidate_fraction".into(),
            )),
            (Some(k), None) => CandidateCount::Fixed(k).checked(),
            (None, Some(f)) => CandidateCount::Fraction(f).checked(),
            (None, None) => Ok(CandidateCount::Fraction(0.2)),
        }
    }

    pub fn set_candidates(&mut self, count: CandidateCount) {
        match count {
            CandidateCount::Fixed(k) => {
                self.candidate_k = Some(k);
                self.candidate_fraction = None;
            }
            CandidateCount::Fraction(f) => {
                self.candidate_k = None;
                self.candidate_fraction = Some(f);
            }
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_pairs: 2000,
            ..SyntheticConfig::small(self.seed)
        }
    }

    pub fn encoder(&self) -> HashedEncoderConfig {
        HashedEncoderConfig {
            out_dim: self.encoder_dim,
            seed: self.seed,
            ..HashedEncoderConfig::default()
        }
    }

    pub fn shape(&self, image_dim: usize) -> ModelShape {
        ModelShape {
            url_dim: self.encoder_dim,
            image_dim,
            caption_dim: self.encoder_dim,
            hidden_dim: self.hidden_dim,
            common_dim: self.common_dim,
            fusion: self.fusion,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            margin: self.margin,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn pair_features(&self) -> PairFeatureConfig {
        PairFeatureConfig {
            hash_dim: self.rerank_hash_dim,
            seed: self.seed,
            ..PairFeatureConfig::default()
        }
    }

    pub fn scorer_training(&self) -> ScorerTrainConfig {
        ScorerTrainConfig {
            batch_size: self.rerank_batch_size,
            epochs: self.rerank_epochs,
            learning_rate: self.rerank_learning_rate,
            weight_decay: self.rerank_weight_decay,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let c = PipelineConfig::from_toml(
            "preset = \"synthetic-small\"\noutput_dir = \"/tmp/x\"\ncandidate_k = 40\nfusion = \"concat\"\nmask_mode = \"zero\"\n",
        )
        .unwrap();
        assert_eq!(c.candidates().unwrap(), CandidateCount::Fixed(40));
        assert_eq!(c.fusion, FusionMode::Concat);
        assert_eq!(c.mask_mode, MaskMode::Zero);
    }

    #[test]
    fn rejects_unknown_keys_and_double_candidates() {
        assert!(PipelineConfig::from_toml("preset = \"synthetic-small\"\ncandidat_k = 3\n").is_err());
        let both = "preset = \"synthetic-small\"\ncandidate_k = 10\ncandidate_fraction = 0.2\n";
        assert!(matches!(PipelineConfig::from_toml(both), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("preset = \"nope\"\n").is_err());
        assert!(PipelineConfig::from_toml("preset = \"synthetic-small\"\nepochs = 0\n").is_err());
    }

    #[test]
    fn candidate_count_parsing() {
        assert_eq!("1000".parse::<CandidateCount>().unwrap(), CandidateCount::Fixed(1000));
        assert_eq!("20%".parse::<CandidateCount>().unwrap(), CandidateCount::Fraction(0.2));
        assert_eq!("0.5".parse::<CandidateCount>().unwrap(), CandidateCount::Fraction(0.5));
        assert!("0".parse::<CandidateCount>().is_err());
        assert!("150%".parse::<CandidateCount>().is_err());
        assert_eq!(CandidateCount::Fraction(0.2).resolve(200, 5), 40);
        assert_eq!(CandidateCount::Fixed(1000).resolve(200, 5), 200);
        assert_eq!(CandidateCount::Fixed(2).resolve(200, 5), 5);
    }
}
