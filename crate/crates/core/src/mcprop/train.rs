use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grad::{loss_and_grad, Batch};
use super::{McPropModel, ModelShape};
use crate::data::Dataset;
use crate::embed::{encode_texts, EmbeddingMatrix, HashedEncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::linalg::Matrix;
use crate::optim::{AdamConfig, AdamW};
use crate::retrieval::{cosine_scores, top_k, Provenance, DEFAULT_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    /// Triplet margin.
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            batch_size: 32,
            epochs: 30,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("margin must be a finite non-negative number".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// Raw per-record model inputs for one dataset.
///
/// `urls` and `images` follow `dataset.queries()` order, `captions` follows
/// `dataset.captions()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityInputs {
    pub urls: Matrix,
    pub images: Matrix,
    pub captions: Matrix,
}

impl ModalityInputs {
    /// Hashes cleaned URLs and caption texts; looks up each query's image row.
    pub fn from_dataset(d: &Dataset, encoder: &HashedEncoderConfig, image_bank: &EmbeddingMatrix) -> Result<Self> {
        let url_texts: Vec<&str> = d.queries().iter().map(|q| q.cleaned_url.as_str()).collect();
        let caption_texts: Vec<&str> = d.captions().iter().map(|c| c.text.as_str()).collect();
        let image_rows: Vec<usize> = d
            .queries()
            .iter()
            .map(|q| {
                q.image_embedding_ref.ok_or(Error::UnknownId {
                    kind: "image embedding for query",
                    id: q.id,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            urls: to_matrix(&encode_texts(&url_texts, encoder)?),
            images: to_matrix(&image_bank.select_rows(&image_rows)?),
            captions: to_matrix(&encode_texts(&caption_texts, encoder)?),
        })
    }
}

impl ModalityInputs {
    /// Rows for the records of `subset`, taken from embeddings computed over
    /// `full` (URL rows in query order, caption rows in caption order).
    pub fn from_embeddings(
        subset: &Dataset,
        full: &Dataset,
        urls: &EmbeddingMatrix,
        captions: &EmbeddingMatrix,
        image_bank: &EmbeddingMatrix,
    ) -> Result<Self> {
        for (context, expected, actual) in [
            ("url embedding rows", full.queries().len(), urls.rows()),
            ("caption embedding rows", full.captions().len(), captions.rows()),
        ] {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        let mut url_rows = Vec::with_capacity(subset.queries().len());
        let mut image_rows = Vec::with_capacity(subset.queries().len());
        for q in subset.queries() {
            url_rows.push(full.query_position(q.id).ok_or(Error::UnknownId { kind: "query", id: q.id })?);
            image_rows.push(q.image_embedding_ref.ok_or(Error::UnknownId {
                kind: "image embedding for query",
                id: q.id,
            })?);
        }
        let caption_rows: Vec<usize> = subset
            .captions()
            .iter()
            .map(|c| full.caption_position(c.id).ok_or(Error::UnknownId { kind: "caption", id: c.id }))
            .collect::<Result<_>>()?;
        Ok(Self {
            urls: to_matrix(&urls.select_rows(&url_rows)?),
            images: to_matrix(&image_bank.select_rows(&image_rows)?),
            captions: to_matrix(&captions.select_rows(&caption_rows)?),
        })
    }
}

pub(crate) fn to_matrix(m: &EmbeddingMatrix) -> Matrix {
    let data = m.data().iter().map(|&v| f64::from(v)).collect();
    Matrix::from_vec(m.rows(), m.dim(), data).expect("embedding shape is consistent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub metrics: MetricsReport,
    /// Mean fusion weights over validation queries (attentive fusion only).
    pub mean_alpha_u: Option<f64>,
    pub mean_alpha_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: ValidationSummary,
}

/// Retrieval metrics of `model` on a dataset with ground truth.
pub fn evaluate_model(model: &McPropModel, d: &Dataset, inputs: &ModalityInputs) -> Result<ValidationSummary> {
    let gt = d.ground_truth().ok_or(Error::MissingGroundTruth)?;
    let (queries, alphas) = model.encode_queries(&inputs.urls, &inputs.images)?;
    let captions = model.encode_captions(&inputs.captions)?;
    let scores = cosine_scores(&queries, &captions, DEFAULT_BLOCK, Provenance::McProp)?;
    let k = d.captions().len().min(10);
    let candidates = top_k(&scores, k)?.relabel(&d.query_ids(), &d.caption_ids())?;
    let metrics = evaluate(&candidates, gt)?;
    let known: Vec<(f64, f64)> = alphas.into_iter().flatten().collect();
    let (mean_alpha_u, mean_alpha_v) = if known.is_empty() {
        (None, None)
    } else {
        let n = known.len() as f64;
        (
            Some(known.iter().map(|a| a.0).sum::<f64>() / n),
            Some(known.iter().map(|a| a.1).sum::<f64>() / n),
        )
    };
    Ok(ValidationSummary {
        metrics,
        mean_alpha_u,
        mean_alpha_v,
    })
}

fn gather(inputs: &ModalityInputs, pairs: &[(usize, usize)]) -> Batch {
    let pick = |m: &Matrix, rows: &mut dyn Iterator<Item = usize>| {
        let data: Vec<f64> = rows.flat_map(|r| m.row(r).to_vec()).collect();
        Matrix::from_vec(pairs.len(), m.cols(), data).expect("row width is fixed")
    };
    Batch {
        urls: pick(&inputs.urls, &mut pairs.iter().map(|p| p.0)),
        images: pick(&inputs.images, &mut pairs.iter().map(|p| p.0)),
        captions: pick(&inputs.captions, &mut pairs.iter().map(|p| p.1)),
    }
}

/// Mini-batch AdamW on the triplet loss; evaluates on `val` after every epoch.
///
/// Ground-truth pairs are reshuffled each epoch. A trailing batch of one
/// pair is merged into the previous batch so every batch has a negative.
pub fn train_mcprop(
    train: &Dataset,
    train_inputs: &ModalityInputs,
    val: &Dataset,
    val_inputs: &ModalityInputs,
    shape: &ModelShape,
    config: &TrainingConfig,
) -> Result<(McPropModel, Vec<EpochRecord>)> {
    config.validate()?;
    let mut pairs = train.matched_positions()?;
    if pairs.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "training set has {} matched pairs, need at least 2",
            pairs.len()
        )));
    }
    let expect = [
        ("url", train_inputs.urls.cols(), shape.url_dim),
        ("image", train_inputs.images.cols(), shape.image_dim),
        ("caption", train_inputs.captions.cols(), shape.caption_dim),
    ];
    for (_, actual, expected) in expect {
        if actual != expected {
            return Err(Error::DimensionMismatch {
                context: "model input width",
                expected,
                actual,
            });
        }
    }

    let mut model = McPropModel::init(shape, config.seed);
    let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut optimizer = AdamW::new(AdamConfig::new(config.learning_rate, config.weight_decay), &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        pairs.shuffle(&mut rng);
        let mut batches: Vec<&[(usize, usize)]> = pairs.chunks(config.batch_size).collect();
        if batches.len() > 1 && batches[batches.len() - 1].len() < 2 {
            batches.pop();
            let start = (batches.len() - 1) * config.batch_size;
            let last = batches.len() - 1;
            batches[last] = &pairs[start..];
        }
        let mut loss_sum = 0.0;
        for chunk in &batches {
            let batch = gather(train_inputs, chunk);
            let (loss, grad) = loss_and_grad(&model, &batch, config.margin)?;
            loss_sum += loss;
            let grads: Vec<&[f64]> = grad.tensors().into_iter().map(|(_, t)| t).collect();
            optimizer.step(&mut model.tensors_mut(), &grads);
        }
        let validation = evaluate_model(&model, val, val_inputs)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            validation,
        });
    }
    Ok((model, history))
}
