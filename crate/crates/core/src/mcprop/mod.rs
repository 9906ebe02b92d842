//! Multi-modal caption proposal: projection heads into a common space,
//! attentive (or concatenation) fusion of the URL-text and image vectors,
//! and triplet training with in-batch hard negatives.

mod checkpoint;
mod fusion;
mod grad;
mod layers;
mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fusion::{
    fuse_attentive, fuse_attentive_backward, fuse_attentive_cached, fuse_concat, FusedQuery, FusionCache,
    FusionParams,
};
pub use grad::{loss_and_grad, Batch};
pub use layers::{HeadCache, Linear, ProjectionHead};
pub use loss::{triplet_loss, triplet_loss_with_grad};
pub use train::{
    evaluate_model, train_mcprop, EpochRecord, ModalityInputs, TrainingConfig, ValidationSummary,
};

use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Attentive,
    Concat,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attentive" => Ok(Self::Attentive),
            "concat" => Ok(Self::Concat),
            other => Err(Error::Config(format!(
                "unknown fusion mode `{other}` (expected attentive or concat)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Attentive => "attentive",
            Self::Concat => "concat",
        })
    }
}

/// Layer sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub url_dim: usize,
    pub image_dim: usize,
    pub caption_dim: usize,
    pub hidden_dim: usize,
    pub common_dim: usize,
    pub fusion: FusionMode,
}

/// How the two query vectors become one.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryFusion {
    Attentive(FusionParams),
    /// Single linear layer over `[u ‖ v]`.
    Concat(ProjectionHead),
}

/// Model parameters. Also used as the gradient container of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct McPropModel {
    pub url_head: ProjectionHead,
    pub image_head: ProjectionHead,
    pub caption_head: ProjectionHead,
    pub fusion: QueryFusion,
}

impl McPropModel {
    pub fn init(shape: &ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = shape.common_dim;
        let url_head = ProjectionHead::init(&[shape.url_dim, shape.hidden_dim, c], &mut rng);
        let image_head = ProjectionHead::init(&[shape.image_dim, shape.hidden_dim, c], &mut rng);
        let caption_head = ProjectionHead::init(&[shape.caption_dim, shape.hidden_dim, c], &mut rng);
        let fusion = match shape.fusion {
            FusionMode::Attentive => QueryFusion::Attentive(FusionParams::init(c, c, &mut rng)),
            FusionMode::Concat => QueryFusion::Concat(ProjectionHead::init(&[2 * c, c], &mut rng)),
        };
        Self {
            url_head,
            image_head,
            caption_head,
            fusion,
        }
    }

    /// Checks that every head lands in the same common space.
    pub fn validate(&self) -> Result<()> {
        let c = self.common_dim();
        for (name, head) in [("image head", &self.image_head), ("caption head", &self.caption_head)] {
            if head.out_dim() != c {
                return Err(Error::InvalidData(format!(
                    "{name} emits {} values, common space has {c}",
                    head.out_dim()
                )));
            }
        }
        let (fusion_in, fusion_out) = match &self.fusion {
            QueryFusion::Attentive(p) => (p.input_dim(), c),
            QueryFusion::Concat(h) => (h.in_dim(), h.out_dim()),
        };
        if fusion_in != 2 * c || fusion_out != c {
            return Err(Error::InvalidData("fusion dimensions do not match the common space".into()));
        }
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn common_dim(&self) -> usize {
        self.url_head.out_dim()
    }

    pub fn fusion_mode(&self) -> FusionMode {
        match self.fusion {
            QueryFusion::Attentive(_) => FusionMode::Attentive,
            QueryFusion::Concat(_) => FusionMode::Concat,
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            url_dim: self.url_head.in_dim(),
            image_dim: self.image_head.in_dim(),
            caption_dim: self.caption_head.in_dim(),
            hidden_dim: self.url_head.layers[0].out_dim,
            common_dim: self.common_dim(),
            fusion: self.fusion_mode(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            url_head: self.url_head.zeros_like(),
            image_head: self.image_head.zeros_like(),
            caption_head: self.caption_head.zeros_like(),
            fusion: match &self.fusion {
                QueryFusion::Attentive(p) => QueryFusion::Attentive(FusionParams {
                    mlp: p.mlp.zeros_like(),
                }),
                QueryFusion::Concat(h) => QueryFusion::Concat(h.zeros_like()),
            },
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.url_head.tensors("url_head", &mut out);
        self.image_head.tensors("image_head", &mut out);
        self.caption_head.tensors("caption_head", &mut out);
        match &self.fusion {
            QueryFusion::Attentive(p) => p.mlp.tensors("fusion_mlp", &mut out),
            QueryFusion::Concat(h) => h.tensors("concat_head", &mut out),
        }
        out
    }

    /// Mutable parameter tensors, same order as [`McPropModel::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.url_head.tensors_mut(&mut out);
        self.image_head.tensors_mut(&mut out);
        self.caption_head.tensors_mut(&mut out);
        match &mut self.fusion {
            QueryFusion::Attentive(p) => p.mlp.tensors_mut(&mut out),
            QueryFusion::Concat(h) => h.tensors_mut(&mut out),
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Fused query vector plus `(α_u, α_v)` when fusion is attentive.
    pub fn encode_query(&self, url: &[f64], image: &[f64]) -> Result<(Vec<f64>, Option<(f64, f64)>)> {
        let u = self.url_head.forward(url)?;
        let v = self.image_head.forward(image)?;
        match &self.fusion {
            QueryFusion::Attentive(p) => {
                let fused = fuse_attentive(&u, &v, p)?;
                Ok((fused.q, Some((fused.alpha_u, fused.alpha_v))))
            }
            QueryFusion::Concat(h) => Ok((fuse_concat(&u, &v, h)?, None)),
        }
    }

    pub fn encode_caption(&self, caption: &[f64]) -> Result<Vec<f64>> {
        self.caption_head.forward(caption)
    }

    /// Encodes every query row; rows are independent so the work is parallel.
    pub fn encode_queries(&self, urls: &Matrix, images: &Matrix) -> Result<(Matrix, Vec<Option<(f64, f64)>>)> {
        if urls.rows() != images.rows() {
            return Err(Error::DimensionMismatch {
                context: "query url/image row count",
                expected: urls.rows(),
                actual: images.rows(),
            });
        }
        let encoded: Vec<(Vec<f64>, Option<(f64, f64)>)> = (0..urls.rows())
            .into_par_iter()
            .map(|i| self.encode_query(urls.row(i), images.row(i)))
            .collect::<Result<_>>()?;
        let (rows, alphas): (Vec<_>, Vec<_>) = encoded.into_iter().unzip();
        Ok((stack(rows, self.common_dim())?, alphas))
    }

    pub fn encode_captions(&self, captions: &Matrix) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..captions.rows())
            .into_par_iter()
            .map(|i| self.encode_caption(captions.row(i)))
            .collect::<Result<_>>()?;
        stack(rows, self.common_dim())
    }
}

fn stack(rows: Vec<Vec<f64>>, cols: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(&rows)
}

/// Cosine similarity of every fused query against every projected caption.
pub fn batch_similarity(
    model: &McPropModel,
    queries: &[(Vec<f64>, Vec<f64>)],
    captions: &[Vec<f64>],
) -> Result<Matrix> {
    if queries.len() != captions.len() {
        return Err(Error::DimensionMismatch {
            context: "batch query/caption count",
            expected: queries.len(),
            actual: captions.len(),
        });
    }
    if queries.len() < 2 {
        return Err(Error::out_of_range("batch size", queries.len(), ">= 2"));
    }
    let q: Vec<Vec<f64>> = queries
        .iter()
        .map(|(u, v)| Ok(normalized(&model.encode_query(u, v)?.0, "fused query")?.0))
        .collect::<Result<_>>()?;
    let c: Vec<Vec<f64>> = captions
        .iter()
        .map(|c| Ok(normalized(&model.encode_caption(c)?, "projected caption")?.0))
        .collect::<Result<_>>()?;
    let b = q.len();
    let mut s = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            s.set(i, j, dot(&q[i], &c[j]).clamp(-1.0, 1.0));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_shape(fusion: FusionMode) -> ModelShape {
        ModelShape {
            url_dim: 5,
            image_dim: 4,
            caption_dim: 6,
            hidden_dim: 3,
            common_dim: 4,
            fusion,
        }
    }

    #[test]
    fn init_is_seeded_and_valid() {
        for fusion in [FusionMode::Attentive, FusionMode::Concat] {
            let a = McPropModel::init(&small_shape(fusion), 3);
            assert_eq!(a, McPropModel::init(&small_shape(fusion), 3));
            assert_ne!(a, McPropModel::init(&small_shape(fusion), 4));
            a.validate().unwrap();
            assert_eq!(a.shape(), small_shape(fusion));
            assert_eq!(a.tensors().len(), a.zeros_like().tensors().len());
        }
    }

    #[test]
    fn similarity_entries_are_bounded() {
        let model = McPropModel::init(&small_shape(FusionMode::Attentive), 1);
        let queries: Vec<_> = (0..3)
            .map(|i| {
                let f = i as f64;
                (vec![1.0 + f, -0.5, 0.2, f, 0.3], vec![0.1, f - 1.0, 0.7, 0.2])
            })
            .collect();
        let captions: Vec<_> = (0..3).map(|i| vec![i as f64 - 1.0, 0.5, 0.1, 0.2, -0.3, 1.0]).collect();
        let s = batch_similarity(&model, &queries, &captions).unwrap();
        assert!(s.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(batch_similarity(&model, &queries[..1], &captions[..1]).is_err());
    }
}
