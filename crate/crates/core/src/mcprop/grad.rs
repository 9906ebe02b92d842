//! Analytic gradients of the batch triplet loss through cosine similarity,
//! fusion and every projection head.

use super::fusion::{fuse_attentive_backward, fuse_attentive_cached, fuse_concat_cached, FusionCache};
use super::layers::HeadCache;
use super::loss::triplet_loss_with_grad;
use super::{McPropModel, QueryFusion};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize_backward, normalized, Matrix};

/// Aligned rows: query `i` (url, image) matches caption `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub urls: Matrix,
    pub images: Matrix,
    pub captions: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.urls.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum FusionTrace {
    Attentive(FusionCache),
    Concat(HeadCache),
}

struct QueryTrace {
    url: HeadCache,
    image: HeadCache,
    fusion: FusionTrace,
    unit: Vec<f64>,
    norm: f64,
}

struct CaptionTrace {
    head: HeadCache,
    unit: Vec<f64>,
    norm: f64,
}

/// Batch loss and its gradient with respect to every model parameter.
///
/// The gradient is returned as a model-shaped value.
pub fn loss_and_grad(model: &McPropModel, batch: &Batch, margin: f64) -> Result<(f64, McPropModel)> {
    let b = batch.len();
    if batch.images.rows() != b || batch.captions.rows() != b {
        return Err(Error::DimensionMismatch {
            context: "batch row counts",
            expected: b,
            actual: batch.images.rows().min(batch.captions.rows()),
        });
    }
    if b < 2 {
        return Err(Error::out_of_range("batch size", b, ">= 2"));
    }

    let mut queries = Vec::with_capacity(b);
    for i in 0..b {
        let (u, url) = model.url_head.forward_cached(batch.urls.row(i))?;
        let (v, image) = model.image_head.forward_cached(batch.images.row(i))?;
        let (q, fusion) = match &model.fusion {
            QueryFusion::Attentive(p) => {
                let (fused, cache) = fuse_attentive_cached(&u, &v, p)?;
                (fused.q, FusionTrace::Attentive(cache))
            }
            QueryFusion::Concat(h) => {
                let (q, cache) = fuse_concat_cached(&u, &v, h)?;
                (q, FusionTrace::Concat(cache))
            }
        };
        check_finite(&q, "fused query")?;
        let (unit, norm) = normalized(&q, "fused query")?;
        queries.push(QueryTrace {
            url,
            image,
            fusion,
            unit,
            norm,
        });
    }
    let mut captions = Vec::with_capacity(b);
    for j in 0..b {
        let (c, head) = model.caption_head.forward_cached(batch.captions.row(j))?;
        check_finite(&c, "projected caption")?;
        let (unit, norm) = normalized(&c, "projected caption")?;
        captions.push(CaptionTrace { head, unit, norm });
    }

    let mut similarity = Matrix::zeros(b, b);
    for (i, q) in queries.iter().enumerate() {
        for (j, c) in captions.iter().enumerate() {
            similarity.set(i, j, dot(&q.unit, &c.unit));
        }
    }
    let (loss, d_sim) = triplet_loss_with_grad(&similarity, margin)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }

    let mut grad = model.zeros_like();
    let dim = model.common_dim();
    if loss == 0.0 {
        return Ok((loss, grad));
    }

    let mut d_caption_units = vec![vec![0.0; dim]; b];
    for (i, q) in queries.iter().enumerate() {
        let mut d_unit = vec![0.0; dim];
        for (j, c) in captions.iter().enumerate() {
            let g = d_sim.get(i, j);
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                d_unit[k] += g * c.unit[k];
                d_caption_units[j][k] += g * q.unit[k];
            }
        }
        let d_q = normalize_backward(&q.unit, q.norm, &d_unit);
        let (du, dv) = match (&model.fusion, &q.fusion, &mut grad.fusion) {
            (QueryFusion::Attentive(p), FusionTrace::Attentive(cache), QueryFusion::Attentive(g)) => {
                fuse_attentive_backward(p, cache, &d_q, g)
            }
            (QueryFusion::Concat(h), FusionTrace::Concat(cache), QueryFusion::Concat(g)) => {
                let d_joined = h.backward(cache, &d_q, g);
                let (du, dv) = d_joined.split_at(dim);
                (du.to_vec(), dv.to_vec())
            }
            _ => unreachable!("gradient container mirrors the model"),
        };
        model.url_head.backward(&q.url, &du, &mut grad.url_head);
        model.image_head.backward(&q.image, &dv, &mut grad.image_head);
    }
    for (c, d_unit) in captions.iter().zip(&d_caption_units) {
        let d_c = normalize_backward(&c.unit, c.norm, d_unit);
        model.caption_head.backward(&c.head, &d_c, &mut grad.caption_head);
    }

    for (name, t) in grad.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok((loss, grad))
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
