//! Combining the URL-text vector `u` and the image vector `v` into one query.

use rand::Rng;

use super::layers::{HeadCache, ProjectionHead};
use crate::error::{Error, Result};
use crate::linalg::{normalize_backward, normalized, sigmoid};

/// Scoring MLP of the attentive fusion: `[u, v]` → two pre-sigmoid scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub mlp: ProjectionHead,
}

impl FusionParams {
    /// One tanh hidden layer of width `(d_u + d_v) / 2`, then two outputs.
    pub fn init<R: Rng>(url_dim: usize, image_dim: usize, rng: &mut R) -> Self {
        let input = url_dim + image_dim;
        Self {
            mlp: ProjectionHead::init(&[input, (input / 2).max(1), 2], rng),
        }
    }

    pub fn from_mlp(mlp: ProjectionHead) -> Result<Self> {
        if mlp.out_dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "fusion MLP output",
                expected: 2,
                actual: mlp.out_dim(),
            });
        }
        Ok(Self { mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedQuery {
    pub q: Vec<f64>,
    pub alpha_u: f64,
    pub alpha_v: f64,
}

/// State kept from [`fuse_attentive_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct FusionCache {
    mlp: HeadCache,
    u_unit: Vec<f64>,
    u_norm: f64,
    v_unit: Vec<f64>,
    v_norm: f64,
    alpha_u: f64,
    alpha_v: f64,
}

/// `q = α_u·u/‖u‖ + α_v·v/‖v‖` with `(α_u, α_v) = sigmoid(MLP([u, v]))`.
pub fn fuse_attentive(u: &[f64], v: &[f64], params: &FusionParams) -> Result<FusedQuery> {
    Ok(fuse_attentive_cached(u, v, params)?.0)
}

pub fn fuse_attentive_cached(
    u: &[f64],
    v: &[f64],
    params: &FusionParams,
) -> Result<(FusedQuery, FusionCache)> {
    if u.len() + v.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "attentive fusion input",
            expected: params.input_dim(),
            actual: u.len() + v.len(),
        });
    }
    let (u_unit, u_norm) = normalized(u, "fusion input u")?;
    let (v_unit, v_norm) = normalized(v, "fusion input v")?;
    let joined: Vec<f64> = u.iter().chain(v).copied().collect();
    let (logits, mlp) = params.mlp.forward_cached(&joined)?;
    let alpha_u = sigmoid(logits[0]);
    let alpha_v = sigmoid(logits[1]);
    let q = u_unit
        .iter()
        .zip(&v_unit)
        .map(|(a, b)| alpha_u * a + alpha_v * b)
        .collect();
    Ok((
        FusedQuery { q, alpha_u, alpha_v },
        FusionCache {
            mlp,
            u_unit,
            u_norm,
            v_unit,
            v_norm,
            alpha_u,
            alpha_v,
        },
    ))
}

/// Pulls `dL/dq` back to `(dL/du, dL/dv)`, accumulating MLP gradients.
pub fn fuse_attentive_backward(
    params: &FusionParams,
    cache: &FusionCache,
    grad_q: &[f64],
    grad: &mut FusionParams,
) -> (Vec<f64>, Vec<f64>) {
    let d_alpha_u: f64 = grad_q.iter().zip(&cache.u_unit).map(|(g, x)| g * x).sum();
    let d_alpha_v: f64 = grad_q.iter().zip(&cache.v_unit).map(|(g, x)| g * x).sum();
    let d_logits = [
        d_alpha_u * cache.alpha_u * (1.0 - cache.alpha_u),
        d_alpha_v * cache.alpha_v * (1.0 - cache.alpha_v),
    ];
    let d_joined = params.mlp.backward(&cache.mlp, &d_logits, &mut grad.mlp);

    let scaled = |alpha: f64| grad_q.iter().map(|g| alpha * g).collect::<Vec<_>>();
    let mut du = normalize_backward(&cache.u_unit, cache.u_norm, &scaled(cache.alpha_u));
    let mut dv = normalize_backward(&cache.v_unit, cache.v_norm, &scaled(cache.alpha_v));
    let (du_mlp, dv_mlp) = d_joined.split_at(du.len());
    du.iter_mut().zip(du_mlp).for_each(|(a, b)| *a += b);
    dv.iter_mut().zip(dv_mlp).for_each(|(a, b)| *a += b);
    (du, dv)
}

/// `q = head([u ‖ v])`.
pub fn fuse_concat(u: &[f64], v: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    Ok(fuse_concat_cached(u, v, head)?.0)
}

pub fn fuse_concat_cached(u: &[f64], v: &[f64], head: &ProjectionHead) -> Result<(Vec<f64>, HeadCache)> {
    if u.len() + v.len() != head.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "concat fusion input",
            expected: head.in_dim(),
            actual: u.len() + v.len(),
        });
    }
    let joined: Vec<f64> = u.iter().chain(v).copied().collect();
    head.forward_cached(&joined)
}
