use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Affine map `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }
}

/// Stack of linear layers with `tanh` between them and nothing after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub layers: Vec<Linear>,
}

/// Inputs seen by each layer during a forward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    inputs: Vec<Vec<f64>>,
}

impl ProjectionHead {
    /// `dims = [in, hidden..., out]`.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "a head needs at least one layer");
        Self {
            layers: dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("projection head without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    context: "projection head layer chain",
                    expected: pair[0].out_dim,
                    actual: pair[1].in_dim,
                });
            }
        }
        for layer in &layers {
            if layer.weight.len() != layer.in_dim * layer.out_dim || layer.bias.len() != layer.out_dim {
                return Err(Error::InvalidData("layer parameter shape".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, HeadCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "projection head input",
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&current);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(current);
            current = out;
        }
        Ok((current, HeadCache { inputs }))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &HeadCache, grad_out: &[f64], grad: &mut ProjectionHead) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grad.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
                g.bias[o] += d;
            }
            let mut grad_in = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, &w) in grad_in.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
            if l > 0 {
                // input to layer l is tanh of the previous pre-activation
                for (gi, &a) in grad_in.iter_mut().zip(input) {
                    *gi *= 1.0 - a * a;
                }
            }
            delta = grad_in;
        }
        delta
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
    }
}
