//! Fixed-dimension vectors for texts and images, and the EMB1 file format.
//!
//! The hashed character n-gram encoder is a frozen stand-in for a pretrained
//! text backbone. Image vectors are never computed here; they are imported
//! from EMB1 files or produced by the synthetic corpus generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashing::{char_ngrams, fnv1a, splitmix64};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const EMB1_HEADER: usize = 4 + 4 + 4 + 1;
const NORM_TOLERANCE: f64 = 1e-6;

/// Dense row-major `rows x dim` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::DimensionOverflow(format!("{rows} x {dim}")))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "embedding data length",
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding row {} column {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        let m = Self {
            rows,
            dim,
            data,
            normalized,
        };
        if normalized {
            for i in 0..rows {
                let norm = l2_norm(m.row(i));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::InvalidData(format!(
                        "row {i} has norm {norm} but the matrix is flagged normalized"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Builds a matrix from equal-length rows; `normalized` is inferred.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "embedding row",
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let normalized = !rows.is_empty()
            && rows
                .iter()
                .all(|r| (l2_norm(r.as_ref()) - 1.0).abs() <= NORM_TOLERANCE);
        Self::new(rows.len(), dim, data, normalized)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::out_of_range("embedding row", i, format!("< {}", self.rows)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data, self.normalized)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEncoderConfig {
    /// Size of the sparse hashed n-gram space.
    pub dim: usize,
    pub out_dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for HashedEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 1 << 18,
            out_dim: 128,
            ngram_min: 3,
            ngram_max: 5,
            seed: 0,
        }
    }
}

impl HashedEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "n-gram bounds {}..={} are invalid",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.out_dim < 2 || self.dim == 0 {
            return Err(Error::Config(format!(
                "encoder dimensions {} -> {} are invalid",
                self.dim, self.out_dim
            )));
        }
        Ok(())
    }
}

/// Encodes `text` as a unit-norm vector of length `config.out_dim`.
///
/// N-gram counts land in a sparse space of size `config.dim`, which is then
/// multiplied by a seeded ±1 matrix whose entries are regenerated from the
/// hash of (feature index, column block) instead of being stored.
pub fn encode_text_hashed(text: &str, config: &HashedEncoderConfig) -> Result<Vec<f32>> {
    config.validate()?;
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::EmptyInput("text to encode".into()));
    }
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for gram in char_ngrams(text, config.ngram_min, config.ngram_max) {
        let slot = fnv1a(config.seed, gram.as_bytes()) % config.dim as u64;
        *counts.entry(slot).or_insert(0.0) += 1.0;
    }

    let mut out = vec![0.0f64; config.out_dim];
    for (&slot, &count) in &counts {
        let key = splitmix64(config.seed ^ slot.wrapping_mul(0x2545_f491_4f6c_dd1d));
        for (block, chunk) in out.chunks_mut(64).enumerate() {
            let bits = splitmix64(key.wrapping_add(block as u64));
            for (k, o) in chunk.iter_mut().enumerate() {
                if bits >> k & 1 == 1 {
                    *o += count;
                } else {
                    *o -= count;
                }
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector("hashed projection"));
    }
    Ok(out.iter().map(|v| (v / norm) as f32).collect())
}

/// Encodes many texts in parallel; row `i` encodes `texts[i]`.
pub fn encode_texts<S: AsRef<str> + Sync>(
    texts: &[S],
    config: &HashedEncoderConfig,
) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f32>> = texts
        .par_iter()
        .map(|t| encode_text_hashed(t.as_ref(), config))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return EmbeddingMatrix::new(0, config.out_dim, Vec::new(), false);
    }
    EmbeddingMatrix::from_rows(&rows)
}

pub fn embeddings_to_bytes(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(m.rows).map_err(|_| Error::DimensionOverflow(format!("{} rows", m.rows)))?;
    let d = u32::try_from(m.dim).map_err(|_| Error::DimensionOverflow(format!("dim {}", m.dim)))?;
    let mut out = Vec::with_capacity(EMB1_HEADER + m.data.len() * 4);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.push(u8::from(m.normalized));
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != EMB1_MAGIC {
        return Err(Error::BadMagic {
            expected: "EMB1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < EMB1_HEADER {
        return Err(Error::Truncated {
            expected: EMB1_HEADER,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let normalized = match bytes[12] {
        0 => false,
        1 => true,
        other => return Err(Error::InvalidData(format!("normalized flag {other}"))),
    };
    let payload = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::DimensionOverflow(format!("{n} x {d} float32 values")))?;
    let expected = EMB1_HEADER + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[EMB1_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n, d, data, normalized)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    fs::write(path, embeddings_to_bytes(m)?).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let cfg = HashedEncoderConfig::default();
        let a = encode_text_hashed("abc", &cfg).unwrap();
        let b = encode_text_hashed("abc", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        for text in ["abc", "a", "Half Dome 1899", "Café de Flore"] {
            let v = encode_text_hashed(text, &cfg).unwrap();
            assert!((l2_norm(&v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shared_ngrams_dominate_similarity() {
        let cfg = HashedEncoderConfig::default();
        let sitting = encode_text_hashed("cat sitting", &cfg).unwrap();
        let siting = encode_text_hashed("cat siting", &cfg).unwrap();
        let zebra = encode_text_hashed("zebra quantum", &cfg).unwrap();
        assert!(cosine(&sitting, &siting) > cosine(&sitting, &zebra));
    }

    #[test]
    fn empty_text_rejected() {
        let cfg = HashedEncoderConfig::default();
        assert!(matches!(encode_text_hashed("  ", &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = HashedEncoderConfig {
            ngram_min: 4,
            ngram_max: 3,
            ..Default::default()
        };
        assert!(encode_text_hashed("abc", &cfg).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let cfg = HashedEncoderConfig::default();
        let texts = ["one", "two", "three"];
        let m = encode_texts(&texts, &cfg).unwrap();
        assert!(m.is_normalized());
        for (i, t) in texts.iter().enumerate() {
            assert_eq!(m.row(i), encode_text_hashed(t, &cfg).unwrap().as_slice());
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = EmbeddingMatrix::new(2, 3, vec![0.1, -2.5, 3.0e-30, 7.0, f32::MIN_POSITIVE, -0.0], false)
            .unwrap();
        let back = embeddings_from_bytes(&embeddings_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back.rows(), 2);
        let bits = |m: &EmbeddingMatrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn malformed_files() {
        let mut bytes = embeddings_to_bytes(&EmbeddingMatrix::new(1, 2, vec![1.0, 2.0], false).unwrap()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(embeddings_from_bytes(&bad), Err(Error::BadMagic { .. })));

        // header claims 10 rows of 3, payload holds 9
        let mut short = Vec::new();
        short.extend_from_slice(b"EMB1");
        short.extend_from_slice(&10u32.to_le_bytes());
        short.extend_from_slice(&3u32.to_le_bytes());
        short.push(0);
        short.extend(std::iter::repeat(0u8).take(9 * 3 * 4));
        assert!(matches!(embeddings_from_bytes(&short), Err(Error::Truncated { .. })));

        bytes.push(0);
        assert!(matches!(embeddings_from_bytes(&bytes), Err(Error::TrailingData { .. })));
    }

    #[test]
    fn select_rows_keeps_order() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = m.select_rows(&[1, 0, 1]).unwrap();
        assert_eq!(s.row(0), &[0.0, 1.0]);
        assert_eq!(s.rows(), 3);
        assert!(m.select_rows(&[2]).is_err());
    }
}
