//! Model checkpoint: `MCPK`, u32 version, u8 fusion mode, then four heads
//! (url, image, caption, fusion) each as u32 layer count followed by
//! per-layer u32 in, u32 out, weights and biases as little-endian f64.

use std::fs;
use std::path::Path;

use super::fusion::FusionParams;
use super::layers::{Linear, ProjectionHead};
use super::{McPropModel, QueryFusion};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCPK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_head(w: &mut Writer, head: &ProjectionHead) -> Result<()> {
    w.u32(head.layers.len())?;
    for l in &head.layers {
        w.u32(l.in_dim)?;
        w.u32(l.out_dim)?;
        w.f64s(&l.weight);
        w.f64s(&l.bias);
    }
    Ok(())
}

fn read_head(r: &mut Reader<'_>) -> Result<ProjectionHead> {
    let n = r.u32()?;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let in_dim = r.u32()?;
        let out_dim = r.u32()?;
        let count = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| Error::DimensionOverflow(format!("{in_dim} x {out_dim} layer")))?;
        let weight = r.f64s(count)?;
        let bias = r.f64s(out_dim)?;
        layers.push(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        });
    }
    ProjectionHead::from_layers(layers)
}

pub fn model_to_bytes(model: &McPropModel) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.raw(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize)?;
    let (mode, fusion_head) = match &model.fusion {
        QueryFusion::Attentive(p) => (0u8, &p.mlp),
        QueryFusion::Concat(h) => (1u8, h),
    };
    w.u8(mode);
    write_head(&mut w, &model.url_head)?;
    write_head(&mut w, &model.image_head)?;
    write_head(&mut w, &model.caption_head)?;
    write_head(&mut w, fusion_head)?;
    Ok(w.bytes)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<McPropModel> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mode = r.u8()?;
    let url_head = read_head(&mut r)?;
    let image_head = read_head(&mut r)?;
    let caption_head = read_head(&mut r)?;
    let fusion_head = read_head(&mut r)?;
    r.finish()?;
    let fusion = match mode {
        0 => QueryFusion::Attentive(FusionParams::from_mlp(fusion_head)?),
        1 => QueryFusion::Concat(fusion_head),
        other => return Err(Error::InvalidData(format!("fusion mode tag {other}"))),
    };
    let model = McPropModel {
        url_head,
        image_head,
        caption_head,
        fusion,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &McPropModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<McPropModel> {
    model_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
