//! Relative 2D positional embedding: sinusoids of the eight vertex-coordinate
//! offsets between a segment's box and a base box, linearly projected to `d`.

use super::{Document, Quad};
use crate::error::{Error, Result};
use crate::nn::init_param;
use crate::tensor::{Float, Graph, ParamStore, Tensor, Var};

pub const NORMALIZED_EXTENT: f64 = 100.0;

pub fn init(store: &mut ParamStore, seed: u64, d_sinu: usize, d: usize) -> crate::tensor::Result<()> {
    init_param(store, seed, "layout.proj", &[8 * d_sinu, d], 8 * d_sinu)
}

/// Scales every vertex into `[0, 100]^2` page coordinates.
pub fn normalize_boxes(doc: &Document) -> Result<Vec<Quad>> {
    let (w, h) = doc.page_size;
    if w == 0 || h == 0 {
        return Err(Error::Input(format!("{}: page size {w}x{h}", doc.id)));
    }
    let (sx, sy) = (NORMALIZED_EXTENT / w as f64, NORMALIZED_EXTENT / h as f64);
    Ok(doc
        .segments
        .iter()
        .map(|s| s.quad.map(|[x, y]| [x * sx, y * sy]))
        .collect())
}

/// `[sin(x/10000^(2k/d)), cos(x/10000^(2k/d))]` for `k = 0..d/2`, interleaved.
pub fn sinusoidal(x: f64, d_sinu: usize) -> Result<Vec<f64>> {
    if d_sinu == 0 || !d_sinu.is_multiple_of(2) {
        return Err(Error::Config(format!("sinusoidal width {d_sinu} must be even")));
    }
    let mut out = Vec::with_capacity(d_sinu);
    for k in 0..d_sinu / 2 {
        let freq = 10000f64.powf(2.0 * k as f64 / d_sinu as f64);
        let a = x / freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

/// Offsets `box_i - box_base` in the order tl.x, tl.y, tr.x, tr.y, br.x, br.y, bl.x, bl.y.
pub fn vertex_offsets(boxes: &Quad, base: &Quad) -> [f64; 8] {
    let mut out = [0.0; 8];
    for v in 0..4 {
        out[2 * v] = boxes[v][0] - base[v][0];
        out[2 * v + 1] = boxes[v][1] - base[v][1];
    }
    out
}

/// Pre-projection features: one row of `8 * d_sinu` sinusoids per segment.
pub fn offset_features(boxes: &[Quad], base: usize, d_sinu: usize) -> Result<Vec<Vec<f64>>> {
    boxes
        .iter()
        .map(|b| {
            let mut row = Vec::with_capacity(8 * d_sinu);
            for off in vertex_offsets(b, &boxes[base]) {
                row.extend(sinusoidal(off, d_sinu)?);
            }
            Ok(row)
        })
        .collect()
}

/// `PE`: projected offsets of every segment against `base`, repeated over
/// each segment's `l` rows. Shape `(n*l) x d`.
pub fn rel_pos_embed(
    g: &mut Graph,
    store: &ParamStore,
    boxes: &[Quad],
    base: usize,
    d_sinu: usize,
    l: usize,
) -> Result<Var> {
    let feats = offset_features(boxes, base, d_sinu)?;
    let data: Vec<Float> = feats.iter().flatten().map(|&v| v as Float).collect();
    let f = g.constant(Tensor::new(vec![boxes.len(), 8 * d_sinu], data)?);
    let w = g.param(store, "layout.proj")?;
    let pe = g.matmul(f, w)?;
    Ok(g.repeat_interleave_rows(pe, l)?)
}
