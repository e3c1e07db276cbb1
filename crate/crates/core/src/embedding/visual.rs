//! Visual branch: a small conv backbone over the page, RoIAlign per segment
//! box, and a full-extent convolution down to one `d`-vector per segment.

use super::{quad_bounds, Document, GrayImage, Quad};
use crate::error::{Error, Result};
use crate::nn::init_param;
use crate::tensor::{Float, Graph, ParamStore, Tensor, Var};

/// Backbone strides; the map comes out at 1/4 of the page resolution.
pub const STRIDES: [usize; 3] = [2, 2, 1];
pub const FEATURE_SCALE: f64 = 0.25;

pub fn init(store: &mut ParamStore, seed: u64, channels: usize, grid: usize, d: usize) -> Result<()> {
    let mut cin = 1;
    for layer in 1..=STRIDES.len() {
        init_param(
            store,
            seed,
            &format!("backbone.conv{layer}.weight"),
            &[channels, cin, 3, 3],
            cin * 9,
        )?;
        init_param(store, seed, &format!("backbone.conv{layer}.bias"), &[channels], cin * 9)?;
        cin = channels;
    }
    let fan_in = channels * grid * grid;
    init_param(store, seed, "visual.weight", &[d, channels, grid, grid], fan_in)?;
    init_param(store, seed, "visual.bias", &[d], fan_in)?;
    Ok(())
}

/// Ink density in `[0, 1]` (white paper is 0), shape `1 x H x W`.
pub fn image_tensor(img: &GrayImage) -> Tensor {
    let data = img.pixels.iter().map(|&p| (255 - p) as Float / 255.0).collect();
    Tensor::new(vec![1, img.height, img.width], data).expect("image shape")
}

fn add_channel_bias(g: &mut Graph, store: &ParamStore, x: Var, bias: &str) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (c, hw) = (shape[0], shape[1] * shape[2]);
    let b = g.param(store, bias)?;
    let b = g.reshape(b, &[c, 1])?;
    let b = g.repeat_cols(b, hw)?;
    let b = g.reshape(b, &shape)?;
    Ok(g.add(x, b)?)
}

/// Three conv+relu layers (3x3, padding 1, strides 2,2,1) over a `1 x H x W`
/// image. `H` and `W` must be multiples of 4.
pub fn backbone(g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
    let shape = g.shape(image).to_vec();
    let (h, w) = match shape.as_slice() {
        [1, h, w] => (*h, *w),
        _ => return Err(Error::Input(format!("backbone expects a 1xHxW image, got {shape:?}"))),
    };
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::Input(format!(
            "image {w}x{h} is not divisible by 4; pad the raster"
        )));
    }
    let mut x = image;
    for (i, &stride) in STRIDES.iter().enumerate() {
        let layer = i + 1;
        let k = g.param(store, &format!("backbone.conv{layer}.weight"))?;
        x = g.conv2d(x, k, stride, 1)?;
        x = add_channel_bias(g, store, x, &format!("backbone.conv{layer}.bias"))?;
        x = g.relu(x);
    }
    Ok(x)
}

/// Bilinear taps for RoIAlign: for each of the `grid x grid` bins, the bin
/// centre is sampled once by bilinear interpolation (pixel centres at
/// half-integers, coordinates clamped to the map). Returns flat map indices
/// and weights, four per output element, for a `c x h x w` map.
pub fn roi_taps(map: (usize, usize, usize), quad: &Quad, grid: usize, scale: f64) -> Result<(Vec<usize>, Vec<Float>)> {
    let (c, h, w) = map;
    let (bx0, by0, bx1, by1) = quad_bounds(quad);
    let (x0, y0, x1, y1) = (bx0 * scale, by0 * scale, bx1 * scale, by1 * scale);
    if x1 < 0.0 || y1 < 0.0 || x0 > w as f64 || y0 > h as f64 {
        return Err(Error::Input(format!(
            "box ({bx0}, {by0})-({bx1}, {by1}) misses the {w}x{h} feature map"
        )));
    }
    let bin_w = (x1 - x0) / grid as f64;
    let bin_h = (y1 - y0) / grid as f64;
    let mut index = Vec::with_capacity(c * grid * grid * 4);
    let mut weight = Vec::with_capacity(c * grid * grid * 4);
    let axis = |v: f64, extent: usize| -> (usize, usize, f64) {
        let v = (v - 0.5).clamp(0.0, (extent - 1) as f64);
        let lo = v.floor() as usize;
        let hi = (lo + 1).min(extent - 1);
        (lo, hi, v - lo as f64)
    };
    for ch in 0..c {
        for by in 0..grid {
            let (ylo, yhi, ly) = axis(y0 + (by as f64 + 0.5) * bin_h, h);
            for bx in 0..grid {
                let (xlo, xhi, lx) = axis(x0 + (bx as f64 + 0.5) * bin_w, w);
                let base = ch * h * w;
                index.extend_from_slice(&[
                    base + ylo * w + xlo,
                    base + ylo * w + xhi,
                    base + yhi * w + xlo,
                    base + yhi * w + xhi,
                ]);
                weight.extend_from_slice(&[
                    ((1.0 - ly) * (1.0 - lx)) as Float,
                    ((1.0 - ly) * lx) as Float,
                    (ly * (1.0 - lx)) as Float,
                    (ly * lx) as Float,
                ]);
            }
        }
    }
    Ok((index, weight))
}

/// `c x grid x grid` features of `quad` (page pixels) from a map at `scale`.
pub fn roi_align(g: &mut Graph, fmap: Var, quad: &Quad, grid: usize, scale: f64) -> Result<Var> {
    let shape = g.shape(fmap).to_vec();
    let [c, h, w] = shape[..] else {
        return Err(Error::Input(format!("roi_align expects a CxHxW map, got {shape:?}")));
    };
    let (index, weight) = roi_taps((c, h, w), quad, grid, scale)?;
    Ok(g.weighted_gather(fmap, index, weight, 4, &[c, grid, grid])?)
}

/// `VE`: one vector per segment, repeated over its `l` rows. Shape `(n*l) x d`.
pub fn visual_embed(
    g: &mut Graph,
    store: &ParamStore,
    doc: &Document,
    fmap: Var,
    grid: usize,
    l: usize,
) -> Result<Var> {
    let kernel = g.param(store, "visual.weight")?;
    let d = g.shape(kernel)[0];
    let mut rows = Vec::with_capacity(doc.n());
    for seg in &doc.segments {
        let roi = roi_align(g, fmap, &seg.quad, grid, FEATURE_SCALE)?;
        let v = g.conv2d(roi, kernel, 1, 0)?;
        rows.push(g.reshape(v, &[1, d])?);
    }
    let ve = g.concat_rows(&rows)?;
    let ve = crate::nn::add_row_bias(g, store, ve, "visual.bias")?;
    Ok(g.repeat_interleave_rows(ve, l)?)
}
