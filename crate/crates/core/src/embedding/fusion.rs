//! Fusion encoder: one post-norm transformer layer applied to `TE + VE + PE`,
//! with self-attention restricted to the characters of each segment.

use super::CharMask;
use crate::nn::{dropout, init_param, linear};
use crate::rng::Rng;
use crate::tensor::{Float, Graph, ParamStore, Result, Tensor, Var};

const MASKED: Float = -1e9;
const LN_EPS: Float = 1e-5;

pub fn init(store: &mut ParamStore, seed: u64, d: usize, d_ff: usize) -> Result<()> {
    for name in ["q", "k", "v", "o"] {
        init_param(store, seed, &format!("encoder.w{name}"), &[d, d], d)?;
        init_param(store, seed, &format!("encoder.b{name}"), &[1, d], d)?;
    }
    init_param(store, seed, "encoder.ff1.weight", &[d, d_ff], d)?;
    init_param(store, seed, "encoder.ff1.bias", &[1, d_ff], d)?;
    init_param(store, seed, "encoder.ff2.weight", &[d_ff, d], d_ff)?;
    init_param(store, seed, "encoder.ff2.bias", &[1, d], d_ff)?;
    for ln in ["ln1", "ln2"] {
        store.insert(&format!("encoder.{ln}.gamma"), Tensor::full(&[d], 1.0))?;
        store.insert(&format!("encoder.{ln}.beta"), Tensor::zeros(&[d]))?;
    }
    Ok(())
}

/// Additive attention mask for one segment: padded key columns are excluded.
fn key_mask(l: usize, len: usize) -> Tensor {
    let mut data = vec![0.0; l * l];
    for r in 0..l {
        for c in len..l {
            data[r * l + c] = MASKED;
        }
    }
    Tensor::new(vec![l, l], data).expect("mask shape")
}

/// `E = encoder(x)` for `x` of shape `(n*l) x d`.
pub fn fuse(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    mask: &CharMask,
    heads: usize,
    p_drop: f64,
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    let d = g.shape(x)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(crate::tensor::TensorError::Domain {
            op: "fuse",
            msg: format!("{heads} heads do not divide d = {d}"),
        });
    }
    let dh = d / heads;
    let l = mask.l;
    let q = linear(g, store, x, "encoder.wq", Some("encoder.bq"))?;
    let k = linear(g, store, x, "encoder.wk", Some("encoder.bk"))?;
    let v = linear(g, store, x, "encoder.wv", Some("encoder.bv"))?;
    let scale = 1.0 / (dh as Float).sqrt();

    let mut segments = Vec::with_capacity(mask.n);
    for i in 0..mask.n {
        let qi = g.slice_rows(q, i * l, l)?;
        let ki = g.slice_rows(k, i * l, l)?;
        let vi = g.slice_rows(v, i * l, l)?;
        let bias = g.constant(key_mask(l, mask.lens[i]));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(qi, h * dh, dh)?;
            let kh = g.slice_cols(ki, h * dh, dh)?;
            let vh = g.slice_cols(vi, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale);
            let s = g.add(s, bias)?;
            let a = g.softmax_rows(s)?;
            outs.push(g.matmul(a, vh)?);
        }
        segments.push(g.concat_cols(&outs)?);
    }
    let attn = g.concat_rows(&segments)?;
    let attn = linear(g, store, attn, "encoder.wo", Some("encoder.bo"))?;
    let attn = dropout(g, attn, p_drop, rng.as_deref_mut())?;
    let x1 = g.add(x, attn)?;
    let (g1, b1) = (
        g.param(store, "encoder.ln1.gamma")?,
        g.param(store, "encoder.ln1.beta")?,
    );
    let x1 = g.layer_norm(x1, g1, b1, LN_EPS)?;

    let f = linear(g, store, x1, "encoder.ff1.weight", Some("encoder.ff1.bias"))?;
    let f = g.relu(f);
    let f = linear(g, store, f, "encoder.ff2.weight", Some("encoder.ff2.bias"))?;
    let f = dropout(g, f, p_drop, rng)?;
    let x2 = g.add(x1, f)?;
    let (g2, b2) = (
        g.param(store, "encoder.ln2.gamma")?,
        g.param(store, "encoder.ln2.beta")?,
    );
    g.layer_norm(x2, g2, b2, LN_EPS)
}
