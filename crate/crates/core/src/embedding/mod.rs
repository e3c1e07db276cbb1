//! Multimodal character embedding: textual, visual and relative-layout
//! branches summed and fused by a transformer encoder layer.
//!
//! Every per-character tensor is laid out as an `(n*l) x d` matrix: segment
//! `i`, character `j` lives in row `i*l + j`.

mod document;
pub mod fusion;
pub mod layout;
pub mod textual;
pub mod visual;

pub use document::{quad_bounds, reading_order, rect_quad, Document, GrayImage, Point, Quad, Segment};
pub use fusion::fuse;
pub use layout::{normalize_boxes, rel_pos_embed, sinusoidal};
pub use textual::{textual_embed, CharMask, Vocab};
pub use visual::{backbone, image_tensor, roi_align, visual_embed};

use crate::error::Result;
use crate::pipeline::Config;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Per-document embedding tensors on one tape.
#[derive(Clone, Debug)]
pub struct EmbeddingBundle {
    pub te: Var,
    pub ve: Var,
    pub pe: Var,
    pub e: Var,
    pub mask: CharMask,
}

pub fn init(store: &mut ParamStore, cfg: &Config, vocab_len: usize) -> Result<()> {
    textual::init(store, cfg.seed, vocab_len, cfg.d)?;
    visual::init(store, cfg.seed, cfg.backbone_channels, cfg.roi_grid, cfg.d)?;
    layout::init(store, cfg.seed, cfg.d_sinu, cfg.d)?;
    fusion::init(store, cfg.seed, cfg.d, cfg.d_ff)?;
    Ok(())
}

/// Runs all three branches (zeroing any ablated one) and the fusion encoder.
pub fn embed(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &Config,
    doc: &Document,
    vocab: &Vocab,
    rng: Option<&mut Rng>,
) -> Result<EmbeddingBundle> {
    let mask = CharMask::from_doc(doc, cfg.max_len);
    let rows = mask.n * mask.l;
    let zeros = |g: &mut Graph| g.constant(Tensor::zeros(&[rows, cfg.d]));

    let te = if cfg.no_text {
        zeros(g)
    } else {
        textual_embed(g, store, doc, vocab, &mask)?
    };
    let ve = if cfg.no_visual {
        zeros(g)
    } else {
        let img = g.constant(image_tensor(&doc.image));
        let fmap = backbone(g, store, img)?;
        visual_embed(g, store, doc, fmap, cfg.roi_grid, cfg.max_len)?
    };
    let pe = if cfg.no_spatial {
        zeros(g)
    } else {
        let boxes = normalize_boxes(doc)?;
        let base = reading_order(boxes.iter())[0];
        rel_pos_embed(g, store, &boxes, base, cfg.d_sinu, cfg.max_len)?
    };
    let sum = g.add_all(&[te, ve, pe])?;
    let e = fuse(g, store, sum, &mask, cfg.heads, cfg.dropout, rng)?;
    Ok(EmbeddingBundle { te, ve, pe, e, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{random_tensor, GradCheck};
    use crate::tensor::Float;

    fn small_cfg() -> Config {
        Config {
            d: 8,
            d_ff: 12,
            heads: 2,
            max_len: 4,
            d_sinu: 4,
            backbone_channels: 2,
            ..Config::default()
        }
    }

    fn encoder_store(cfg: &Config) -> ParamStore {
        let mut s = ParamStore::new();
        fusion::init(&mut s, 11, cfg.d, cfg.d_ff).unwrap();
        s
    }

    fn mask(lens: &[usize], l: usize) -> CharMask {
        CharMask {
            n: lens.len(),
            l,
            lens: lens.to_vec(),
        }
    }

    fn run_fuse(store: &ParamStore, x: &Tensor, m: &CharMask, heads: usize) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let e = fuse(&mut g, store, xv, m, heads, 0.0, None).unwrap();
        g.value(e).clone()
    }

    #[test]
    fn degenerate_encoder_is_layer_norm_of_input() {
        let cfg = small_cfg();
        let mut s = encoder_store(&cfg);
        for n in ["encoder.wo", "encoder.bo", "encoder.ff2.weight", "encoder.ff2.bias"] {
            let shape = s.value(n).unwrap().shape().to_vec();
            s.set(n, Tensor::zeros(&shape)).unwrap();
        }
        let m = mask(&[4, 2], 4);
        let te = random_tensor(1, 0, &[8, 8], 2.0);
        let e = run_fuse(&s, &te, &m, 2);
        for r in 0..8 {
            let row = te.row(r);
            let mean = row.iter().sum::<Float>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / 8.0;
            for (c, &v) in row.iter().enumerate() {
                let expect = (v - mean) / (var + 1e-5).sqrt();
                assert!((e.row(r)[c] - expect).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn padded_rows_do_not_leak_into_valid_outputs() {
        let cfg = small_cfg();
        let s = encoder_store(&cfg);
        let m = mask(&[3, 1], 4);
        let a = random_tensor(2, 0, &[8, 8], 1.0);
        let mut b = a.clone();
        for r in [3usize, 5, 6, 7] {
            for c in 0..8 {
                b.data_mut()[r * 8 + c] = 42.0 + c as Float;
            }
        }
        let ea = run_fuse(&s, &a, &m, 2);
        let eb = run_fuse(&s, &b, &m, 2);
        for r in [0usize, 1, 2, 4] {
            assert_eq!(ea.row(r), eb.row(r), "row {r}");
        }
    }

    #[test]
    fn segment_permutation_commutes() {
        let cfg = small_cfg();
        let s = encoder_store(&cfg);
        let x = random_tensor(3, 0, &[12, 8], 1.0);
        let m = mask(&[4, 2, 3], 4);
        let e = run_fuse(&s, &x, &m, 2);
        let perm = [2usize, 0, 1];
        let mut px = Tensor::zeros(&[12, 8]);
        for (dst, &src) in perm.iter().enumerate() {
            px.data_mut()[dst * 32..(dst + 1) * 32].copy_from_slice(&x.data()[src * 32..(src + 1) * 32]);
        }
        let pm = mask(&[3, 4, 2], 4);
        let pe = run_fuse(&s, &px, &pm, 2);
        for (dst, &src) in perm.iter().enumerate() {
            assert!(pe.data()[dst * 32..(dst + 1) * 32]
                .iter()
                .zip(&e.data()[src * 32..(src + 1) * 32])
                .all(|(a, b)| (a - b).abs() < 1e-5));
        }
    }

    #[test]
    fn head_count_must_divide_d() {
        let cfg = small_cfg();
        let s = encoder_store(&cfg);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 8]));
        assert!(fuse(&mut g, &s, x, &mask(&[4], 4), 3, 0.0, None).is_err());
    }

    #[test]
    fn fuse_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let s = encoder_store(&cfg);
        let m = mask(&[3, 2], 3);
        let x = random_tensor(4, 0, &[6, 8], 1.0);
        let report = GradCheck::default()
            .run_with_params(&s, &[x], |g, store, v| fuse(g, store, v[0], &m, 2, 0.0, None))
            .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
