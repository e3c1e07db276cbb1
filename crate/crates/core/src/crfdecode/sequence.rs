use crate::embedding::{normalize_boxes, reading_order, CharMask, Document};
use crate::error::{Error, Result};
use crate::nn::{add_row_bias, init_param};
use crate::tensor::{self, Graph, ParamStore, Tensor, Var};

use super::TagSet;

/// Characters of one segment inside the document sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub segment: usize,
    pub start: usize,
    pub len: usize,
}

/// Mapping from the document character sequence back to `(segment, char)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqOrder {
    /// Segments in reading order.
    pub spans: Vec<Span>,
    /// Row of the padded `(n*l) x d` embedding for every sequence position.
    pub rows: Vec<usize>,
}

impl SeqOrder {
    /// Reading order of the normalized boxes; padding never enters the sequence.
    pub fn new(doc: &Document, mask: &CharMask) -> Result<Self> {
        let boxes = normalize_boxes(doc)?;
        let mut spans = Vec::with_capacity(doc.n());
        let mut rows = Vec::new();
        for i in reading_order(boxes.iter()) {
            spans.push(Span {
                segment: i,
                start: rows.len(),
                len: mask.lens[i],
            });
            rows.extend((0..mask.lens[i]).map(|j| mask.row(i, j)));
        }
        Ok(Self { spans, rows })
    }

    /// Total character count `M`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Gold tag indices in sequence order.
    pub fn gold(&self, doc: &Document, tags: &TagSet) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.len());
        for span in &self.spans {
            let seg = &doc.segments[span.segment];
            let gold = seg
                .tags
                .as_ref()
                .ok_or_else(|| Error::Input(format!("{}: segment {} has no tags", doc.id, span.segment)))?;
            out.extend(tags.encode(&gold[..span.len])?);
        }
        Ok(out)
    }

    /// Splits a per-position sequence into per-segment slices, indexed by
    /// original segment number.
    pub fn split<'a, T>(&self, seq: &'a [T]) -> Vec<&'a [T]> {
        let mut out: Vec<&[T]> = vec![&[]; self.spans.len()];
        for s in &self.spans {
            out[s.segment] = &seq[s.start..s.start + s.len];
        }
        out
    }
}

/// `DE`: the valid character rows of `e` concatenated in reading order.
pub fn order_document(g: &mut Graph, e: Var, order: &SeqOrder) -> tensor::Result<Var> {
    g.lookup(e, &order.rows)
}

pub fn init_bilstm(store: &mut ParamStore, seed: u64, d: usize, hidden: usize, d_tags: usize) -> tensor::Result<()> {
    for dir in ["fwd", "bwd"] {
        init_param(store, seed, &format!("lstm.{dir}.wx"), &[d, 4 * hidden], d)?;
        init_param(store, seed, &format!("lstm.{dir}.wh"), &[hidden, 4 * hidden], hidden)?;
        init_param(store, seed, &format!("lstm.{dir}.b"), &[1, 4 * hidden], hidden)?;
    }
    init_param(store, seed, "crf.proj", &[2 * hidden, d_tags], 2 * hidden)
}

/// One LSTM direction; returns the hidden state at every position, in
/// position order. Gates are laid out `[input, forget, cell, output]`.
fn lstm_pass(g: &mut Graph, store: &ParamStore, dir: &str, x: Var, reverse: bool) -> tensor::Result<Vec<Var>> {
    let m = g.shape(x)[0];
    let wx = g.param(store, &format!("lstm.{dir}.wx"))?;
    let wh = g.param(store, &format!("lstm.{dir}.wh"))?;
    let h_dim = g.shape(wh)[0];
    let xw = g.matmul(x, wx)?;
    let xw = add_row_bias(g, store, xw, &format!("lstm.{dir}.b"))?;

    let mut h = g.constant(Tensor::zeros(&[1, h_dim]));
    let mut c = h;
    let mut out = vec![h; m];
    let steps: Vec<usize> = if reverse {
        (0..m).rev().collect()
    } else {
        (0..m).collect()
    };
    for t in steps {
        let xt = g.slice_rows(xw, t, 1)?;
        let hw = g.matmul(h, wh)?;
        let gates = g.add(xt, hw)?;
        let i = g.slice_cols(gates, 0, h_dim)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(gates, h_dim, h_dim)?;
        let f = g.sigmoid(f);
        let cand = g.slice_cols(gates, 2 * h_dim, h_dim)?;
        let cand = g.tanh(cand);
        let o = g.slice_cols(gates, 3 * h_dim, h_dim)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let ct = g.tanh(c);
        h = g.mul(o, ct)?;
        out[t] = h;
    }
    Ok(out)
}

/// `Z = BiLSTM(DE) W_B`, shape `M x d_tags`.
pub fn bilstm_project(g: &mut Graph, store: &ParamStore, de: Var) -> tensor::Result<Var> {
    if g.shape(de)[0] == 0 {
        return Err(tensor::TensorError::Contract("empty document sequence".into()));
    }
    let fwd = lstm_pass(g, store, "fwd", de, false)?;
    let bwd = lstm_pass(g, store, "bwd", de, true)?;
    let fwd = g.concat_rows(&fwd)?;
    let bwd = g.concat_rows(&bwd)?;
    let h = g.concat_cols(&[fwd, bwd])?;
    let w = g.param(store, "crf.proj")?;
    g.matmul(h, w)
}
