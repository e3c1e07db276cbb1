use std::collections::HashMap;

use super::Document;
use crate::nn::init_param;
use crate::tensor::{Float, Graph, ParamStore, Result, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Character vocabulary with reserved PAD and UNK indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    /// First occurrence wins; duplicates are dropped.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, v.chars.len() + 2);
                v.chars.push(c);
            }
        }
        v
    }

    /// Table rows, including PAD and UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    /// The known characters as a string, in index order.
    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

/// Validity of each of the `n x l` character slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharMask {
    pub n: usize,
    pub l: usize,
    pub lens: Vec<usize>,
}

impl CharMask {
    pub fn from_doc(doc: &Document, l: usize) -> Self {
        Self {
            n: doc.n(),
            l,
            lens: doc.segments.iter().map(|s| s.len().min(l)).collect(),
        }
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        j < self.lens[i]
    }

    /// `(n*l) x d` matrix of ones on valid rows, zeros on padding.
    pub fn row_mask(&self, d: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.n * self.l * d);
        for i in 0..self.n {
            for j in 0..self.l {
                let v: Float = if self.is_valid(i, j) { 1.0 } else { 0.0 };
                data.extend(std::iter::repeat_n(v, d));
            }
        }
        Tensor::new(vec![self.n * self.l, d], data).expect("mask shape")
    }

    /// Flat row index of character `j` of segment `i`.
    pub fn row(&self, i: usize, j: usize) -> usize {
        i * self.l + j
    }
}

pub fn init(store: &mut ParamStore, seed: u64, vocab_len: usize, d: usize) -> Result<()> {
    // Embedding rows are not fed by a fan-in; unit range keeps TE on the
    // same scale as the layer-normalized encoder input.
    init_param(store, seed, "text.table", &[vocab_len, d], 1)
}

/// `TE`: one table row per character, zero rows on padding. Shape `(n*l) x d`.
pub fn textual_embed(g: &mut Graph, store: &ParamStore, doc: &Document, vocab: &Vocab, mask: &CharMask) -> Result<Var> {
    let mut ids = Vec::with_capacity(mask.n * mask.l);
    for seg in &doc.segments {
        let mut chars = seg.text.chars();
        for _ in 0..mask.l {
            ids.push(chars.next().map_or(PAD, |c| vocab.id(c)));
        }
    }
    let table = g.param(store, "text.table")?;
    let rows = g.lookup(table, &ids)?;
    let d = g.shape(table)[1];
    let m = g.constant(mask.row_mask(d));
    g.mul(rows, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{rect_quad, GrayImage, Segment};

    fn doc(texts: &[&str]) -> Document {
        Document {
            id: "t".into(),
            segments: texts
                .iter()
                .map(|t| Segment {
                    text: t.to_string(),
                    quad: rect_quad(0.0, 0.0, 10.0, 10.0),
                    tags: None,
                })
                .collect(),
            image: GrayImage::white(16, 16),
            page_size: (16, 16),
        }
    }

    #[test]
    fn vocab_reserves_pad_and_unk() {
        let v = Vocab::new("abca".chars());
        assert_eq!(v.len(), 5);
        assert_eq!(v.id('a'), 2);
        assert_eq!(v.id('c'), 4);
        assert_eq!(v.id('z'), UNK);
        assert_eq!(v.as_string(), "abc");
    }

    #[test]
    fn rows_follow_table_and_padding_is_zero() {
        let v = Vocab::new("ab".chars());
        let mut store = ParamStore::new();
        store.insert("text.table", Tensor::eye(4)).unwrap();
        let d = doc(&["ab", "ab", "b"]);
        let mask = CharMask::from_doc(&d, 3);
        let mut g = Graph::new();
        let te = textual_embed(&mut g, &store, &d, &v, &mask).unwrap();
        let t = g.value(te);
        assert_eq!(t.shape(), &[9, 4]);
        assert_eq!(t.row(0), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.row(1), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.row(2), &[0.0; 4]);
        // identical text, identical slices
        assert_eq!(&t.data()[0..12], &t.data()[12..24]);
        assert_eq!(t.row(7), &[0.0; 4]);
        assert_eq!(t.row(8), &[0.0; 4]);
    }
}
