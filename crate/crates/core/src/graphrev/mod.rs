//! Learned document graph: segment embeddings are pooled from characters,
//! a KNN similarity graph is added to the current adjacency, and one round of
//! graph convolution over the revised adjacency feeds global context back to
//! every character.
//!
//! Edge `(i, j)` of an adjacency matrix is the weight of the directed edge
//! from segment `j` into segment `i`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::CharMask;
use crate::nn::init_param;
use crate::tensor::{Float, Graph, ParamStore, Result, Tensor, TensorError, Var};

pub fn init(store: &mut ParamStore, seed: u64, d: usize, d_n: usize) -> Result<()> {
    init_param(store, seed, "graph.w1", &[d, d_n], d)?;
    init_param(store, seed, "graph.w2", &[d_n, d], d_n)?;
    init_param(store, seed, "graph.w3", &[d, d], d)
}

/// `N x (N*L)` matrix whose row `i` averages the valid character rows of
/// segment `i`.
pub fn averaging_matrix(mask: &CharMask) -> Result<Tensor> {
    let (n, l) = (mask.n, mask.l);
    let mut p = Tensor::zeros(&[n, n * l]);
    for (i, &len) in mask.lens.iter().enumerate() {
        if len == 0 {
            return Err(TensorError::Contract(format!("segment {i} has no valid characters")));
        }
        let w = 1.0 / len as Float;
        for j in 0..len {
            p.data_mut()[i * n * l + i * l + j] = w;
        }
    }
    Ok(p)
}

/// `SE`: mean of each segment's valid character embeddings.
pub fn aggregate_segments(g: &mut Graph, e: Var, mask: &CharMask) -> Result<Var> {
    let p = g.constant(averaging_matrix(mask)?);
    g.matmul(p, e)
}

/// `HE = A tanh(A SE W1) W2`.
pub fn hidden_embed(g: &mut Graph, se: Var, a: Var, w1: Var, w2: Var) -> Result<Var> {
    let x = g.matmul(a, se)?;
    let x = g.matmul(x, w1)?;
    let x = g.tanh(x);
    let x = g.matmul(a, x)?;
    g.matmul(x, w2)
}

/// Column indices of the `k` largest entries of `row`, ties to the lower
/// index, in descending score order.
pub fn top_k(row: &[Float], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// 0/1 mask keeping the top `k` entries of every row of `scores`.
pub fn knn_mask(scores: &Tensor, k: usize) -> Result<Tensor> {
    let (m, n) = scores.dims2()?;
    let mut mask = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in top_k(scores.row(i), k) {
            mask.data_mut()[i * n + j] = 1.0;
        }
    }
    Ok(mask)
}

/// `S = relu(HE HE^T ⊙ knn)`. The selection itself carries no gradient.
pub fn similarity_knn(g: &mut Graph, he: Var, k: usize) -> Result<Var> {
    if k == 0 {
        return Err(TensorError::Domain {
            op: "similarity_knn",
            msg: "K must be at least 1".into(),
        });
    }
    let het = g.transpose(he)?;
    let raw = g.matmul(he, het)?;
    let keep = g.constant(knn_mask(g.value(raw), k)?);
    let kept = g.mul(raw, keep)?;
    Ok(g.relu(kept))
}

/// `A' = row_normalize(A + S)`.
pub fn revise(g: &mut Graph, a: Var, s: Var) -> Result<Var> {
    let sum = g.add(a, s)?;
    g.row_normalize(sum)
}

/// `SE' = A' SE W3`.
pub fn graph_conv(g: &mut Graph, a: Var, se: Var, w3: Var) -> Result<Var> {
    let x = g.matmul(a, se)?;
    g.matmul(x, w3)
}

/// Adds each segment's revised embedding to its characters; padding rows
/// come out zero.
pub fn broadcast_to_chars(g: &mut Graph, se: Var, e: Var, mask: &CharMask) -> Result<Var> {
    let rep = g.repeat_interleave_rows(se, mask.l)?;
    let sum = g.add(e, rep)?;
    let d = g.shape(e)[1];
    let m = g.constant(mask.row_mask(d));
    g.mul(sum, m)
}

/// Every intermediate of one graph revision pass.
#[derive(Clone, Copy, Debug)]
pub struct GraphOutput {
    pub se: Var,
    pub he: Var,
    pub s: Var,
    pub adjacency: Var,
    pub revised: Var,
    pub se_revised: Var,
    pub e_final: Var,
}

/// Full module on `E` of shape `(n*l) x d`, starting from `A = I`.
pub fn forward(g: &mut Graph, store: &ParamStore, e: Var, mask: &CharMask, k: usize) -> Result<GraphOutput> {
    let w1 = g.param(store, "graph.w1")?;
    let w2 = g.param(store, "graph.w2")?;
    let w3 = g.param(store, "graph.w3")?;
    let se = aggregate_segments(g, e, mask)?;
    let adjacency = g.constant(Tensor::eye(mask.n));
    let he = hidden_embed(g, se, adjacency, w1, w2)?;
    let s = similarity_knn(g, he, k)?;
    let revised = revise(g, adjacency, s)?;
    let se_revised = graph_conv(g, revised, se, w3)?;
    let e_final = broadcast_to_chars(g, se_revised, e, mask)?;
    Ok(GraphOutput {
        se,
        he,
        s,
        adjacency,
        revised,
        se_revised,
        e_final,
    })
}

/// JSON view of a learned adjacency matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyDump {
    pub id: String,
    pub n: usize,
    /// Row-major `n x n` weights.
    pub weights: Vec<f64>,
}

impl AdjacencyDump {
    pub fn new(id: &str, a: &Tensor) -> Result<Self> {
        let (n, m) = a.dims2()?;
        if n != m {
            return Err(crate::tensor::shape_err("adjacency", &[n, m], &[n, n]));
        }
        Ok(Self {
            id: id.to_string(),
            n,
            weights: a.data().iter().map(|&v| v as f64).collect(),
        })
    }
}
