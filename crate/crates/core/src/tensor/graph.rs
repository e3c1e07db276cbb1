use std::collections::HashMap;

use super::{shape_err, Float, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis of a rank-2 value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping one value per column (`m x n -> 1 x n`).
    Rows,
    /// Reduce over columns, keeping one value per row (`m x n -> m x 1`).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Float),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Transpose(Var),
    Reshape(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    RepeatCols(Var),
    RepeatInterleave {
        x: Var,
        times: usize,
    },
    Sum(Var),
    LogSumExp {
        x: Var,
        axis: Axis,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Float>,
        inv_std: Vec<Float>,
    },
    RowNormalize {
        x: Var,
        sums: Vec<Float>,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Lookup {
        table: Var,
        indices: Vec<usize>,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    WeightedGather {
        x: Var,
        index: Vec<usize>,
        weight: Vec<Float>,
        taps: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager gradient tape. One tape per forward pass; dropped after backward.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

/// Gradients of a scalar loss with respect to every recorded value.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a stored parameter onto the tape. Repeated calls for the same
    /// name return the same handle so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter `{name}`")))?;
        let v = self.leaf(p.value.clone(), true);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers an existing tape value as parameter `name`, so later
    /// [`Graph::param`] calls for that name return `v`.
    pub fn bind_param(&mut self, name: &str, v: Var) -> Result<()> {
        if self.param_index.contains_key(name) {
            return Err(TensorError::Contract(format!("parameter `{name}` already on tape")));
        }
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(())
    }

    /// Parameters registered on this tape, in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(Float, Float) -> Float) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Sums any number of same-shaped values.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| TensorError::Contract("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(Float) -> Float) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, s: Float) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), Float::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Rows `start..start+len` along the first axis (any rank).
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let rows = *t.shape().first().unwrap_or(&0);
        if start + len > rows {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                bound: rows,
            });
        }
        let width = t.numel().checked_div(rows).unwrap_or(0);
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let data = t.data()[start * width..(start + len) * width].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceRows { x, start }, rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Stacks values along the first axis; trailing extents must agree.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if t.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", self.shape(first), t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Joins matrices side by side; row counts must agree.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let (m, _) = dims2(self.value(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (mi, ni) = dims2(self.value(x), "concat_cols")?;
            if mi != m {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(x)));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(xs.to_vec()), rg))
    }

    /// `1 x n -> m x n`.
    pub fn repeat_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        let (r, n) = dims2(self.value(x), "repeat_rows")?;
        if r != 1 {
            return Err(shape_err("repeat_rows", self.shape(x), &[1, n]));
        }
        let row = self.value(x).data();
        let data = row.repeat(m);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::RepeatRows(x), rg))
    }

    /// `m x 1 -> m x n`.
    pub fn repeat_cols(&mut self, x: Var, n: usize) -> Result<Var> {
        let (m, c) = dims2(self.value(x), "repeat_cols")?;
        if c != 1 {
            return Err(shape_err("repeat_cols", self.shape(x), &[m, 1]));
        }
        let col = self.value(x).data();
        let data = col.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::RepeatCols(x), rg))
    }

    /// Repeats each row `times` times in place: `m x n -> (m*times) x n`.
    pub fn repeat_interleave_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "repeat_interleave_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * times * n);
        for i in 0..m {
            for _ in 0..times {
                out.extend_from_slice(&src[i * n..(i + 1) * n]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m * times, n], out)?,
            Op::RepeatInterleave { x, times },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Max-shifted log-sum-exp. Rank-1 input reduces to a scalar; rank-2 input
    /// reduces along `axis`.
    pub fn logsumexp(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        let (m, n, out_shape) = match (t.shape(), axis) {
            ([n], _) => (1, *n, vec![1]),
            ([m, n], Axis::Cols) => (*m, *n, vec![*m, 1]),
            ([m, n], Axis::Rows) => (*m, *n, vec![1, *n]),
            (s, _) => {
                return Err(TensorError::Domain {
                    op: "logsumexp",
                    msg: format!("unsupported rank {}", s.len()),
                })
            }
        };
        let reduced = if t.rank() == 2 && axis == Axis::Rows { m } else { n };
        if reduced == 0 {
            return Err(TensorError::Domain {
                op: "logsumexp",
                msg: "empty reduction axis".into(),
            });
        }
        let d = t.data();
        let out: Vec<Float> = if t.rank() == 2 && axis == Axis::Rows {
            (0..n).map(|j| lse((0..m).map(|i| d[i * n + j]))).collect()
        } else {
            (0..m).map(|i| lse(d[i * n..(i + 1) * n].iter().copied())).collect()
        };
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::LogSumExp { x, axis }, rg))
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
            let dst = &mut out[i * n..(i + 1) * n];
            let mut z = 0.0;
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            dst.iter_mut().for_each(|o| *o /= z);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(x), rg))
    }

    /// Per-row layer normalization with learned gain and bias of length `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Float) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "layer_norm")?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<Float>() / n as Float;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / n as Float;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Divides each row by its sum. Rows must have a positive sum.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "row_normalize")?;
        let src = self.value(x).data();
        let mut sums = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let s: Float = src[i * n..(i + 1) * n].iter().sum();
            if s.is_nan() || s <= 0.0 {
                return Err(TensorError::Domain {
                    op: "row_normalize",
                    msg: format!("row {i} sums to {s}"),
                });
            }
            for j in 0..n {
                out[i * n + j] = src[i * n + j] / s;
            }
            sums.push(s);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::RowNormalize { x, sums }, rg))
    }

    /// Cross-correlation of a `C_in x H x W` input with `C_out x C_in x kh x kw`
    /// kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let ([cin, h, wd], [cout, cin2, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(shape_err("conv2d", &xs, &ws));
        };
        let (cin, h, wd, cout, kh, kw) = (*cin, *h, *wd, *cout, *kh, *kw);
        if cin != *cin2 || stride == 0 || kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        let geo = ConvGeom::new(cin, h, wd, cout, kh, kw, stride, pad);
        let mut out = vec![0.0; cout * geo.oh * geo.ow];
        geo.forward(self.value(x).data(), self.value(w).data(), &mut out);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::new(vec![cout, geo.oh, geo.ow], out)?,
            Op::Conv2d { x, w, stride, pad },
            rg,
        ))
    }

    /// Row gather from a `V x d` table.
    pub fn lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = dims2(self.value(table), "lookup")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(TensorError::Index {
                    op: "lookup",
                    index: i,
                    bound: v,
                });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::Lookup {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Picks elements by flat index into a rank-1 result.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push(*src.get(i).ok_or(TensorError::Index {
                op: "gather",
                index: i,
                bound: src.len(),
            })?);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![indices.len()], out)?,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Fixed-arity sparse linear map: output `k` is
    /// `sum_t weight[k*taps+t] * x[index[k*taps+t]]`.
    pub fn weighted_gather(
        &mut self,
        x: Var,
        index: Vec<usize>,
        weight: Vec<Float>,
        taps: usize,
        shape: &[usize],
    ) -> Result<Var> {
        let src = self.value(x).data();
        let outputs: usize = shape.iter().product();
        if index.len() != weight.len() || index.len() != outputs * taps {
            return Err(shape_err("weighted_gather", &[index.len(), weight.len()], shape));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::Index {
                op: "weighted_gather",
                index: bad,
                bound: src.len(),
            });
        }
        let out = (0..outputs)
            .map(|k| (k * taps..(k + 1) * taps).map(|t| weight[t] * src[index[t]]).sum())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape.to_vec(), out)?,
            Op::WeightedGather { x, index, weight, taps },
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<Float>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|data| Tensor {
                    shape: n.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Grads { grads })
    }

    fn propagate(&self, i: usize, gy: &[Float], grads: &mut [Option<Vec<Float>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matmul lhs");
                let n = self.value(*b).shape()[1];
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    for r in 0..m {
                        let gyr = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] += dot(gyr, &bd[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    for r in 0..m {
                        let gyr = &gy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av != 0.0 {
                                axpy(av, gyr, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        axpy(1.0, gy, slot(grads, *v, gy.len()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    axpy(1.0, gy, slot(grads, *a, gy.len()));
                }
                if self.rg(*b) {
                    axpy(-1.0, gy, slot(grads, *b, gy.len()));
                }
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.rg(*a) {
                    let ga = slot(grads, *a, gy.len());
                    for ((g, &d), &o) in ga.iter_mut().zip(gy).zip(bd) {
                        *g += d * o;
                    }
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, gy.len());
                    for ((g, &d), &o) in gb.iter_mut().zip(gy).zip(ad) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.rg(*x) {
                    axpy(*s, gy, slot(grads, *x, gy.len()));
                }
            }
            Op::Tanh(x) => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, gy.len());
                    for ((g, &d), &o) in gx.iter_mut().zip(gy).zip(y) {
                        *g += d * (1.0 - o * o);
                    }
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let xd = self.value(*x).data();
                    let gx = slot(grads, *x, gy.len());
                    for ((g, &d), &v) in gx.iter_mut().zip(gy).zip(xd) {
                        if v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, gy.len());
                    for ((g, &d), &o) in gx.iter_mut().zip(gy).zip(y) {
                        *g += d * o * (1.0 - o);
                    }
                }
            }
            Op::Transpose(x) => {
                if self.rg(*x) {
                    let (m, n) = self.value(*x).dims2().expect("transpose");
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += gy[c * m + r];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.rg(*x) {
                    axpy(1.0, gy, slot(grads, *x, gy.len()));
                }
            }
            Op::SliceRows { x, start } => {
                if self.rg(*x) {
                    let total = self.value(*x).numel();
                    let gx = slot(grads, *x, total);
                    let offset = start * (gy.len() / node.value.shape()[0].max(1));
                    axpy(1.0, gy, &mut gx[offset..offset + gy.len()]);
                }
            }
            Op::SliceCols { x, start } => {
                if self.rg(*x) {
                    let (m, n) = self.value(*x).dims2().expect("slice_cols");
                    let len = node.value.shape()[1];
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        axpy(
                            1.0,
                            &gy[r * len..(r + 1) * len],
                            &mut gx[r * n + start..r * n + start + len],
                        );
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let len = self.value(x).numel();
                    if self.rg(x) {
                        axpy(1.0, &gy[offset..offset + len], slot(grads, x, len));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(xs) => {
                let (m, total) = node.value.dims2().expect("concat_cols");
                let mut col = 0;
                for &x in xs {
                    let w = self.value(x).shape()[1];
                    if self.rg(x) {
                        let gx = slot(grads, x, m * w);
                        for r in 0..m {
                            axpy(
                                1.0,
                                &gy[r * total + col..r * total + col + w],
                                &mut gx[r * w..(r + 1) * w],
                            );
                        }
                    }
                    col += w;
                }
            }
            Op::RepeatRows(x) => {
                if self.rg(*x) {
                    let n = self.value(*x).numel();
                    let gx = slot(grads, *x, n);
                    for chunk in gy.chunks(n) {
                        axpy(1.0, chunk, gx);
                    }
                }
            }
            Op::RepeatCols(x) => {
                if self.rg(*x) {
                    let (m, n) = node.value.dims2().expect("repeat_cols");
                    let gx = slot(grads, *x, m);
                    for r in 0..m {
                        gx[r] += gy[r * n..(r + 1) * n].iter().sum::<Float>();
                    }
                }
            }
            Op::RepeatInterleave { x, times } => {
                if self.rg(*x) {
                    let (m, n) = self.value(*x).dims2().expect("repeat_interleave");
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m * times {
                        let src = r / times;
                        axpy(1.0, &gy[r * n..(r + 1) * n], &mut gx[src * n..(src + 1) * n]);
                    }
                }
            }
            Op::Sum(x) => {
                if self.rg(*x) {
                    let n = self.value(*x).numel();
                    slot(grads, *x, n).iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::LogSumExp { x, axis } => {
                if self.rg(*x) {
                    let t = self.value(*x);
                    let (m, n) = match t.shape() {
                        [n] => (1, *n),
                        [m, n] => (*m, *n),
                        _ => unreachable!("checked in forward"),
                    };
                    let xd = t.data();
                    let by_rows = t.rank() == 2 && *axis == Axis::Rows;
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            let k = if by_rows { c } else { r };
                            gx[r * n + c] += gy[k] * (xd[r * n + c] - y[k]).exp();
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let (m, n) = node.value.dims2().expect("softmax");
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gy[r * n..(r + 1) * n];
                        let inner = dot(yr, gr);
                        for c in 0..n {
                            gx[r * n + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = node.value.dims2().expect("layer_norm");
                let g = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let gg = slot(grads, *gamma, n);
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += gy[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if self.rg(*beta) {
                    let gb = slot(grads, *beta, n);
                    for r in 0..m {
                        axpy(1.0, &gy[r * n..(r + 1) * n], gb);
                    }
                }
                if self.rg(*x) {
                    let gx = slot(grads, *x, m * n);
                    let nf = n as Float;
                    for r in 0..m {
                        let h = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<Float> = (0..n).map(|c| gy[r * n + c] * g[c]).collect();
                        let sum_dh: Float = dh.iter().sum();
                        let sum_dh_h = dot(&dh, h);
                        for c in 0..n {
                            gx[r * n + c] += inv_std[r] / nf * (nf * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                }
            }
            Op::RowNormalize { x, sums } => {
                if self.rg(*x) {
                    let (m, n) = node.value.dims2().expect("row_normalize");
                    let gx = slot(grads, *x, m * n);
                    for r in 0..m {
                        let inner = dot(&gy[r * n..(r + 1) * n], &y[r * n..(r + 1) * n]);
                        for c in 0..n {
                            gx[r * n + c] += (gy[r * n + c] - inner) / sums[r];
                        }
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let geo = ConvGeom::new(xs[0], xs[1], xs[2], ws[0], ws[2], ws[3], *stride, *pad);
                if self.rg(*x) {
                    let gx = slot(grads, *x, self.value(*x).numel());
                    geo.backward_input(self.value(*w).data(), gy, gx);
                }
                if self.rg(*w) {
                    let gw = slot(grads, *w, self.value(*w).numel());
                    geo.backward_kernel(self.value(*x).data(), gy, gw);
                }
            }
            Op::Lookup { table, indices } => {
                if self.rg(*table) {
                    let d = self.value(*table).shape()[1];
                    let gt = slot(grads, *table, self.value(*table).numel());
                    for (r, &idx) in indices.iter().enumerate() {
                        axpy(1.0, &gy[r * d..(r + 1) * d], &mut gt[idx * d..(idx + 1) * d]);
                    }
                }
            }
            Op::Gather { x, indices } => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, self.value(*x).numel());
                    for (&idx, &d) in indices.iter().zip(gy) {
                        gx[idx] += d;
                    }
                }
            }
            Op::WeightedGather { x, index, weight, taps } => {
                if self.rg(*x) {
                    let gx = slot(grads, *x, self.value(*x).numel());
                    for (k, &d) in gy.iter().enumerate() {
                        for t in k * taps..(k + 1) * taps {
                            gx[index[t]] += weight[t] * d;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<Float>>], v: Var, len: usize) -> &mut Vec<Float> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| TensorError::Domain {
        op,
        msg: format!("expected a matrix, got shape {:?}", t.shape()),
    })
}

pub(crate) fn sigmoid(v: Float) -> Float {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn lse(values: impl Iterator<Item = Float> + Clone) -> Float {
    let mx = values.clone().fold(Float::NEG_INFINITY, Float::max);
    if mx == Float::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<Float>().ln()
}

#[inline]
fn dot(a: &[Float], b: &[Float]) -> Float {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: Float, x: &[Float], y: &mut [Float]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn matmul_into(a: &[Float], b: &[Float], out: &mut [Float], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    fn new(cin: usize, h: usize, w: usize, cout: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        }
    }

    /// Output positions `o` along one axis whose input tap `o*stride + k - pad`
    /// lands inside `0..extent`.
    fn valid(&self, k: usize, extent: usize, out: usize) -> std::ops::Range<usize> {
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi_num = extent + self.pad;
        let hi = if hi_num > k {
            ((hi_num - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        lo.min(hi)..hi
    }

    /// Calls `f(kernel index, first output offset, first input offset, run length)`
    /// for every contiguous run of output columns sharing one kernel tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let cols: Vec<std::ops::Range<usize>> = (0..self.kw).map(|kx| self.valid(kx, self.w, self.ow)).collect();
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for ky in 0..self.kh {
                    let rows = self.valid(ky, self.h, self.oh);
                    for (kx, r) in cols.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
                        let widx = ((co * self.cin + ci) * self.kh + ky) * self.kw + kx;
                        for oy in rows.clone() {
                            let iy = oy * self.stride + ky - self.pad;
                            let out_row = (co * self.oh + oy) * self.ow;
                            let in_row = (ci * self.h + iy) * self.w;
                            f(
                                widx,
                                out_row + r.start,
                                in_row + r.start * self.stride + kx - self.pad,
                                r.len(),
                            );
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[Float], w: &[Float], out: &mut [Float]) {
        let stride = self.stride;
        self.for_each_tap(|widx, o0, i0, len| {
            let wv = w[widx];
            if wv == 0.0 {
                return;
            }
            for t in 0..len {
                out[o0 + t] += wv * x[i0 + t * stride];
            }
        });
    }

    fn backward_input(&self, w: &[Float], gy: &[Float], gx: &mut [Float]) {
        let stride = self.stride;
        self.for_each_tap(|widx, o0, i0, len| {
            let wv = w[widx];
            if wv == 0.0 {
                return;
            }
            for t in 0..len {
                gx[i0 + t * stride] += wv * gy[o0 + t];
            }
        });
    }

    fn backward_kernel(&self, x: &[Float], gy: &[Float], gw: &mut [Float]) {
        let stride = self.stride;
        self.for_each_tap(|widx, o0, i0, len| {
            let mut acc = 0.0;
            for t in 0..len {
                acc += gy[o0 + t] * x[i0 + t * stride];
            }
            gw[widx] += acc;
        });
    }
}
