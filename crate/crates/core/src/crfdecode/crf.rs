use crate::nn::init_param;
use crate::tensor::{self, Axis, Float, Graph, ParamStore, Tensor, TensorError, Var};

use super::TagSet;

/// Score added to BIO-illegal transitions when strict decoding is on.
pub const STRICT_PENALTY: Float = -1e4;

/// Registers the `(d_tags+2) x (d_tags+2)` transition matrix. Row/column
/// `d_tags` is START, `d_tags+1` is END; moves into START and out of END
/// are fixed at minus infinity.
pub fn init_transitions(store: &mut ParamStore, seed: u64, d_tags: usize) -> tensor::Result<()> {
    let n = d_tags + 2;
    init_param(store, seed, "crf.transitions", &[n, n], n)?;
    let mut t = store.value("crf.transitions").expect("just inserted").clone();
    for i in 0..n {
        t.data_mut()[i * n + d_tags] = Float::NEG_INFINITY;
        t.data_mut()[(d_tags + 1) * n + i] = Float::NEG_INFINITY;
    }
    store.set("crf.transitions", t)
}

/// Additive mask that pushes BIO-illegal moves (including START -> I-x)
/// down by [`STRICT_PENALTY`].
pub fn strict_mask(tags: &TagSet) -> Tensor {
    let k = tags.len();
    let n = k + 2;
    let mut m = Tensor::zeros(&[n, n]);
    for to in 0..k {
        for from in 0..k {
            if !tags.allowed(Some(from), to) {
                m.data_mut()[from * n + to] = STRICT_PENALTY;
            }
        }
        if !tags.allowed(None, to) {
            m.data_mut()[tags.start() * n + to] = STRICT_PENALTY;
        }
    }
    m
}

fn check(z: &Tensor, t: &Tensor, len: Option<usize>) -> tensor::Result<(usize, usize)> {
    let (m, k) = z.dims2()?;
    if t.shape() != [k + 2, k + 2] {
        return Err(tensor::shape_err("crf", z.shape(), t.shape()));
    }
    if let Some(len) = len {
        if len != m {
            return Err(TensorError::Contract(format!("{len} gold tags for {m} emission rows")));
        }
    }
    if m == 0 {
        return Err(TensorError::Contract("empty tag sequence".into()));
    }
    Ok((m, k))
}

/// Path score `T[START,y1] + sum T[y_i,y_i+1] + T[yM,END] + sum Z[i,y_i]`.
pub fn crf_score(g: &mut Graph, z: Var, t: Var, y: &[usize]) -> tensor::Result<Var> {
    let (_, k) = check(g.value(z), g.value(t), Some(y.len()))?;
    let n = k + 2;
    let emit: Vec<usize> = y.iter().enumerate().map(|(i, &tag)| i * k + tag).collect();
    let mut trans = Vec::with_capacity(y.len() + 1);
    trans.push(k * n + y[0]);
    trans.extend(y.windows(2).map(|w| w[0] * n + w[1]));
    trans.push(y[y.len() - 1] * n + k + 1);
    let e = g.gather(z, &emit)?;
    let e = g.sum(e);
    let tr = g.gather(t, &trans)?;
    let tr = g.sum(tr);
    g.add(tr, e)
}

/// Log partition over all `d_tags^M` paths by the forward algorithm.
pub fn log_partition(g: &mut Graph, z: Var, t: Var) -> tensor::Result<Var> {
    let (m, k) = check(g.value(z), g.value(t), None)?;
    let real = g.slice_rows(t, 0, k)?;
    let inner = g.slice_cols(real, 0, k)?;
    let end = g.slice_cols(real, k + 1, 1)?;
    let end = g.transpose(end)?;
    let start = g.slice_rows(t, k, 1)?;
    let start = g.slice_cols(start, 0, k)?;

    let z0 = g.slice_rows(z, 0, 1)?;
    let mut alpha = g.add(start, z0)?;
    for i in 1..m {
        let col = g.transpose(alpha)?;
        let prev = g.repeat_cols(col, k)?;
        let scores = g.add(prev, inner)?;
        let lse = g.logsumexp(scores, Axis::Rows)?;
        let zi = g.slice_rows(z, i, 1)?;
        alpha = g.add(lse, zi)?;
    }
    let last = g.add(alpha, end)?;
    let total = g.logsumexp(last, Axis::Cols)?;
    g.reshape(total, &[1])
}

/// `-log p(y | DE)`.
pub fn crf_loss(g: &mut Graph, z: Var, t: Var, y: &[usize]) -> tensor::Result<Var> {
    let score = crf_score(g, z, t, y)?;
    let lp = log_partition(g, z, t)?;
    g.sub(lp, score)
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Forward algorithm in double precision, off the tape.
pub fn log_partition_f64(z: &Tensor, t: &Tensor) -> tensor::Result<f64> {
    let (m, k) = check(z, t, None)?;
    let n = k + 2;
    let tr = |a: usize, b: usize| t.data()[a * n + b] as f64;
    let mut alpha: Vec<f64> = (0..k).map(|j| tr(k, j) + z.at(0, j) as f64).collect();
    for i in 1..m {
        alpha = (0..k)
            .map(|j| lse((0..k).map(|p| alpha[p] + tr(p, j))) + z.at(i, j) as f64)
            .collect();
    }
    Ok(lse((0..k).map(|j| alpha[j] + tr(j, k + 1))))
}

/// Highest-scoring tag path. Every argmax (final tag and each backpointer)
/// takes the lowest index among equal scores.
pub fn viterbi(z: &Tensor, t: &Tensor) -> tensor::Result<Vec<usize>> {
    let (m, k) = check(z, t, None)?;
    let n = k + 2;
    let tr = |a: usize, b: usize| t.data()[a * n + b] as f64;
    let argmax = |xs: &mut dyn Iterator<Item = f64>| -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, x) in xs.enumerate() {
            if i == 0 || x > best.1 {
                best = (i, x);
            }
        }
        best
    };
    let mut delta: Vec<f64> = (0..k).map(|j| tr(k, j) + z.at(0, j) as f64).collect();
    let mut back = vec![vec![0usize; k]; m];
    for (i, ptrs) in back.iter_mut().enumerate().skip(1) {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let (p, s) = argmax(&mut (0..k).map(|p| delta[p] + tr(p, j)));
            ptrs[j] = p;
            next[j] = s + z.at(i, j) as f64;
        }
        delta = next;
    }
    let (mut tag, _) = argmax(&mut (0..k).map(|j| delta[j] + tr(j, k + 1)));
    let mut path = vec![0; m];
    for i in (0..m).rev() {
        path[i] = tag;
        tag = back[i][tag];
    }
    Ok(path)
}
