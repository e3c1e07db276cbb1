//! Small layer helpers shared by the model components.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{init_uniform, Float, Graph, ParamStore, Result, Tensor, Var};

/// Registers a `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` parameter.
pub fn init_param(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
    store.insert(name, init_uniform(seed, name, shape, fan_in))
}

/// `x · W + b` with `b` stored as `1 x out` and repeated explicitly.
pub fn linear(g: &mut Graph, store: &ParamStore, x: Var, weight: &str, bias: Option<&str>) -> Result<Var> {
    let w = g.param(store, weight)?;
    let y = g.matmul(x, w)?;
    match bias {
        Some(b) => add_row_bias(g, store, y, b),
        None => Ok(y),
    }
}

pub fn add_row_bias(g: &mut Graph, store: &ParamStore, x: Var, bias: &str) -> Result<Var> {
    let rows = g.shape(x)[0];
    let b = g.param(store, bias)?;
    let n = g.value(b).numel();
    let b = g.reshape(b, &[1, n])?;
    let b = g.repeat_rows(b, rows)?;
    g.add(x, b)
}

/// Inverted dropout. Identity when `rng` is `None` (evaluation) or `p == 0`.
pub fn dropout(g: &mut Graph, x: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = g.shape(x).to_vec();
    let n = g.value(x).numel();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep as Float })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}
