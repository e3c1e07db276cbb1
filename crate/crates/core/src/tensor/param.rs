use std::collections::HashMap;

use rand::Rng as _;

use super::{Float, Grads, Graph, Result, Tensor, TensorError};
use crate::rng::substream;

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(TensorError::Contract(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    /// Overwrites a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(super::shape_err("set", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds the tape's parameter gradients into `grad`. Parameters that were
    /// registered but not reached by the loss receive a zero gradient.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Grads) {
        for (name, var) in graph.params() {
            let Some(p) = self.get_mut(name) else { continue };
            let acc = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(g) = grads.get(*var) {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Global L2 norm of all present gradients.
    pub fn grad_norm(&self) -> Float {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<Float>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: Float) -> Float {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` drawn from the parameter's own
/// substream, so identical names and shapes get identical values across
/// models.
pub fn init_uniform(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = substream(seed, &format!("init/{name}"), 0);
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..=bound) as Float).collect();
    Tensor::new(shape.to_vec(), data).expect("numel matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn init_is_bounded_and_name_keyed() {
        let a = init_uniform(1, "graph.W1", &[4, 4], 16);
        let b = init_uniform(1, "graph.W1", &[4, 4], 16);
        let c = init_uniform(1, "graph.W2", &[4, 4], 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| v.abs() <= 0.25));
    }
}
