use std::collections::HashMap;

use super::{Float, ParamStore, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: Float,
    pub beta1: Float,
    pub beta2: Float,
    pub eps: Float,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<Float>,
    v: Vec<Float>,
    t: i32,
}

/// Adam with bias correction. Moment state is keyed by parameter name.
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: Float) {
        self.config.lr = lr;
    }

    /// Updates the named parameters from their gradients, then clears every
    /// gradient in the store.
    pub fn step<S: AsRef<str>>(&mut self, store: &mut ParamStore, names: &[S]) -> Result<()> {
        for name in names {
            let name = name.as_ref();
            let p = store
                .get(name)
                .ok_or_else(|| TensorError::Contract(format!("unknown parameter `{name}`")))?;
            if p.grad.is_none() {
                return Err(TensorError::Contract(format!("parameter `{name}` has no gradient")));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for name in names {
            let name = name.as_ref();
            let p = store.get_mut(name).expect("checked above");
            let grad = p.grad.take().expect("checked above");
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; grad.numel()],
                v: vec![0.0; grad.numel()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
