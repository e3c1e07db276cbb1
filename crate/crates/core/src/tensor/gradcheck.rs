//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays an
//! independent oracle for every backward rule on the tape.

use rand::Rng as _;

use super::{Float, Graph, ParamStore, Result, Tensor, Var};
use crate::rng::substream;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Tolerance on `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub tol: f64,
    /// Seed for the random projection that turns any output into a scalar.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            // Truncation error grows as step^2; 64-bit values can afford a
            // much smaller step before round-off dominates.
            step: if cfg!(feature = "f64") { 1e-5 } else { 1e-3 },
            tol: if cfg!(feature = "f64") { 1e-6 } else { 1e-3 },
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_err: f64,
    /// `(input, flat index, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_err <= self.tol
    }
}

impl GradCheck {
    /// Compares tape gradients of `f` against central differences for every
    /// element of every input. `f` may return any shape; it is reduced to a
    /// scalar by a fixed random projection.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let eval = |values: &[Tensor]| -> Result<Vec<Float>> {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(g.value(out).data().to_vec())
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars)?;
        let weights = self.projection(g.value(out).numel());
        let w = g.constant(Tensor::new(
            g.shape(out).to_vec(),
            weights.iter().map(|&v| v as Float).collect(),
        )?);
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod);
        let grads = g.backward(loss)?;

        let project = |vals: &[Float]| -> f64 { vals.iter().zip(&weights).map(|(&v, &w)| v as f64 * w).sum() };

        let mut report = GradCheckReport {
            max_err: 0.0,
            worst: None,
            checked: 0,
            tol: self.tol,
        };
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]);
            for k in 0..input.numel() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[k] += self.step as Float;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[k] -= self.step as Float;
                // Use the perturbation actually representable in Float.
                let h = (plus[i].data()[k] as f64 - minus[i].data()[k] as f64) / 2.0;
                let numeric = (project(&eval(&plus)?) - project(&eval(&minus)?)) / (2.0 * h);
                let a = analytic.map_or(0.0, |t| t.data()[k] as f64);
                let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                report.checked += 1;
                if report.worst.is_none() || err > report.max_err {
                    report.max_err = err;
                    report.worst = Some((i, k, a, numeric));
                }
            }
        }
        Ok(report)
    }

    /// Checks gradients of a layer that reads its weights from `store`.
    /// Every parameter in `store` is perturbed along with `inputs`; `f`
    /// receives the tape vars of `inputs` only.
    pub fn run_with_params<F>(&self, store: &ParamStore, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
    {
        let names: Vec<String> = store.names().map(String::from).collect();
        let mut all = inputs.to_vec();
        all.extend(names.iter().map(|n| store.value(n).expect("listed name").clone()));
        self.run(&all, |g, vars| {
            let (xs, ps) = vars.split_at(inputs.len());
            for (n, &v) in names.iter().zip(ps) {
                g.bind_param(n, v)?;
            }
            f(g, store, xs)
        })
    }

    fn projection(&self, n: usize) -> Vec<f64> {
        let mut rng = substream(self.seed, "gradcheck", n as u64);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

/// Random tensor with entries in `[-scale, scale]`.
pub fn random_tensor(seed: u64, stream: u64, shape: &[usize], scale: f64) -> Tensor {
    let mut rng = substream(seed, "random_tensor", stream);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..=scale) as Float).collect();
    Tensor::new(shape.to_vec(), data).expect("numel matches shape")
}
