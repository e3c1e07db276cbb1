use proptest::prelude::*;

use super::gradcheck::{random_tensor, GradCheck};
use super::*;

fn t(shape: &[usize], data: &[Float]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn assert_grad_ok<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report = GradCheck::default().run(inputs, f).unwrap();
    assert!(report.passed(), "gradient check failed: {report:?}");
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let m = random_tensor(1, 0, &[3, 3], 1.0);
    let i = g.constant(Tensor::eye(3));
    let mv = g.constant(m.clone());
    let out = g.matmul(i, mv).unwrap();
    assert_eq!(g.value(out), &m);

    let z = g.constant(Tensor::zeros(&[2, 3]));
    let m34 = g.constant(random_tensor(1, 1, &[3, 4], 1.0));
    let out = g.matmul(z, m34).unwrap();
    assert_eq!(g.value(out), &Tensor::zeros(&[2, 4]));

    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[17.0, 39.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let th = g.tanh(z);
    assert_eq!(g.value(th).item(), 0.0);

    let x = g.constant(t(&[3], &[1.0, -2.0, 0.5]));
    let zero = g.constant(Tensor::zeros(&[3]));
    let s = g.add(x, zero).unwrap();
    assert_eq!(g.value(s), g.value(x));

    let a = g.constant(t(&[2], &[2.0, 3.0]));
    let b = g.constant(t(&[2], &[4.0, 5.0]));
    let p = g.mul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[8.0, 15.0]);

    let c = g.constant(t(&[3], &[0.0; 3]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn logsumexp_examples() {
    let mut g = Graph::new();
    let c: Float = 1.7;
    let x = g.constant(t(&[2], &[c, c]));
    let y = g.logsumexp(x, Axis::Cols).unwrap();
    assert!((g.value(y).item() - (c + Float::ln(2.0))).abs() < 1e-6);

    let x = g.constant(t(&[1], &[0.0]));
    let y = g.logsumexp(x, Axis::Cols).unwrap();
    assert_eq!(g.value(y).item(), 0.0);

    let x = g.constant(t(&[2], &[1000.0, 1000.0]));
    let y = g.logsumexp(x, Axis::Cols).unwrap();
    let v = g.value(y).item();
    assert!(v.is_finite());
    assert!((v - (1000.0 + Float::ln(2.0))).abs() < 1e-3);

    let x = g.constant(Tensor::zeros(&[0]));
    assert!(g.logsumexp(x, Axis::Cols).is_err());
}

#[test]
fn logsumexp_axes_on_matrix() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
    let rows = g.logsumexp(x, Axis::Rows).unwrap();
    let cols = g.logsumexp(x, Axis::Cols).unwrap();
    assert_eq!(g.shape(rows), &[1, 3]);
    assert_eq!(g.shape(cols), &[2, 1]);
    let expect0 = (0.0f64.exp() + 3.0f64.exp()).ln();
    assert!((g.value(rows).data()[0] as f64 - expect0).abs() < 1e-5);
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::new();
    let input = random_tensor(2, 0, &[1, 4, 5], 1.0);
    let x = g.constant(input.clone());
    let unit = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, unit, 1, 0).unwrap();
    assert_eq!(g.value(y), &input);

    let zero = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
    let y = g.conv2d(x, zero, 1, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    assert_eq!(g.shape(y), &[3, 4, 5]);

    let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let mean = g.constant(Tensor::full(&[1, 1, 2, 2], 0.25));
    let y = g.conv2d(x, mean, 2, 0).unwrap();
    assert_eq!(g.value(y).data(), &[2.5]);
}

#[test]
fn conv2d_output_extent_and_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 9, 7]));
    let w = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let y = g.conv2d(x, w, 2, 1).unwrap();
    // floor((9 + 2 - 3) / 2) + 1 = 5, floor((7 + 2 - 3) / 2) + 1 = 4
    assert_eq!(g.shape(y), &[4, 5, 4]);
    let big = g.constant(Tensor::zeros(&[4, 2, 12, 3]));
    assert!(g.conv2d(x, big, 1, 1).is_err());
}

/// Direct definition of cross-correlation, used as an oracle for the tap
/// iteration in the engine.
fn conv_reference(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += x.data()[(ci * h + iy as usize) * wd + ix as usize] as f64
                                * w.data()[((co * cin + ci) * kh + ky) * kw + kx] as f64;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn conv2d_matches_direct_definition(
        cin in 1usize..3, cout in 1usize..3, h in 1usize..8, w in 1usize..8,
        k in 1usize..4, stride in 1usize..3, pad in 0usize..2, seed in 0u64..1000,
    ) {
        prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
        let x = random_tensor(seed, 0, &[cin, h, w], 1.0);
        let kern = random_tensor(seed, 1, &[cout, cin, k, k], 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(kern.clone());
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        let expect = conv_reference(&x, &kern, stride, pad);
        prop_assert_eq!(g.value(y).numel(), expect.len());
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            prop_assert!((*a as f64 - b).abs() < 1e-4);
        }
    }

    #[test]
    fn logsumexp_shift_invariance(values in proptest::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![values.len()], values.iter().map(|&v| v as Float).collect()).unwrap());
        let shifted = g.constant(Tensor::new(vec![values.len()], values.iter().map(|&v| (v + c) as Float).collect()).unwrap());
        let a = g.logsumexp(x, Axis::Cols).unwrap();
        let b = g.logsumexp(shifted, Axis::Cols).unwrap();
        let lhs = g.value(b).item() as f64;
        let rhs = g.value(a).item() as f64 + c;
        // Exact in real arithmetic; at 32 bits the shifted inputs themselves
        // are rounded to the spacing of values near |v + c|.
        let tol = if cfg!(feature = "f64") { 1e-6 } else { 1e-6f64.max(4.0 * f32::EPSILON as f64 * (values.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c.abs())) };
        prop_assert!((lhs - rhs).abs() <= tol, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn matmul_identity_is_neutral(m in 1usize..5, n in 1usize..5, seed in 0u64..100) {
        let a = random_tensor(seed, 0, &[m, n], 3.0);
        let mut g = Graph::new();
        let av = g.constant(a.clone());
        let il = g.constant(Tensor::eye(m));
        let ir = g.constant(Tensor::eye(n));
        let left = g.matmul(il, av).unwrap();
        let right = g.matmul(av, ir).unwrap();
        prop_assert_eq!(g.value(left), &a);
        prop_assert_eq!(g.value(right), &a);
    }
}

#[test]
fn lookup_examples() {
    let mut g = Graph::new();
    let table = g.leaf(Tensor::eye(3), true);
    let row = g.lookup(table, &[1]).unwrap();
    assert_eq!(g.value(row).data(), &[0.0, 1.0, 0.0]);

    let empty = g.lookup(table, &[]).unwrap();
    assert_eq!(g.shape(empty), &[0, 3]);

    let err = g.lookup(table, &[3]).unwrap_err().to_string();
    assert!(err.contains('3'), "{err}");

    let twice = g.lookup(table, &[2, 2]).unwrap();
    let up = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]));
    let prod = g.mul(twice, up).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    let gt = grads.get(table).unwrap();
    assert_eq!(gt.row(2), &[11.0, 22.0, 33.0]);
    assert_eq!(gt.row(0), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_examples() {
    let x0 = t(&[4], &[1.0, -2.0, 0.5, 3.0]);
    let mut g = Graph::new();
    let x = g.leaf(x0.clone(), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    let expect: Vec<Float> = x0.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.get(x).unwrap().data(), expect.as_slice());

    let mut g = Graph::new();
    let c = g.constant(Tensor::scalar(3.0));
    let p = g.leaf(Tensor::scalar(1.0), true);
    let loss = g.scale(c, 2.0);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(p).is_none());

    let mut g = Graph::new();
    let v = g.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(g.backward(v), Err(TensorError::Contract(_))));
}

#[test]
fn backward_sums_reused_paths() {
    // f(x) = sum(tanh(x) * x + x) uses x three times.
    let x0 = random_tensor(3, 0, &[2, 3], 1.0);
    assert_grad_ok(&[x0], |g, v| {
        let th = g.tanh(v[0]);
        let p = g.mul(th, v[0])?;
        g.add(p, v[0])
    });
}

#[test]
fn repeated_backward_accumulates_in_store() {
    let mut store = ParamStore::new();
    store.insert("w", t(&[2], &[1.0, 2.0])).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        store.accumulate(&g, &grads);
    }
    assert_eq!(store.get("w").unwrap().grad.as_ref().unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn gradients_match_finite_differences() {
    let a = random_tensor(5, 0, &[3, 4], 1.0);
    let b = random_tensor(5, 1, &[4, 2], 1.0);
    assert_grad_ok(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]));

    let c = random_tensor(5, 2, &[3, 4], 1.0);
    assert_grad_ok(&[a.clone(), c.clone()], |g, v| g.add(v[0], v[1]));
    assert_grad_ok(&[a.clone(), c.clone()], |g, v| g.sub(v[0], v[1]));
    assert_grad_ok(&[a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| Ok(g.scale(v[0], -1.5)));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| Ok(g.tanh(v[0])));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| Ok(g.sigmoid(v[0])));
    // Keep relu inputs away from the kink.
    let r = Tensor::new(
        vec![3, 4],
        a.data().iter().map(|v| if v.abs() < 0.05 { 0.3 } else { *v }).collect(),
    )
    .unwrap();
    assert_grad_ok(&[r], |g, v| Ok(g.relu(v[0])));

    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.transpose(v[0]));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.reshape(v[0], &[2, 6]));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.slice_rows(v[0], 1, 2));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.slice_cols(v[0], 1, 2));
    assert_grad_ok(&[a.clone(), c.clone()], |g, v| g.concat_rows(&[v[0], v[1], v[0]]));
    assert_grad_ok(&[a.clone(), c.clone()], |g, v| g.concat_cols(&[v[1], v[0]]));
    let row = random_tensor(5, 3, &[1, 4], 1.0);
    let col = random_tensor(5, 4, &[3, 1], 1.0);
    assert_grad_ok(&[row], |g, v| g.repeat_rows(v[0], 3));
    assert_grad_ok(&[col], |g, v| g.repeat_cols(v[0], 4));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.repeat_interleave_rows(v[0], 3));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.logsumexp(v[0], Axis::Rows));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.logsumexp(v[0], Axis::Cols));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.softmax_rows(v[0]));
    let gamma = random_tensor(5, 5, &[4], 1.0);
    let beta = random_tensor(5, 6, &[4], 1.0);
    assert_grad_ok(&[a.clone(), gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    let pos = Tensor::new(vec![3, 4], a.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
    assert_grad_ok(&[pos], |g, v| g.row_normalize(v[0]));
    assert_grad_ok(std::slice::from_ref(&a), |g, v| g.gather(v[0], &[0, 5, 5, 11]));
    let table = random_tensor(5, 7, &[5, 3], 1.0);
    assert_grad_ok(&[table], |g, v| g.lookup(v[0], &[4, 0, 4, 2]));
    assert_grad_ok(&[a], |g, v| {
        g.weighted_gather(
            v[0],
            vec![0, 1, 7, 11, 3, 3],
            vec![0.25, 0.75, 0.5, 0.5, 1.0, -1.0],
            2,
            &[3],
        )
    });
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let x = random_tensor(9, 0, &[2, 5, 6], 1.0);
        let w = random_tensor(9, 1, &[2, 2, 3, 3], 0.5);
        assert_grad_ok(&[x, w], |g, v| g.conv2d(v[0], v[1], stride, pad));
    }
}
