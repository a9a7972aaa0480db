mod common;

use common::*;
use fcm_former::gradcheck::check_gradients;
use fcm_former::tensor::Result;
use fcm_former::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let a = random_mat::<f64, _>(&mut r, 4, 3, 2.0);
        let b = random_mat::<f64, _>(&mut r, 3, 2, 2.0);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(from_mat(&a)), g.constant(from_mat(&b)));
        let c = g.matmul(va, vb).unwrap();
        assert!(max_abs_diff(&matmul(&a, &b), g.value(c)) < 1e-12);
        let ct = g.matmul_t(va, va).unwrap();
        assert!(max_abs_diff(&matmul(&a, &transpose(&a)), g.value(ct)) < 1e-12);
    }
}

#[test]
fn large_matmul_matches_triple_loop() {
    let mut r = rng(2);
    let a = random_mat::<f64, _>(&mut r, 37, 53, 1.0);
    let b = random_mat::<f64, _>(&mut r, 53, 29, 1.0);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(from_mat(&a)), g.constant(from_mat(&b)));
    let c = g.matmul(va, vb).unwrap();
    assert!(max_abs_diff(&matmul(&a, &b), g.value(c)) < 1e-12);
}

#[test]
fn layer_norm_matches_two_pass() {
    let mut r = rng(3);
    let x = random_mat::<f64, _>(&mut r, 5, 8, 3.0);
    let gain = random_mat::<f64, _>(&mut r, 1, 8, 1.5).remove(0);
    let bias = random_mat::<f64, _>(&mut r, 1, 8, 1.0).remove(0);
    let mut g = Graph::new();
    let vx = g.constant(from_mat(&x));
    let vg = g.constant(Tensor::new(vec![8], gain.clone()).unwrap());
    let vb = g.constant(Tensor::new(vec![8], bias.clone()).unwrap());
    let y = g.layer_norm(vx, vg, vb, LN_EPS).unwrap();
    assert!(max_abs_diff(&layer_norm(&x, &gain, &bias), g.value(y)) < 1e-10);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(4);
    let x = random_mat::<f64, _>(&mut r, 3, 4, 5.0);
    let mut g = Graph::new();
    let v = g.constant(from_mat(&x));
    let s = g.softmax_rows(v).unwrap();
    for row in to_mat(g.value(s)) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(max_abs_diff(&x.iter().map(|row| softmax(row)).collect(), g.value(s)) < 1e-12);

    let wide = random_mat::<f32, _>(&mut r, 6, 300, 40.0);
    let mut g = Graph::<f32>::new();
    let v = g.constant(from_mat(&wide));
    let s = g.softmax_rows(v).unwrap();
    for row in to_mat(g.value(s)) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

/// Contracts `y` against fixed weights so every output element carries a
/// distinct gradient.
fn contract(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let (p, q) = g.value(y).dims2("contract")?;
    let w = g.constant(random_tensor(&mut rng(seed), p, q, 1.0));
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

fn assert_grads<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = check_gradients(inputs, 1e-5, f).unwrap();
    assert!(report.passes(1e-4), "{name}: {report:?}");
    assert!(report.checked > 0);
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut r = rng(5);
    let a = random_tensor::<f64, _>(&mut r, 3, 4, 1.0);
    let b = random_tensor::<f64, _>(&mut r, 4, 2, 1.0);
    let c = random_tensor::<f64, _>(&mut r, 3, 4, 1.0);
    let e = random_tensor::<f64, _>(&mut r, 5, 4, 1.0);
    let row = Tensor::from_f64(vec![4], &[0.3, -0.2, 0.5, 0.1]).unwrap();

    assert_grads("matmul", &[a.clone(), b.clone()], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        contract(g, y, 10)
    });
    assert_grads("matmul_t", &[a.clone(), e.clone()], |g, v| {
        let y = g.matmul_t(v[0], v[1])?;
        contract(g, y, 11)
    });
    assert_grads("transpose", &[a.clone()], |g, v| {
        let y = g.transpose(v[0])?;
        contract(g, y, 12)
    });
    assert_grads("add", &[a.clone(), c.clone()], |g, v| {
        let y = g.add(v[0], v[1])?;
        contract(g, y, 13)
    });
    assert_grads("add_row", &[a.clone(), row.clone()], |g, v| {
        let y = g.add_row(v[0], v[1])?;
        contract(g, y, 14)
    });
    assert_grads("mul", &[a.clone(), c.clone()], |g, v| {
        let y = g.mul(v[0], v[1])?;
        contract(g, y, 15)
    });
    assert_grads("scale", &[a.clone()], |g, v| {
        let y = g.scale(v[0], -1.7);
        contract(g, y, 16)
    });
    // keep inputs away from the kink
    let away = a.map(|x| if x.abs() < 0.05 { x + 0.2 } else { x });
    assert_grads("relu", &[away], |g, v| {
        let y = g.relu(v[0]);
        contract(g, y, 17)
    });
    assert_grads("softmax_rows", &[a.map(|x| 3.0 * x)], |g, v| {
        let y = g.softmax_rows(v[0])?;
        contract(g, y, 18)
    });
    let gain = Tensor::from_f64(vec![4], &[1.2, 0.7, -0.4, 1.0]).unwrap();
    assert_grads("layer_norm", &[a.clone(), gain, row.clone()], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        contract(g, y, 19)
    });
    let narrow = random_tensor::<f64, _>(&mut r, 3, 2, 1.0);
    assert_grads("concat_cols", &[a.clone(), narrow], |g, v| {
        let y = g.concat_cols(&[v[0], v[1]])?;
        contract(g, y, 20)
    });
    assert_grads("concat_rows", &[a.clone(), e.clone()], |g, v| {
        let y = g.concat_rows(&[v[0], v[1]])?;
        contract(g, y, 21)
    });
    assert_grads("slice_cols", &[e.clone()], |g, v| {
        let y = g.slice_cols(v[0], 1, 2)?;
        contract(g, y, 22)
    });
    assert_grads("slice_rows", &[e.clone()], |g, v| {
        let y = g.slice_rows(v[0], 2, 3)?;
        contract(g, y, 23)
    });
    let logits = Tensor::from_f64(vec![1, 3], &[0.4, -1.2, 0.9]).unwrap();
    assert_grads("cross_entropy", &[logits], |g, v| g.cross_entropy(v[0], 1));
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = [0.4f64, -1.2, 0.9];
    let mut g = Graph::<f64>::new();
    let v = g.param(Tensor::from_f64(vec![1, 3], &logits).unwrap());
    let loss = g.cross_entropy(v, 2).unwrap();
    g.backward(loss).unwrap();
    let p = softmax(&logits);
    let grad = g.grad(v).unwrap().data();
    for c in 0..3 {
        let expect = p[c] - if c == 2 { 1.0 } else { 0.0 };
        assert!((grad[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let run = || {
        let mut r = rng(6);
        let a = random_tensor::<f32, _>(&mut r, 16, 64, 1.0);
        let b = random_tensor::<f32, _>(&mut r, 64, 16, 1.0);
        let mut g = Graph::new();
        let (va, vb) = (g.param(a), g.param(b));
        let c = g.matmul(va, vb).unwrap();
        let s = g.softmax_rows(c).unwrap();
        let l = g.sum(s);
        g.backward(l).unwrap();
        (g.value(s).clone(), g.grad(va).unwrap().clone())
    };
    assert_eq!(run(), run());
}
