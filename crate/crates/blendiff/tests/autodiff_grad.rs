//! Gradient checks: every differentiable op against central finite
//! differences on random inputs of magnitude <= 1.

use blendiff::autodiff::{Graph, Var};
use blendiff::rng::Rng;
use blendiff::tensor::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero gradients do not
/// blow up the ratio.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Check d(loss)/d(inputs) by central differences, where
/// `loss = sum(weights * f(inputs))` for fixed random weights.
fn check_gradients(
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&Graph, &[Var]) -> Var,
    rng: &mut Rng,
) {
    let build_loss = |vals: &[Tensor], weights: &Tensor| -> (Graph, Vec<Var>, Var) {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&g, &vars);
        let w = g.leaf(weights.clone());
        let loss = out.mul(&w).sum();
        (g, vars, loss)
    };

    // Forward once to learn the output shape, then fix the weights.
    let probe = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        f(&g, &vars).value()
    };
    let weights = Tensor::new(probe.shape().to_vec(), rng.normal_vec(probe.numel()));

    let (_g, vars, loss) = build_loss(inputs, &weights);
    loss.backward().unwrap();
    let grads: Vec<Tensor> = vars.iter().map(|v| v.grad()).collect();

    let eval = |vals: &[Tensor]| -> f64 {
        let (_g, _vars, loss) = build_loss(vals, &weights);
        loss.value().item()
    };

    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let ad = grads[i].data()[e];
            assert!(
                rel_err(ad, fd) < TOL,
                "{name}: input {i} entry {e}: ad={ad} fd={fd}"
            );
        }
    }
}

fn rand_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = Rng::new(101);
    let a = rand_tensor(&mut rng, vec![3, 4]);
    let b = rand_tensor(&mut rng, vec![3, 4]);
    check_gradients("add", &[a.clone(), b.clone()], |_, v| v[0].add(&v[1]), &mut rng);
    check_gradients("sub", &[a.clone(), b.clone()], |_, v| v[0].sub(&v[1]), &mut rng);
    check_gradients("mul", &[a.clone(), b.clone()], |_, v| v[0].mul(&v[1]), &mut rng);
    check_gradients("scale", &[a.clone()], |_, v| v[0].scale(-2.5), &mut rng);
    check_gradients("add_scalar", &[a.clone()], |_, v| v[0].add_scalar(0.7), &mut rng);
    check_gradients("silu", &[a.clone()], |_, v| v[0].silu(), &mut rng);
    check_gradients("tanh", &[a.clone()], |_, v| v[0].tanh(), &mut rng);
    check_gradients("exp", &[a.clone()], |_, v| v[0].exp(), &mut rng);
    // keep relu/abs inputs away from the kink
    let c = a.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    check_gradients("relu", &[c.clone()], |_, v| v[0].relu(), &mut rng);
    check_gradients("abs", &[c], |_, v| v[0].abs(), &mut rng);
}

#[test]
fn matrix_ops_match_finite_differences() {
    let mut rng = Rng::new(102);
    let a = rand_tensor(&mut rng, vec![3, 4]);
    let b = rand_tensor(&mut rng, vec![4, 2]);
    check_gradients("matmul", &[a.clone(), b], |_, v| v[0].matmul(&v[1]), &mut rng);
    check_gradients("transpose", &[a.clone()], |_, v| v[0].transpose(), &mut rng);
    check_gradients("slice_rows", &[a.clone()], |_, v| v[0].slice_rows(1, 3), &mut rng);
    check_gradients("slice_cols", &[a.clone()], |_, v| v[0].slice_cols(1, 3), &mut rng);
    let p = rand_tensor(&mut rng, vec![3, 2]);
    check_gradients(
        "concat_cols",
        &[a.clone(), p],
        |_, v| Var::concat_cols(&[v[0].clone(), v[1].clone()]),
        &mut rng,
    );
    let vbias = rand_tensor(&mut rng, vec![4]);
    check_gradients(
        "add_bias_rows",
        &[a.clone(), vbias.clone()],
        |_, v| v[0].add_bias_rows(&v[1]),
        &mut rng,
    );
    check_gradients("broadcast_rows", &[vbias], |_, v| v[0].broadcast_rows(5), &mut rng);
    check_gradients("mean", &[a.clone()], |_, v| v[0].mean(), &mut rng);
    check_gradients("sum", &[a], |_, v| v[0].sum(), &mut rng);
}

#[test]
fn conv_and_norm_ops_match_finite_differences() {
    let mut rng = Rng::new(103);
    let x = rand_tensor(&mut rng, vec![6, 3]);
    let w = rand_tensor(&mut rng, vec![4, 3, 3]);
    let b = rand_tensor(&mut rng, vec![4]);
    check_gradients(
        "conv1d_k3",
        &[x.clone(), w, b.clone()],
        |_, v| v[0].conv1d(&v[1], &v[2]),
        &mut rng,
    );
    let w1 = rand_tensor(&mut rng, vec![4, 3, 1]);
    check_gradients(
        "conv1d_k1",
        &[x.clone(), w1, b],
        |_, v| v[0].conv1d(&v[1], &v[2]),
        &mut rng,
    );

    let x4 = rand_tensor(&mut rng, vec![5, 4]);
    let gamma = rand_tensor(&mut rng, vec![4]);
    let beta = rand_tensor(&mut rng, vec![4]);
    check_gradients(
        "group_norm_g2",
        &[x4.clone(), gamma.clone(), beta.clone()],
        |_, v| v[0].group_norm(&v[1], &v[2], 2),
        &mut rng,
    );
    check_gradients(
        "layer_norm",
        &[x4, gamma, beta],
        |_, v| v[0].layer_norm(&v[1], &v[2]),
        &mut rng,
    );
}

#[test]
fn softmax_with_band_bias_matches_finite_differences() {
    let mut rng = Rng::new(104);
    let x = rand_tensor(&mut rng, vec![4, 4]);
    let mut bias = Tensor::zeros(vec![4, 4]);
    for i in 0..4 {
        for j in 0..4 {
            if (i as isize - j as isize).abs() > 1 {
                bias.set(i, j, f64::NEG_INFINITY);
            }
        }
    }
    check_gradients(
        "softmax_rows_bias",
        &[x],
        move |_, v| v[0].softmax_rows_bias(&bias),
        &mut rng,
    );
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = Rng::new(105);
    let x = rand_tensor(&mut rng, vec![5, 3]);
    let w = rand_tensor(&mut rng, vec![3, 3]);
    check_gradients(
        "composite_mlp",
        &[x.clone(), w.clone()],
        |_, v| {
            let h = v[0].matmul(&v[1]).silu();
            h.mul(&h).add_scalar(0.1)
        },
        &mut rng,
    );
    check_gradients(
        "composite_velocity",
        &[x, w],
        |_, v| {
            let h = v[0].matmul(&v[1]).tanh();
            let n = h.shape()[0];
            h.slice_rows(1, n).sub(&h.slice_rows(0, n - 1)).abs()
        },
        &mut rng,
    );
}
