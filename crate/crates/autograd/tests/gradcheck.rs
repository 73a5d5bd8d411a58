//! Every differentiable op checked against central finite differences.

use jfp_autograd::{Dense, Graph, Mode, ModelParams, Session, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap()
}

/// Projects the op output onto fixed random weights so that every output
/// element contributes to the scalar.
fn project<'g>(out: Var<'g>, seed: u64) -> Var<'g> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&out.shape(), &mut rng);
    out.mul(out.graph().constant(w)).unwrap().sum()
}

/// Relative error with a floor tied to the gradient scale.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2 * scale))
        .fold(0.0, f64::max)
}

fn check(name: &str, inputs: Vec<Tensor>, f: impl for<'g> Fn(&[Var<'g>]) -> Var<'g>) {
    let eval = |ins: &[Tensor]| {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = ins.iter().map(|t| g.constant(t.clone())).collect();
        project(f(&vars), 99).item()
    };
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = project(f(&vars), 99);
    let grads = g.backward(loss).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("gradient present").data().to_vec();
        let mut numeric = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < TOL, "{name}: input {k} relative error {err:e}");
    }
}

#[test]
fn elementwise_binary_with_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    let d = positive(&[3, 1], &mut rng);
    check("add", vec![a.clone(), b.clone()], |v| v[0].add(v[1]).unwrap());
    check("sub", vec![a.clone(), b.clone()], |v| v[0].sub(v[1]).unwrap());
    check("mul", vec![a.clone(), b.clone()], |v| v[0].mul(v[1]).unwrap());
    check("div", vec![a.clone(), d], |v| v[0].div(v[1]).unwrap());
    check("mul same shape", vec![a.clone(), random(&[3, 4], &mut rng)], |v| v[0].mul(v[1]).unwrap());
}

#[test]
fn elementwise_unary() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 5], &mut rng);
    let p = positive(&[2, 5], &mut rng);
    // keep relu inputs away from the kink
    let r = Tensor::new(&[6], vec![-0.9, -0.3, 0.2, 0.5, 1.1, -0.05]).unwrap();
    check("relu", vec![r], |v| v[0].relu());
    check("exp", vec![x.clone()], |v| v[0].exp());
    check("ln", vec![p.clone()], |v| v[0].ln());
    check("sqrt", vec![p], |v| v[0].sqrt());
    check("square", vec![x.clone()], |v| v[0].square());
    check("neg/scale/offset", vec![x.clone()], |v| v[0].neg().scale(2.5).add_scalar(0.3).square());
    check("mean", vec![x], |v| v[0].square().mean());
}

#[test]
fn reductions_and_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 4], &mut rng);
    check("sum_axis", vec![x.clone()], |v| v[0].sum_axis(1, false).unwrap());
    check("sum_axis keepdim", vec![x.clone()], |v| v[0].sum_axis(2, true).unwrap());
    check("reshape", vec![x.clone()], |v| v[0].reshape(&[6, 4]).unwrap());
    check("permute", vec![x.clone()], |v| v[0].permute(&[2, 0, 1]).unwrap());
    check("transpose", vec![x.clone()], |v| v[0].transpose().unwrap());
    check("slice", vec![x.clone()], |v| v[0].slice(1, 1, 2).unwrap());
    check("index_select", vec![x.clone()], |v| v[0].index_select(1, &[2, 0, 2, 1]).unwrap());
    let y = random(&[2, 2, 4], &mut rng);
    check("concat", vec![x, y], |v| Var::concat(&[v[0], v[1]], 1).unwrap());
}

#[test]
fn matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check("matmul 2d", vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], |v| v[0].matmul(v[1]).unwrap());
    check("matmul shared rhs", vec![random(&[2, 3, 4], &mut rng), random(&[4, 5], &mut rng)], |v| {
        v[0].matmul(v[1]).unwrap()
    });
    check("matmul batched", vec![random(&[2, 3, 4], &mut rng), random(&[2, 4, 2], &mut rng)], |v| {
        v[0].matmul(v[1]).unwrap()
    });
}

#[test]
fn softmax_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check("softmax", vec![random(&[3, 4], &mut rng)], |v| v[0].softmax());
}

#[test]
fn conv2d_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(
        "conv2d",
        vec![random(&[2, 2, 3, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)],
        |v| v[0].conv2d(v[1], v[2]).unwrap(),
    );
}

#[test]
fn batch_norm_train_and_infer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[5, 3], &mut rng);
    let gamma = positive(&[3], &mut rng);
    let beta = random(&[3], &mut rng);
    check("bn train 2d", vec![x.clone(), gamma.clone(), beta.clone()], |v| {
        v[0].graph().batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
    });
    check("bn infer", vec![x, gamma.clone(), beta.clone()], |v| {
        v[0].graph()
            .batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)
            .unwrap()
    });
    let x4 = random(&[3, 3, 2, 2], &mut rng);
    check("bn train 4d", vec![x4, gamma, beta], |v| {
        v[0].graph().batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
    });
}

#[test]
fn random_mlp_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ModelParams::new();
    let layers = [
        Dense::new(&mut params, "l1", 5, 7, &mut rng).unwrap(),
        Dense::new(&mut params, "l2", 7, 6, &mut rng).unwrap(),
        Dense::new(&mut params, "l3", 6, 2, &mut rng).unwrap(),
    ];
    let x = random(&[4, 5], &mut rng);
    let loss_of = |params: &ModelParams| -> (f64, Vec<(String, Tensor)>) {
        let g = Graph::new();
        let s = Session::new(&g, params, Mode::Infer);
        let mut h = s.constant(x.clone());
        for (i, l) in layers.iter().enumerate() {
            h = l.forward(&s, h).unwrap();
            if i < 2 {
                h = h.exp().add_scalar(-1.0);
            }
        }
        let loss = h.softmax().ln().scale(-1.0).mean();
        let value = loss.item();
        let grads = g.backward(loss).unwrap();
        (value, s.finish(Some(&grads)).grads)
    };
    let (_, grads) = loss_of(&params);
    assert_eq!(grads.len(), 6);
    for (name, analytic) in grads {
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let mut plus = params.clone();
            plus.param_mut(&name).unwrap().value.data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.param_mut(&name).unwrap().value.data_mut()[i] -= EPS;
            numeric[i] = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * EPS);
        }
        let err = rel_err(analytic.data(), &numeric);
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ModelParams::new();
        let l = Dense::new(&mut params, "l", 8, 3, &mut rng).unwrap();
        let x = random(&[16, 8], &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &params, Mode::Train);
        let y = l.forward(&s, s.constant(x)).unwrap().softmax().ln().mean();
        y.item().to_bits()
    };
    assert_eq!(run(), run());
}
