//! Every differentiable op checked against central finite differences.

use autograd::check::{finite_difference, relative_error};
use autograd::nn::{Conv1d, Ctx, Lstm};
use autograd::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f32 = 1e-2;
const TOL: f64 = 1e-3;

/// Checks `build` (which maps leaf inputs to an arbitrary-shaped output) by
/// contracting its output with a fixed random projection.
fn check<F>(inputs: Vec<Tensor>, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.shape(out)
    };
    let proj = Tensor::randn(probe_shape.0, probe_shape.1, 1.0, &mut rng);
    let eval = |xs: &[Tensor], want_grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        let p = g.constant(proj.clone());
        let prod = g.mul(out, p);
        let loss = g.sum(prod);
        let value = g.value(loss).data()[0] as f64;
        let grads = want_grads.then(|| {
            let gr = g.backward(loss);
            vars.iter().map(|&v| gr.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v).0, g.shape(v).1))).collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, analytic) = eval(&inputs, true);
    let numeric = finite_difference(|xs| eval(xs, false).0, &inputs, EPS);
    for (i, (a, n)) in analytic.unwrap().iter().zip(&numeric).enumerate() {
        let err = relative_error(a, n);
        assert!(err < TOL, "input {i}: relative error {err:.2e}\nanalytic {:?}\nnumeric {:?}", a.data(), n.data());
    }
}

fn rnd(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random values kept away from zero so kinks (abs, relu, norm) are not
/// straddled by the finite-difference step.
fn rnd_away(rows: usize, cols: usize, seed: u64) -> Tensor {
    rnd(rows, cols, seed).map(|x| if x.abs() < 0.2 { x.signum() * 0.2 + x } else { x })
}

#[test]
fn matmul_all_transpose_modes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { rnd(4, 3, 1) } else { rnd(3, 4, 1) };
        let b = if tb { rnd(2, 4, 2) } else { rnd(4, 2, 2) };
        check(vec![a, b], move |g, v| g.matmul_t(v[0], ta, v[1], tb));
    }
}

#[test]
fn elementwise_binary() {
    check(vec![rnd(3, 4, 1), rnd(3, 4, 2)], |g, v| g.add(v[0], v[1]));
    check(vec![rnd(3, 4, 1), rnd(3, 4, 2)], |g, v| g.sub(v[0], v[1]));
    check(vec![rnd(3, 4, 1), rnd(3, 4, 2)], |g, v| g.mul(v[0], v[1]));
    check(vec![rnd(3, 4, 1), rnd(1, 4, 2)], |g, v| g.add_row(v[0], v[1]));
    check(vec![rnd(3, 4, 1), rnd(1, 4, 2)], |g, v| g.mul_row(v[0], v[1]));
    check(vec![rnd(3, 4, 1), rnd(3, 1, 2)], |g, v| g.mul_col(v[0], v[1]));
}

#[test]
fn elementwise_unary() {
    check(vec![rnd(3, 4, 3)], |g, v| g.scale(v[0], -1.7));
    check(vec![rnd(3, 4, 3)], |g, v| g.add_scalar(v[0], 0.3));
    check(vec![rnd_away(3, 4, 3)], |g, v| g.relu(v[0]));
    check(vec![rnd(3, 4, 3)], |g, v| g.tanh(v[0]));
    check(vec![rnd(3, 4, 3)], |g, v| g.sigmoid(v[0]));
    check(vec![rnd(3, 4, 3)], |g, v| g.exp(v[0]));
    check(vec![rnd(3, 4, 3).map(|x| x.abs() + 0.5)], |g, v| g.log(v[0]));
    check(vec![rnd(3, 4, 3)], |g, v| g.square(v[0]));
    check(vec![rnd_away(3, 4, 3)], |g, v| g.abs(v[0]));
    check(vec![rnd(3, 4, 3).map(|x| if (x.abs() - 0.5).abs() < 0.05 { x * 1.2 } else { x })], |g, v| g.clamp(v[0], -0.5, 0.5));
}

#[test]
fn reductions() {
    check(vec![rnd(3, 4, 4)], |g, v| g.sum(v[0]));
    check(vec![rnd(3, 4, 4)], |g, v| g.mean(v[0]));
    check(vec![rnd(3, 4, 4)], |g, v| g.row_sum(v[0]));
    check(vec![rnd(3, 4, 4)], |g, v| g.col_sum(v[0]));
    check(vec![rnd(3, 4, 4)], |g, v| g.row_norm(v[0]));
    check(vec![rnd(5, 3, 4)], |g, v| g.group_sum(v[0], &[0, 2, 0, 1, 2], 3));
}

#[test]
fn normalization_and_softmax() {
    check(vec![rnd(3, 6, 5)], |g, v| g.layer_norm(v[0], 1e-5));
    check(vec![rnd(3, 6, 5)], |g, v| g.log_softmax(v[0]));
}

#[test]
fn structural_ops() {
    check(vec![rnd(3, 2, 6), rnd(3, 3, 7)], |g, v| g.concat_cols(&[v[0], v[1], v[0]]));
    check(vec![rnd(3, 5, 6)], |g, v| g.slice_cols(v[0], 1, 3));
    check(vec![rnd(2, 3, 6), rnd(4, 3, 7)], |g, v| g.concat_rows(&[v[0], v[1]]));
    check(vec![rnd(4, 3, 6)], |g, v| g.gather_rows(v[0], &[Some(1), None, Some(1), Some(3)]));
    check(vec![rnd(4, 3, 6)], |g, v| g.mix_rows(v[0], vec![[(0, 0.25), (1, 0.75)], [(3, 1.0), (3, 0.0)]]));
    check(vec![rnd(4, 3, 6)], |g, v| g.reshape(v[0], 2, 6));
}

#[test]
fn lstm_cell_gradient() {
    check(vec![rnd(2, 12, 8), rnd(2, 3, 9)], |g, v| g.lstm_cell(v[0], v[1]));
}

#[test]
fn straight_through_copies_gradient() {
    let mut g = Graph::new();
    let z = g.leaf(Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3]));
    let q = g.straight_through(z, Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
    let sq = g.square(q);
    let loss = g.sum(sq);
    let grads = g.backward(loss);
    // d/dq sum(q^2) = 2q, copied onto z
    assert_eq!(grads.get(z).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn conv1d_layer_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", 3, 4, 4, 2, 1, 1, &mut rng);
    assert_eq!(conv.out_len(6), 3);
    let x = rnd(2 * 6, 3, 12);

    // input gradient
    let (s2, c2) = (store.clone(), conv.clone());
    check(vec![x.clone()], move |g, v| {
        let mut ctx = Ctx::new(g, &s2);
        c2.forward(&mut ctx, v[0], 6).0
    });

    // parameter gradient: perturb the store directly
    let proj = rnd(6, 4, 13);
    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = {
            let mut ctx = Ctx::new(&mut g, store);
            conv.forward(&mut ctx, xv, 6).0
        };
        let p = g.constant(proj.clone());
        let prod = g.mul(y, p);
        let loss = g.sum(prod);
        (g.value(loss).data()[0] as f64, g.backward(loss).into_param_grads())
    };
    let (_, analytic) = eval(&store);
    for (id, grad) in analytic {
        let name = store.name(id).to_string();
        let base = store.get(id).clone();
        let numeric = finite_difference(
            |xs| {
                let mut s = store.clone();
                s.set(&name, xs[0].clone()).unwrap();
                eval(&s).0
            },
            &[base],
            EPS,
        );
        let err = relative_error(&grad, &numeric[0]);
        assert!(err < TOL, "{name}: relative error {err:.2e}");
    }
}

#[test]
fn lstm_layer_is_causal_and_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 3, 4, &mut rng);
    let x = rnd(2 * 5, 3, 22);
    let run = |x: &Tensor, t: usize| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = Ctx::new(&mut g, &store);
        let y = lstm.forward(&mut ctx, xv, t);
        g.value(y).clone()
    };
    let full = run(&x, 5);
    // prefix of length 3 for both sequences
    let prefix = Tensor::vstack(&[&x.slice_rows(0, 3), &x.slice_rows(5, 8)]);
    let short = run(&prefix, 3);
    assert_eq!(short.slice_rows(0, 3), full.slice_rows(0, 3));
    assert_eq!(short.slice_rows(3, 6), full.slice_rows(5, 8));

    let store2 = store.clone();
    let lstm2 = lstm.clone();
    check(vec![x], move |g, v| {
        let mut ctx = Ctx::new(g, &store2);
        lstm2.forward(&mut ctx, v[0], 5)
    });
}
