use gcnstab_core::backprop::{
    compare_gradients, finite_diff_gradients, loss_gradients, prediction_gradients, prediction_gradients_from_tape,
    FiniteDiffTarget, GradientTarget,
};
use gcnstab_core::graph::{build_filter, FilterKind, FilterMatrix, Graph};
use gcnstab_core::loss::{Loss, LossKind};
use gcnstab_core::model::{forward, measured_b, param_norm_star, predict_node, Activation, ModelParams};
use gcnstab_core::numerics::{frobenius_norm, Matrix, PowerOptions};
use gcnstab_core::rng;
use gcnstab_oracles::largest_singular_value;
use rand::Rng;

fn scalar_instance() -> (ModelParams, FilterMatrix, Matrix) {
    let g = Graph::new(1, []).unwrap();
    let f = build_filter(&g, FilterKind::AdjPlusId).unwrap();
    let x = Matrix::new(1, 1, vec![0.5]).unwrap();
    let p = ModelParams::new(vec![], vec![0.5], Activation::Tanh).unwrap();
    (p, f, x)
}

fn random_graph(rng: &mut impl Rng, n: usize) -> Graph {
    // A path guarantees min degree 1 for n >= 2; extra random chords on top.
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..n {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    Graph::new(n, edges).unwrap()
}

fn random_instance(seed: u64, k: usize, act: Activation) -> (ModelParams, FilterMatrix, Matrix) {
    let mut r = rng::stream(seed, "instance");
    let n = r.random_range(2..=10);
    let widths: Vec<usize> = (0..=k).map(|_| r.random_range(1..=4)).collect();
    let kind = if seed % 2 == 0 { FilterKind::SymSelfloop } else { FilterKind::RwPlusId };
    let f = build_filter(&random_graph(&mut r, n), kind).unwrap();
    let data = (0..n * widths[0]).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = Matrix::new(n, widths[0], data).unwrap();
    let p = ModelParams::random_init(&widths, act, &mut r).unwrap();
    (p, f, x)
}

#[test]
fn scalar_forward_matches_closed_form() {
    let (p, f, x) = scalar_instance();
    let tape = forward(&p, &f, &x).unwrap();
    let expected = (0.5f64 * 0.5).tanh();
    assert_eq!(tape.predictions[0], expected);
    assert!((expected - 0.2449187).abs() < 5e-8);
    assert_eq!(predict_node(&p, &f, &x, 0).unwrap(), expected);
    assert!(predict_node(&p, &f, &x, 1).is_err());
}

#[test]
fn scalar_gradients_match_calculus() {
    let (p, f, x) = scalar_instance();
    let s = 0.25f64;
    let sech2 = 1.0 - s.tanh() * s.tanh();
    let g = prediction_gradients(&p, &f, &x, 0).unwrap();
    assert!((g.grad_w[0] - sech2 * 0.5).abs() < 1e-15);
    assert!((g.grad_w[0] - 0.4700074).abs() < 5e-8);
    let loss = Loss::default();
    let lg = loss_gradients(&p, &f, &x, (0, 0.0), &loss).unwrap();
    assert_eq!(lg.with_respect_to, GradientTarget::Loss);
    assert!((lg.grad_w[0] - 2.0 * s.tanh() * sech2 * 0.5).abs() < 1e-15);
    assert!((lg.grad_w[0] - 0.2302272).abs() < 5e-8);
    assert!(loss_gradients(&p, &f, &x, (0, 2.0), &loss).is_err());
}

#[test]
fn two_node_one_layer_matches_straight_line_reference() {
    let mut r = rng::stream(17, "two-node");
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let f = build_filter(&g, FilterKind::SymSelfloop).unwrap();
    let x = Matrix::new(2, 3, (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let p = ModelParams::random_init(&[3, 2], Activation::Tanh, &mut r).unwrap();
    let tape = forward(&p, &f, &x).unwrap();
    // Straight-line recomputation: every node has degree 1, so g = [[1/2, 1/2], [1/2, 1/2]].
    let gm = [[0.5, 0.5], [0.5, 0.5]];
    let w1 = &p.weights()[0];
    let mut x1 = [[0.0; 2]; 2];
    for i in 0..2 {
        for c in 0..2 {
            let mut pre = 0.0;
            for j in 0..2 {
                for d in 0..3 {
                    pre += gm[i][j] * x.get(j, d) * w1.get(d, c);
                }
            }
            x1[i][c] = pre.tanh();
        }
    }
    for i in 0..2 {
        for c in 0..2 {
            assert!((tape.layer_outputs[1].get(i, c) - x1[i][c]).abs() < 1e-12);
        }
        let mut s = 0.0;
        for j in 0..2 {
            for c in 0..2 {
                s += gm[i][j] * x1[j][c] * p.w()[c];
            }
        }
        assert!((tape.predictions[i] - s.tanh()).abs() < 1e-12);
    }
}

#[test]
fn zero_weights_give_zero_everything() {
    let (_, f, x) = random_instance(4, 2, Activation::Tanh);
    let widths = [x.cols(), 3, 2];
    let p = ModelParams::zeros(&widths, Activation::Tanh).unwrap();
    let tape = forward(&p, &f, &x).unwrap();
    assert!(tape.predictions.iter().all(|&y| y == 0.0));
    assert!(tape.layer_outputs[1..].iter().all(|m| m.max_abs() == 0.0));
    let g = prediction_gradients(&p, &f, &x, 0).unwrap();
    assert!(g.grad_weights.iter().all(|m| m.max_abs() == 0.0));
    assert!(g.grad_w.iter().all(|&v| v == 0.0));
    // K = 0: grad_w = (row x of g X)^T since tanh'(0) = 1.
    let p0 = ModelParams::zeros(&[x.cols()], Activation::Tanh).unwrap();
    let g0 = prediction_gradients(&p0, &f, &x, 1).unwrap();
    let gx = f.to_dense().matmul(&x).unwrap();
    for (a, b) in g0.grad_w.iter().zip(gx.row(1)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn tape_and_recompute_paths_are_bit_identical() {
    for seed in 0..10 {
        let (p, f, x) = random_instance(seed, (seed % 4) as usize, Activation::Elu);
        let tape = forward(&p, &f, &x).unwrap();
        for node in 0..f.num_nodes() {
            assert_eq!(
                prediction_gradients(&p, &f, &x, node).unwrap(),
                prediction_gradients_from_tape(&p, &f, &tape, node).unwrap()
            );
            assert_eq!(predict_node(&p, &f, &x, node).unwrap(), tape.predictions[node]);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..40u64 {
        let k = (seed % 4) as usize;
        let act = if seed % 3 == 0 { Activation::Elu } else { Activation::Tanh };
        let (p, f, x) = random_instance(seed + 100, k, act);
        let node = (seed as usize) % f.num_nodes();
        let a = prediction_gradients(&p, &f, &x, node).unwrap();
        let fd = finite_diff_gradients(&p, &f, &x, FiniteDiffTarget::Prediction { node }, 1e-5).unwrap();
        let c = compare_gradients(&a, &fd, 1e-6, 1e-9).unwrap();
        assert_eq!(c.failures, 0, "seed {seed}: {c:?}");
        worst = worst.max(c.max_relative_error);
        let loss = Loss::new(LossKind::Squared, -1.0, 1.0).unwrap();
        let label = if seed % 2 == 0 { 1.0 } else { -1.0 };
        let la = loss_gradients(&p, &f, &x, (node, label), &loss).unwrap();
        let lfd = finite_diff_gradients(&p, &f, &x, FiniteDiffTarget::Loss { node, label, loss }, 1e-5).unwrap();
        assert_eq!(compare_gradients(&la, &lfd, 1e-6, 1e-9).unwrap().failures, 0);
    }
    assert!(worst <= 1e-6);
}

#[test]
fn loss_gradient_is_scaled_prediction_gradient() {
    for kind in [LossKind::Squared, LossKind::Logistic, LossKind::SmoothedHinge] {
        let loss = Loss::new(kind, -1.0, 1.0).unwrap();
        for seed in 0..8 {
            let (p, f, x) = random_instance(seed + 300, 2, Activation::Tanh);
            let node = 1;
            let pg = prediction_gradients(&p, &f, &x, node).unwrap();
            let y_hat = forward(&p, &f, &x).unwrap().predictions[node];
            let lg = loss_gradients(&p, &f, &x, (node, -1.0), &loss).unwrap();
            let d = loss.derivative(y_hat, -1.0);
            for (a, b) in lg.to_flat().iter().zip(pg.to_flat()) {
                assert_eq!(*a, d * b);
            }
        }
    }
}

#[test]
fn identity_activation_single_layer_is_exact() {
    let (p, f, x) = random_instance(7, 0, Activation::Identity);
    let a = prediction_gradients(&p, &f, &x, 0).unwrap();
    let fd = finite_diff_gradients(&p, &f, &x, FiniteDiffTarget::Prediction { node: 0 }, 1e-3).unwrap();
    for (u, v) in a.to_flat().iter().zip(fd.to_flat()) {
        assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{u} vs {v}");
    }
}

#[test]
fn finite_difference_error_is_second_order() {
    let (p, f, x) = random_instance(21, 2, Activation::Tanh);
    let exact = prediction_gradients(&p, &f, &x, 0).unwrap().to_flat();
    let err = |h: f64| {
        let fd = finite_diff_gradients(&p, &f, &x, FiniteDiffTarget::Prediction { node: 0 }, h)
            .unwrap()
            .to_flat();
        exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(4e-2), err(2e-2), err(1e-2));
    // Halving h divides a second-order error by about four.
    assert!(e1 / e2 > 3.0 && e1 / e2 < 5.0, "{e1} {e2}");
    assert!(e2 / e3 > 3.0 && e2 / e3 < 5.0, "{e2} {e3}");
    assert!(finite_diff_gradients(&p, &f, &x, FiniteDiffTarget::Prediction { node: 0 }, 0.0).is_err());
}

#[test]
fn tanh_outputs_stay_in_open_interval() {
    for seed in 0..20 {
        let (p, f, x) = random_instance(seed + 500, 3, Activation::Tanh);
        let big = p.scaled(50.0);
        for y in forward(&big, &f, &x.scale(10.0)).unwrap().predictions {
            assert!(y.abs() <= 1.0);
        }
        for y in forward(&p, &f, &x).unwrap().predictions {
            assert!(y.abs() < 1.0);
        }
    }
}

fn oracle_norm(m: &Matrix) -> f64 {
    largest_singular_value(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn param_norm_star_examples() {
    let mut r = rng::stream(9, "pns");
    let a = ModelParams::random_init(&[3, 4, 2], Activation::Tanh, &mut r).unwrap();
    let b = ModelParams::random_init(&[3, 4, 2], Activation::Tanh, &mut r).unwrap();
    assert_eq!(param_norm_star(&a, &a).unwrap(), 0.0);
    let mut w = a.w().to_vec();
    w[0] += 1.0;
    let shifted = ModelParams::new(a.weights().to_vec(), w, Activation::Tanh).unwrap();
    assert!((param_norm_star(&a, &shifted).unwrap() - 1.0).abs() < 1e-15);
    let d = a.difference(&b).unwrap();
    let oracle: f64 = d.weights().iter().map(oracle_norm).sum::<f64>()
        + d.w().iter().map(|x| x * x).sum::<f64>().sqrt();
    let got = param_norm_star(&a, &b).unwrap();
    assert!(((got - oracle) / oracle).abs() < 1e-9);
    let c = ModelParams::random_init(&[3, 5, 2], Activation::Tanh, &mut r).unwrap();
    assert!(param_norm_star(&a, &c).is_err());
}

#[test]
fn measured_b_examples() {
    assert!(measured_b(&[]).is_err());
    let z = ModelParams::zeros(&[3, 3], Activation::Tanh).unwrap();
    assert_eq!(measured_b(std::slice::from_ref(&z)).unwrap(), 0.0);
    let id = ModelParams::new(vec![Matrix::identity(3)], vec![0.0; 3], Activation::Tanh).unwrap();
    assert_eq!(measured_b(&[id]).unwrap(), 1.0);
    let mut r = rng::stream(12, "traj");
    let hist: Vec<ModelParams> = (0..10)
        .map(|i| {
            ModelParams::random_init(&[4, 3, 2], Activation::Tanh, &mut r)
                .unwrap()
                .scaled(1.0 + i as f64 / 10.0)
        })
        .collect();
    let oracle = hist
        .iter()
        .flat_map(|p| {
            p.weights()
                .iter()
                .map(oracle_norm)
                .chain(std::iter::once(p.w().iter().map(|x| x * x).sum::<f64>().sqrt()))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    assert!((measured_b(&hist).unwrap() - oracle).abs() < 1e-9 * oracle);
}

#[test]
fn forward_norm_bounds_hold() {
    for seed in 0..30 {
        let k = 1 + (seed % 3) as usize;
        let (p, f, x) = random_instance(seed + 700, k, Activation::Tanh);
        let b = measured_b(std::slice::from_ref(&p)).unwrap();
        let (cg, cx) = (f.c_g(), frobenius_norm(&x));
        let tape = forward(&p, &f, &x).unwrap();
        for (layer, xk) in tape.layer_outputs.iter().enumerate() {
            let bound = (b * cg).powi(layer as i32) * cx;
            assert!(frobenius_norm(xk) <= bound * (1.0 + 1e-12) + 1e-12);
        }
        let g = prediction_gradients(&p, &f, &x, 0).unwrap();
        for (layer, gx) in g.grad_x.iter().enumerate() {
            let bound = (b * cg).powi((k + 1 - layer) as i32);
            assert!(frobenius_norm(gx) <= bound * (1.0 + 1e-12) + 1e-12);
        }
        let wb = b.powi(k as i32) * cg.powi(k as i32 + 1) * cx;
        for m in &g.grad_weights {
            assert!(frobenius_norm(m) <= wb * (1.0 + 1e-12));
        }
        assert!(g.grad_w.iter().map(|v| v * v).sum::<f64>().sqrt() <= wb * (1.0 + 1e-12));
    }
}

#[test]
fn activation_constants_hold_on_a_grid() {
    for act in [Activation::Tanh, Activation::Elu] {
        assert_eq!(act.eval(0.0), 0.0);
        let xs: Vec<f64> = (0..4001).map(|i| -8.0 + i as f64 * 0.004).collect();
        let (mut lip, mut dlip) = (0.0f64, 0.0f64);
        for w in xs.windows(2) {
            let dx = w[1] - w[0];
            lip = lip.max((act.eval(w[1]) - act.eval(w[0])).abs() / dx);
            dlip = dlip.max((act.derivative(w[1]) - act.derivative(w[0])).abs() / dx);
        }
        assert!(lip <= act.alpha_sigma() + 1e-12);
        assert!(dlip <= act.nu_sigma() + 1e-9, "{act}: {dlip}");
        // The stored constants are close to what the grid finds.
        assert!(act.nu_sigma() - dlip < 5e-3, "{act}: {dlip}");
    }
    let exact = 4.0 / (3.0 * 3f64.sqrt());
    assert!((gcnstab_core::model::TANH_SECOND_DERIVATIVE_SUP - exact).abs() < 1e-15);
    assert!(Activation::Tanh.nu_sigma() >= exact);
}

#[test]
fn custom_dense_filter() {
    let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0]]).unwrap();
    let f = FilterMatrix::from_dense(&m, &PowerOptions::default()).unwrap();
    assert_eq!(f.kind(), None);
    assert_eq!(f.label(), "custom");
    let oracle = largest_singular_value(2, 2, m.as_slice());
    assert!((f.c_g() - oracle).abs() < 1e-10);
}
