//! Every differentiable op checked against central finite differences of a
//! random linear functional of its output.

use anglekit_tensor::{BatchNormCfg, ConvOpts, Graph, Mode, NodeId, ParamKind, ParamStore, RunningStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Builds the op on fresh leaves; returns the output node.
type Build = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;

fn objective(inputs: &[Tensor], weights: &Tensor, build: &Build, mode: Mode) -> f64 {
    let mut g = Graph::new(mode);
    let ids: Vec<_> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, &ids);
    g.value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum()
}

fn check(inputs: Vec<Tensor>, build: &Build, mode: Mode, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut g = Graph::new(mode);
    let ids: Vec<_> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, &ids);
    let weights = random(g.shape(out), &mut rng);
    let grads = g.backward(out, weights.clone()).unwrap();
    let h = 1e-2f32;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("input gradient");
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (objective(&plus, &weights, build, mode) - objective(&minus, &weights, build, mode))
                / (2.0 * f64::from(h));
            let a = f64::from(analytic.data()[i]);
            let err = (a - fd).abs() / (1.0f64).max(a.abs()).max(fd.abs());
            assert!(err < tol, "input {k} element {i}: analytic {a} vs numeric {fd}");
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad, groups, k) in [(1, 1, 1, 3), (2, 1, 1, 3), (2, 0, 1, 1), (1, 0, 1, 1), (2, 1, 2, 3)] {
        let x = random(&[2, 4, 6, 5], &mut rng);
        let w = random(&[4, 4 / groups, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        let opts = ConvOpts::new(stride, pad).with_groups(groups);
        check(
            vec![x, w, b],
            &move |g, ids| g.conv2d(ids[0], ids[1], Some(ids[2]), opts).unwrap(),
            Mode::Eval,
            2e-3,
        );
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, stride, pad) in [(2, 2, 0), (4, 2, 1), (3, 1, 1)] {
        let x = random(&[2, 3, 4, 3], &mut rng);
        let w = random(&[3, 2, k, k], &mut rng);
        let b = random(&[2], &mut rng);
        check(
            vec![x, w, b],
            &move |g, ids| g.conv_transpose2d(ids[0], ids[1], Some(ids[2]), stride, pad).unwrap(),
            Mode::Eval,
            2e-3,
        );
    }
}

fn bn_build(g: &mut Graph, ids: &[NodeId]) -> NodeId {
    let mut store = ParamStore::new();
    let mean = store.add("m", ParamKind::Buffer, Tensor::full([3], 0.1)).unwrap();
    let var = store.add("v", ParamKind::Buffer, Tensor::full([3], 1.5)).unwrap();
    let stats = RunningStats {
        mean: store.get(mean),
        var: store.get(var),
        mean_id: mean,
        var_id: var,
    };
    g.batch_norm(ids[0], ids[1], ids[2], stats, BatchNormCfg::default()).unwrap()
}

#[test]
fn batch_norm_gradients_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mode in [Mode::Train, Mode::Eval] {
        let x = random(&[3, 3, 3, 2], &mut rng);
        let gamma = random(&[3], &mut rng);
        let beta = random(&[3], &mut rng);
        check(vec![x, gamma, beta], &bn_build, mode, 1e-2);
    }
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 2, 7, 6], &mut rng);
    check(vec![x.clone()], &|g, ids| g.avg_pool2d(ids[0], 3, 2, 1).unwrap(), Mode::Eval, 2e-3);
    check(vec![x.clone()], &|g, ids| g.adaptive_avg_pool2d(ids[0], 3).unwrap(), Mode::Eval, 2e-3);
    check(vec![x.clone()], &|g, ids| g.global_avg_pool(ids[0]).unwrap(), Mode::Eval, 2e-3);
    // Well-separated values keep the argmax stable under the probe step.
    let n = 2 * 2 * 6 * 6;
    let mut perm: Vec<f32> = (0..n).map(|i| i as f32 * 0.1).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new([2, 2, 6, 6], perm).unwrap();
    check(vec![x.clone()], &|g, ids| g.max_pool2d(ids[0], 3, 2, 1).unwrap(), Mode::Eval, 2e-3);
    check(vec![x], &|g, ids| g.max_pool2d(ids[0], 2, 2, 0).unwrap(), Mode::Eval, 2e-3);
}

#[test]
fn resize_and_elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[1, 2, 3, 4], &mut rng);
    check(vec![x.clone()], &|g, ids| g.upsample_bilinear(ids[0], 7, 9).unwrap(), Mode::Eval, 2e-3);
    check(vec![x.clone()], &|g, ids| g.sigmoid(ids[0]), Mode::Eval, 2e-3);
    check(vec![x.clone()], &|g, ids| g.silu(ids[0]), Mode::Eval, 2e-3);
    check(vec![x.clone()], &|g, ids| g.scale(ids[0], -1.5), Mode::Eval, 2e-3);
    let y = random(&[1, 2, 3, 4], &mut rng);
    check(vec![x.clone(), y.clone()], &|g, ids| g.add(ids[0], ids[1]).unwrap(), Mode::Eval, 2e-3);
    let z = random(&[1, 3, 3, 4], &mut rng);
    check(
        vec![x.clone(), z],
        &|g, ids| g.concat_channels(&[ids[0], ids[1]]).unwrap(),
        Mode::Eval,
        2e-3,
    );
    let s = random(&[1, 2], &mut rng);
    check(vec![x, s], &|g, ids| g.mul_channels(ids[0], ids[1]).unwrap(), Mode::Eval, 2e-3);
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = Tensor::new([1, 1, 2, 3], vec![-0.9, -0.3, 0.4, 0.8, -0.5, 0.2]).unwrap();
    check(vec![x], &|g, ids| g.relu(ids[0]), Mode::Eval, 2e-3);
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[2, 5], &mut rng);
    let b = random(&[2], &mut rng);
    check(
        vec![x, w, b],
        &|g, ids| g.linear(ids[0], ids[1], Some(ids[2])).unwrap(),
        Mode::Eval,
        2e-3,
    );
}

#[test]
fn shared_parameter_accumulates_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("w", ParamKind::Weight, Tensor::full([1, 1, 1, 1], 2.0)).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let w1 = g.param(&store, p);
    let w2 = g.param(&store, p);
    assert_eq!(w1, w2);
    let a = g.conv2d(x, w1, None, ConvOpts::default()).unwrap();
    let b = g.conv2d(a, w2, None, ConvOpts::default()).unwrap();
    // b = w² x, so d(sum b)/dw = 2·w·Σx = 16.
    let grads = g.backward(b, Tensor::full([1, 1, 2, 2], 1.0)).unwrap();
    assert_eq!(grads.param(p).unwrap().data(), &[16.0]);
}
