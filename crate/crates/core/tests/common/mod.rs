//! Central finite-difference gradient checks shared by the test targets.

#![allow(dead_code)]

use bearing_core::fcn::{Cam, FcnConfig, FcnModel};
use bearing_core::nn::ops;
use bearing_core::nn::{BatchNorm1d, Parameterized, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero and pairwise separated, so ReLU kinks and
/// max-pool ties stay outside the difference stencil.
pub fn separated(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| 0.05 + 0.013 * i as f64).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    for x in v.iter_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    Tensor::new(shape, v).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error of `analytic[j]` against central differences of
/// `loss` with respect to every element of `inputs[j]`.
pub fn fd_worst(inputs: &[Tensor], analytic: &[Vec<f64>], loss: &dyn Fn(&[Tensor]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[j].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[j].data_mut()[i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(numeric, analytic[j][i]));
        }
    }
    worst
}

/// Worst relative error per layer.
pub fn layer_checks() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    // conv1d with stride and padding, bias included
    for (name, stride, pad) in [("conv1d", 1, 0), ("conv1d strided+padded", 2, 2)] {
        let x = random(&[2, 3, 11], 1);
        let w = random(&[4, 3, 5], 2);
        let b = random(&[4], 3);
        let y = ops::conv1d_forward(&x, &w, Some(b.data()), stride, pad).unwrap();
        let c = random(y.shape(), 4);
        let (dx, dw, db) = ops::conv1d_backward(&x, &w, &c, stride, pad).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::conv1d_forward(&t[0], &t[1], Some(t[2].data()), stride, pad).unwrap(), &c);
        out.push((name, fd_worst(&[x, w, b], &[dx.into_data(), dw.into_data(), db], &loss)));
    }

    {
        let x = random(&[3, 5], 5);
        let w = random(&[4, 5], 6);
        let b = random(&[4], 7);
        let c = random(&[3, 4], 8);
        let (dx, dw, db) = ops::linear_backward(&x, &w, &c).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::linear_forward(&t[0], &t[1], Some(t[2].data())).unwrap(), &c);
        out.push(("linear", fd_worst(&[x, w, b], &[dx.into_data(), dw.into_data(), db], &loss)));
    }

    {
        let x = separated(&[2, 3, 4], 9);
        let c = random(x.shape(), 10);
        let dx = ops::relu_backward(&x, &c).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::relu(&t[0]), &c);
        out.push(("relu", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let x = random(&[2, 3, 4], 11);
        let c = random(x.shape(), 12);
        let dx = ops::sigmoid_backward(&ops::sigmoid(&x), &c).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::sigmoid(&t[0]), &c);
        out.push(("sigmoid", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let x = random(&[2, 3, 6], 13);
        let c = random(&[2, 3], 14);
        let dx = ops::global_avg_pool_backward(&c, 6).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::global_avg_pool(&t[0]).unwrap(), &c);
        out.push(("global_avg_pool", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let x = separated(&[2, 3, 6], 15);
        let c = random(&[2, 3], 16);
        let (_, idx) = ops::global_max_pool(&x).unwrap();
        let dx = ops::global_max_pool_backward(&c, &idx, 6).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::global_max_pool(&t[0]).unwrap().0, &c);
        out.push(("global_max_pool", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let x = separated(&[2, 3, 9], 17);
        let (y, idx) = ops::max_pool(&x, 4).unwrap();
        let c = random(y.shape(), 18);
        let dx = ops::max_pool_backward(&c, &idx, 9).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::max_pool(&t[0], 4).unwrap().0, &c);
        out.push(("max_pool", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let x = random(&[3, 2, 5], 19);
        let gamma = random(&[2], 20);
        let beta = random(&[2], 21);
        let c = random(x.shape(), 22);
        let (_, cache) = ops::batchnorm_train(&x, gamma.data(), beta.data(), 1e-5).unwrap();
        let (dx, dg, db) = ops::batchnorm_backward(&cache, gamma.data(), &c).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::batchnorm_train(&t[0], t[1].data(), t[2].data(), 1e-5).unwrap().0, &c);
        out.push(("batchnorm1d", fd_worst(&[x, gamma, beta], &[dx.into_data(), dg, db], &loss)));
    }

    {
        let a = random(&[2, 3, 4], 23);
        let b = random(&[2, 3, 4], 24);
        let c = random(a.shape(), 25);
        let loss = |t: &[Tensor]| dot(&ops::add(&t[0], &t[1]).unwrap(), &c);
        let g = c.data().to_vec();
        out.push(("add", fd_worst(&[a, b], &[g.clone(), g], &loss)));
    }

    {
        let x = random(&[2, 3, 4], 26);
        let s = random(&[2, 3], 27);
        let c = random(x.shape(), 28);
        let (dx, ds) = ops::channel_scale_backward(&x, &s, &c).unwrap();
        let loss = |t: &[Tensor]| dot(&ops::channel_scale(&t[0], &t[1]).unwrap(), &c);
        out.push(("channel_scale", fd_worst(&[x, s], &[dx.into_data(), ds.into_data()], &loss)));
    }

    {
        let logits = random(&[4, 5], 29);
        let labels = [0, 4, 2, 2];
        let (_, g) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
        let loss = |t: &[Tensor]| ops::softmax_cross_entropy(&t[0], &labels).unwrap().0;
        out.push(("softmax_cross_entropy", fd_worst(&[logits], &[g.into_data()], &loss)));
    }

    {
        let mut bn = BatchNorm1d::new("bn", 3);
        bn.gamma.value = random(&[3], 30);
        bn.beta.value = random(&[3], 31);
        let x = random(&[2, 3, 4], 32);
        let c = random(x.shape(), 33);
        let (_, cache) = bn.forward_train(&x).unwrap();
        let dx = bn.backward(&cache, &c).unwrap();
        let loss = |t: &[Tensor]| dot(&bn.forward_train(&t[0]).unwrap().0, &c);
        out.push(("batchnorm1d layer", fd_worst(&[x], &[dx.into_data()], &loss)));
    }

    {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut cam = Cam::new("cam", 6, 2, &mut rng).unwrap();
        let x = random(&[2, 6, 5], 35);
        let c = random(x.shape(), 36);
        let (_, cache) = cam.forward_train(x.clone()).unwrap();
        cam.zero_grad();
        let dx = cam.backward(&cache, &c).unwrap();
        let loss = |t: &[Tensor]| dot(&cam.forward_train(t[0].clone()).unwrap().0, &c);
        let mut worst = fd_worst(&[x.clone()], &[dx.into_data()], &loss);
        worst = worst.max(param_worst(&mut cam, &|m: &Cam| dot(&m.forward_train(x.clone()).unwrap().0, &c)));
        out.push(("channel attention", worst));
    }
    out
}

/// Worst relative error over every trainable parameter element, using the
/// gradients currently accumulated in `model`.
pub fn param_worst<M: Parameterized>(model: &mut M, loss: &dyn Fn(&M) -> f64) -> f64 {
    let mut params: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    model.visit(&mut |p| {
        if p.trainable {
            params.push((p.name.clone(), p.value.data().to_vec(), p.grad.clone()))
        }
    });
    let mut worst: f64 = 0.0;
    for (name, values, grad) in &params {
        for i in 0..values.len() {
            let set = |m: &mut M, v: f64| {
                m.visit_mut(&mut |p| {
                    if &p.name == name {
                        p.value.data_mut()[i] = v;
                    }
                })
            };
            set(model, values[i] + H);
            let lp = loss(model);
            set(model, values[i] - H);
            let lm = loss(model);
            set(model, values[i]);
            worst = worst.max(rel_err((lp - lm) / (2.0 * H), grad[i]));
        }
    }
    worst
}

pub fn tiny_config() -> FcnConfig {
    FcnConfig {
        n_f: 64,
        in_channels: 3,
        stem_kernel: 8,
        stem_stride: 2,
        stem_channels: 2,
        branch_kernels: vec![3, 5],
        block_widths: vec![4, 4],
        cam_reduction: 2,
        pool_width: 2,
        hidden: 8,
        classes: 10,
        batch_norm: true,
    }
}

/// Cross-entropy of a tiny network: worst relative error over all parameters and the input.
pub fn tiny_fcn_check() -> f64 {
    let mut m = FcnModel::new(tiny_config(), 3).unwrap();
    let x = random(&[3, 3, 64], 37);
    let labels = [0, 9, 4];
    let loss = |m: &FcnModel, x: &Tensor| {
        let (logits, _) = m.forward_train(x).unwrap();
        ops::softmax_cross_entropy(&logits, &labels).unwrap().0
    };
    let (logits, cache) = m.forward_train(&x).unwrap();
    let (_, g) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    m.zero_grad();
    let dx = m.backward(&cache, &g).unwrap();
    let worst = param_worst(&mut m, &|m: &FcnModel| loss(m, &x));
    let input = fd_worst(&[x.clone()], &[dx.into_data()], &|t: &[Tensor]| loss(&m, &t[0]));
    worst.max(input)
}
