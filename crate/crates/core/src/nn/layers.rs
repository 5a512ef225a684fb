//! Parameter-owning wrappers around the kernels in [`ops`](super::ops).

use rand::Rng;

use super::ops::{self, BatchNormCache};
use super::{Param, Parameterized, Tensor};
use crate::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Kaiming-uniform (ReLU gain) fan-in initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(rng, &[out_channels, in_channels, kernel], in_channels * kernel);
        Self {
            weight: Param::new(format!("{name}.weight"), w, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.dim(2)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv1d_forward(
            x,
            &self.weight.value,
            Some(self.bias.value.data()),
            self.stride,
            self.padding,
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (dx, dw, db) =
            ops::conv1d_backward(x, &self.weight.value, grad_out, self.stride, self.padding)?;
        self.weight.accumulate(dw.data());
        self.bias.accumulate(&db);
        Ok(dx)
    }
}

impl Parameterized for Conv1d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        inputs: usize,
        outputs: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(rng, &[outputs, inputs], inputs);
        Self {
            weight: Param::new(format!("{name}.weight"), w, true),
            bias: with_bias
                .then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs]), true)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear_forward(
            x,
            &self.weight.value,
            self.bias.as_ref().map(|b| b.value.data()),
        )
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (dx, dw, db) = ops::linear_backward(x, &self.weight.value, grad_out)?;
        self.weight.accumulate(dw.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate(&db);
        }
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0), true),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: Param::new(
                format!("{name}.running_var"),
                Tensor::filled(&[channels], 1.0),
                false,
            ),
        }
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        ops::batchnorm_train(x, self.gamma.value.data(), self.beta.value.data(), BN_EPS)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        ops::batchnorm_eval(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            self.running_mean.value.data(),
            self.running_var.value.data(),
            BN_EPS,
        )
    }

    /// Accumulates affine gradients, folds the batch statistics into the
    /// running estimates, and returns the input gradient.
    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<Tensor> {
        let (dx, dgamma, dbeta) = ops::batchnorm_backward(cache, self.gamma.value.data(), grad_out)?;
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        self.update_running(cache);
        Ok(dx)
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let xh = &cache.normalized;
        let n = (xh.dim(0) * xh.dim(2)) as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (r, m) in self.running_mean.value.data_mut().iter_mut().zip(&cache.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.value.data_mut().iter_mut().zip(&cache.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

impl Parameterized for BatchNorm1d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
