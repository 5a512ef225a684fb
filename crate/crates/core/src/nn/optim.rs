//! AdamW and a reduce-on-plateau learning-rate schedule.

use super::{Param, Parameterized};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every trainable parameter of `model`.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let first = &mut self.first;
        let second = &mut self.second;
        let mut slot = 0usize;
        let mut shape_err: Option<Error> = None;
        model.visit_mut(&mut |p: &mut Param| {
            if !p.trainable || shape_err.is_some() {
                return;
            }
            let n = p.value.len();
            if first.len() <= slot {
                first.push(vec![0.0; n]);
                second.push(vec![0.0; n]);
            }
            if first[slot].len() != n || p.grad.len() != n {
                shape_err = Some(Error::Shape(format!(
                    "optimizer state for {} does not match its shape",
                    p.name
                )));
                return;
            }
            let (m, v) = (&mut first[slot], &mut second[slot]);
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&p.grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *w -= c.lr * c.weight_decay * *w;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
            slot += 1;
        });
        match shape_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Halves the learning rate after `patience` consecutive non-improving steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
    lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64, floor: f64) -> Self {
        Self {
            patience,
            factor,
            floor,
            lr,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// 150-batch patience, factor 0.5, stop below 1e-7.
    pub fn standard(lr: f64) -> Self {
        Self::new(lr, 150, 0.5, 1e-7)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn stale_count(&self) -> usize {
        self.stale
    }

    /// Records a batch loss and returns the learning rate to use next.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }

    /// Training is over once the rate has decayed below the floor.
    pub fn should_stop(&self) -> bool {
        self.lr < self.floor
    }
}
