use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use super::{FcnConfig, InputVariant};
use crate::nn::ops::{self, BatchNormCache};
use crate::nn::{checkpoint, BatchNorm1d, Conv1d, Linear, Param, Parameterized, Tensor};
use crate::{Error, Result};

/// Convolution, optional batch norm, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub conv: Conv1d,
    pub bn: Option<BatchNorm1d>,
}

#[derive(Debug, Clone)]
pub struct ConvUnitCache {
    input: Tensor,
    bn: Option<BatchNormCache>,
    pre: Tensor,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        batch_norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: Conv1d::new(&format!("{name}.conv"), cin, cout, kernel, stride, padding, rng),
            bn: batch_norm.then(|| BatchNorm1d::new(&format!("{name}.bn"), cout)),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward_eval(&y)?;
        }
        Ok(ops::relu(&y))
    }

    pub fn forward_train(&self, x: Tensor) -> Result<(Tensor, ConvUnitCache)> {
        let y = self.conv.forward(&x)?;
        let (pre, bn) = match &self.bn {
            Some(bn) => {
                let (y, c) = bn.forward_train(&y)?;
                (y, Some(c))
            }
            None => (y, None),
        };
        let out = ops::relu(&pre);
        Ok((out, ConvUnitCache { input: x, bn, pre }))
    }

    pub fn backward(&mut self, cache: &ConvUnitCache, grad: &Tensor) -> Result<Tensor> {
        let mut g = ops::relu_backward(&cache.pre, grad)?;
        if let (Some(bn), Some(c)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            g = bn.backward(c, &g)?;
        }
        self.conv.backward(&cache.input, &g)
    }
}

impl Parameterized for ConvUnit {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
    }
}

/// Channel attention: `x * sigmoid(mlp(avg(x)) + mlp(max(x)))` with one shared MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct CamCache {
    x: Tensor,
    avg: Tensor,
    mx: Tensor,
    mx_idx: Vec<usize>,
    h_avg: Tensor,
    h_max: Tensor,
    weights: Tensor,
}

impl Cam {
    pub fn new(name: &str, channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if reduction == 0 || reduction > channels {
            return Err(Error::Config(format!(
                "attention reduction {reduction} must lie in 1..={channels}"
            )));
        }
        let mid = (channels / reduction).max(1);
        Ok(Self {
            fc1: Linear::new(&format!("{name}.fc1"), channels, mid, true, rng),
            fc2: Linear::new(&format!("{name}.fc2"), mid, channels, true, rng),
        })
    }

    fn mlp(&self, v: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.fc1.forward(v)?;
        let out = self.fc2.forward(&ops::relu(&h))?;
        Ok((h, out))
    }

    /// Per-sample, per-channel attention weights `(B, C)`, each in (0, 1).
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        let avg = ops::global_avg_pool(x)?;
        let (mx, _) = ops::global_max_pool(x)?;
        let (_, a) = self.mlp(&avg)?;
        let (_, m) = self.mlp(&mx)?;
        Ok(ops::sigmoid(&ops::add(&a, &m)?))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        ops::channel_scale(x, &self.weights(x)?)
    }

    pub fn forward_train(&self, x: Tensor) -> Result<(Tensor, CamCache)> {
        let avg = ops::global_avg_pool(&x)?;
        let (mx, mx_idx) = ops::global_max_pool(&x)?;
        let (h_avg, a) = self.mlp(&avg)?;
        let (h_max, m) = self.mlp(&mx)?;
        let weights = ops::sigmoid(&ops::add(&a, &m)?);
        let y = ops::channel_scale(&x, &weights)?;
        Ok((
            y,
            CamCache {
                x,
                avg,
                mx,
                mx_idx,
                h_avg,
                h_max,
                weights,
            },
        ))
    }

    fn mlp_backward(&mut self, v: &Tensor, h: &Tensor, g: &Tensor) -> Result<Tensor> {
        let gr = self.fc2.backward(&ops::relu(h), g)?;
        let gh = ops::relu_backward(h, &gr)?;
        self.fc1.backward(v, &gh)
    }

    pub fn backward(&mut self, c: &CamCache, grad: &Tensor) -> Result<Tensor> {
        let (mut dx, dw) = ops::channel_scale_backward(&c.x, &c.weights, grad)?;
        let ds = ops::sigmoid_backward(&c.weights, &dw)?;
        let len = c.x.dim(2);
        let d_avg = self.mlp_backward(&c.avg, &c.h_avg, &ds)?;
        let d_max = self.mlp_backward(&c.mx, &c.h_max, &ds)?;
        let ga = ops::global_avg_pool_backward(&d_avg, len)?;
        let gm = ops::global_max_pool_backward(&d_max, &c.mx_idx, len)?;
        for ((d, a), m) in dx.data_mut().iter_mut().zip(ga.data()).zip(gm.data()) {
            *d += a + m;
        }
        Ok(dx)
    }
}

impl Parameterized for Cam {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Multiscale channel-attention block: parallel same-padded convolutions,
/// concatenation, channel attention, pointwise fusion, max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Mscab {
    pub branches: Vec<ConvUnit>,
    pub cam: Cam,
    pub fuse: ConvUnit,
    pub pool: usize,
}

#[derive(Debug, Clone)]
pub struct MscabCache {
    branches: Vec<ConvUnitCache>,
    cam: CamCache,
    fuse: ConvUnitCache,
    pool_idx: Vec<usize>,
    fused_len: usize,
}

impl Mscab {
    pub fn new(name: &str, cin: usize, cfg: &FcnConfig, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let branches = cfg
            .branch_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                ConvUnit::new(&format!("{name}.branch{i}"), cin, width, k, 1, k / 2, cfg.batch_norm, rng)
            })
            .collect::<Vec<_>>();
        let cat = width * branches.len();
        let cam = Cam::new(&format!("{name}.cam"), cat, cfg.cam_reduction, rng)?;
        let fuse = ConvUnit::new(&format!("{name}.fuse"), cat, width, 1, 1, 0, cfg.batch_norm, rng);
        Ok(Self {
            branches,
            cam,
            fuse,
            pool: cfg.pool_width,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.infer(x))
            .collect::<Result<Vec<_>>>()?;
        let cat = ops::concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let fused = self.fuse.infer(&self.cam.infer(&cat)?)?;
        Ok(ops::max_pool(&fused, self.pool)?.0)
    }

    pub fn forward_train(&self, x: Tensor) -> Result<(Tensor, MscabCache)> {
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (y, c) = b.forward_train(x.clone())?;
            outs.push(y);
            caches.push(c);
        }
        let cat = ops::concat_channels(&outs.iter().collect::<Vec<_>>())?;
        drop(outs);
        let (att, cam) = self.cam.forward_train(cat)?;
        let (fused, fuse) = self.fuse.forward_train(att)?;
        let fused_len = fused.dim(2);
        let (y, pool_idx) = ops::max_pool(&fused, self.pool)?;
        Ok((
            y,
            MscabCache {
                branches: caches,
                cam,
                fuse,
                pool_idx,
                fused_len,
            },
        ))
    }

    pub fn backward(&mut self, c: &MscabCache, grad: &Tensor) -> Result<Tensor> {
        let g = ops::max_pool_backward(grad, &c.pool_idx, c.fused_len)?;
        let g = self.fuse.backward(&c.fuse, &g)?;
        let g = self.cam.backward(&c.cam, &g)?;
        let widths: Vec<usize> = self.branches.iter().map(|b| b.conv.out_channels()).collect();
        let parts = ops::split_channels(&g, &widths)?;
        let mut dx: Option<Tensor> = None;
        for ((b, bc), gp) in self.branches.iter_mut().zip(&c.branches).zip(&parts) {
            let d = b.backward(bc, gp)?;
            dx = Some(match dx {
                None => d,
                Some(acc) => ops::add(&acc, &d)?,
            });
        }
        dx.ok_or_else(|| Error::Shape("block without branches".into()))
    }
}

impl Parameterized for Mscab {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.iter().for_each(|b| b.visit(f));
        self.cam.visit(f);
        self.fuse.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.iter_mut().for_each(|b| b.visit_mut(f));
        self.cam.visit_mut(f);
        self.fuse.visit_mut(f);
    }
}

/// Encoder (stems, MSCAB blocks, global average pooling) plus the
/// two-layer classifier `l2(relu(l1(features)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub config: FcnConfig,
    pub stems: Vec<ConvUnit>,
    pub blocks: Vec<Mscab>,
    pub l1: Linear,
    pub l2: Linear,
}

/// Activations saved by [`FcnModel::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stems: Vec<ConvUnitCache>,
    blocks: Vec<MscabCache>,
    encoded_len: usize,
    features: Tensor,
    hidden: Tensor,
}

impl ForwardCache {
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

impl FcnModel {
    pub fn new(config: FcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let stems = (0..c.in_channels)
            .map(|i| {
                ConvUnit::new(
                    &format!("stem{i}"),
                    1,
                    c.stem_channels,
                    c.stem_kernel,
                    c.stem_stride,
                    0,
                    c.batch_norm,
                    &mut rng,
                )
            })
            .collect();
        let mut cin = c.stem_out_channels();
        let mut blocks = Vec::with_capacity(c.block_widths.len());
        for (j, &w) in c.block_widths.iter().enumerate() {
            blocks.push(Mscab::new(&format!("block{j}"), cin, c, w, &mut rng)?);
            cin = w;
        }
        let l1 = Linear::new("l1", cin, c.hidden, true, &mut rng);
        let l2 = Linear::new("l2", c.hidden, c.classes, true, &mut rng);
        Ok(Self {
            config,
            stems,
            blocks,
            l1,
            l2,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_shape(
            &[x.dim(0), self.config.in_channels, self.config.n_f],
            "network input",
        )
        .map_err(|_| {
            Error::Shape(format!(
                "network expects (B, {}, {}), got {:?}",
                self.config.in_channels,
                self.config.n_f,
                x.shape()
            ))
        })
    }

    fn input_channels(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "network expects a rank-3 input, got {:?}",
                x.shape()
            )));
        }
        self.check_input(x)?;
        ops::split_channels(x, &vec![1; self.config.in_channels])
    }

    /// Pooled feature vectors `(B, feature_width)` in inference mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let stem_out = self
            .input_channels(x)?
            .iter()
            .zip(&self.stems)
            .map(|(xc, s)| s.infer(xc))
            .collect::<Result<Vec<_>>>()?;
        let mut h = ops::concat_channels(&stem_out.iter().collect::<Vec<_>>())?;
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        ops::global_avg_pool(&h)
    }

    /// Classifier head applied to pooled features.
    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        self.l2.forward(&ops::relu(&self.l1.forward(features)?))
    }

    /// Logits `(B, classes)` in inference mode.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        self.head(&self.encode(x)?)
    }

    /// Predicted class per sample.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.classify(x)?))
    }

    /// Training-mode forward pass (batch statistics in batch norm).
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let inputs = self.input_channels(x)?;
        let mut stem_out = Vec::with_capacity(inputs.len());
        let mut stems = Vec::with_capacity(inputs.len());
        for (xc, s) in inputs.into_iter().zip(&self.stems) {
            let (y, c) = s.forward_train(xc)?;
            stem_out.push(y);
            stems.push(c);
        }
        let mut h = ops::concat_channels(&stem_out.iter().collect::<Vec<_>>())?;
        drop(stem_out);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_train(h)?;
            h = y;
            blocks.push(c);
        }
        let encoded_len = h.dim(2);
        let features = ops::global_avg_pool(&h)?;
        let hidden = self.l1.forward(&features)?;
        let logits = self.l2.forward(&ops::relu(&hidden))?;
        Ok((
            logits,
            ForwardCache {
                stems,
                blocks,
                encoded_len,
                features,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d logits` and returns the input gradient.
    pub fn backward(&mut self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.l2.backward(&ops::relu(&cache.hidden), grad_logits)?;
        let g = ops::relu_backward(&cache.hidden, &g)?;
        let g = self.l1.backward(&cache.features, &g)?;
        let mut g = ops::global_avg_pool_backward(&g, cache.encoded_len)?;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g)?;
        }
        let parts = ops::split_channels(&g, &vec![self.config.stem_channels; self.stems.len()])?;
        let dxs = self
            .stems
            .iter_mut()
            .zip(&cache.stems)
            .zip(&parts)
            .map(|((s, c), gp)| s.backward(c, gp))
            .collect::<Result<Vec<_>>>()?;
        ops::concat_channels(&dxs.iter().collect::<Vec<_>>())
    }
}

impl FcnModel {
    /// Weights plus `config.*` tensors describing the architecture and input variant.
    pub fn to_tensors(&self, variant: InputVariant) -> Result<Vec<(String, Tensor)>> {
        if variant.channels() != self.config.in_channels {
            return Err(Error::Config(format!(
                "variant {variant} needs {} channels, model has {}",
                variant.channels(),
                self.config.in_channels
            )));
        }
        let mut t = checkpoint::collect(self);
        for (k, v) in self.config.to_pairs() {
            let vals: Vec<f64> = match v.as_str() {
                "true" => vec![1.0],
                "false" => vec![0.0],
                _ => v.split(',').map(|x| x.parse::<f64>().unwrap_or(f64::NAN)).collect(),
            };
            t.push((format!("config.{k}"), Tensor::new(&[vals.len()], vals)?));
        }
        let vi = InputVariant::ALL.iter().position(|&v| v == variant).unwrap();
        t.push(("config.variant".into(), Tensor::new(&[1], vec![vi as f64])?));
        Ok(t)
    }

    pub fn from_tensors(t: &[(String, Tensor)]) -> Result<(Self, InputVariant)> {
        let mut cfg = FcnConfig::default();
        let mut variant = None;
        for (name, v) in t {
            let Some(key) = name.strip_prefix("config.") else { continue };
            if key == "variant" {
                variant = InputVariant::ALL.get(v.data()[0] as usize).copied();
                continue;
            }
            let text = if key == "batch_norm" {
                (v.data()[0] != 0.0).to_string()
            } else {
                v.data().iter().map(|x| (*x as usize).to_string()).collect::<Vec<_>>().join(",")
            };
            if !cfg.apply(key, &text)? {
                return Err(Error::Persistence(format!("unknown checkpoint key {name}")));
            }
        }
        let variant = variant.ok_or_else(|| Error::Persistence("checkpoint lacks config.variant".into()))?;
        let mut model = FcnModel::new(cfg, 0)?;
        checkpoint::restore(&mut model, t)?;
        Ok((model, variant))
    }

    pub fn save(&self, path: impl AsRef<Path>, variant: InputVariant) -> Result<()> {
        checkpoint::save(path, &self.to_tensors(variant)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, InputVariant)> {
        Self::from_tensors(&checkpoint::load(path)?)
    }
}

impl Parameterized for FcnModel {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stems.iter().for_each(|s| s.visit(f));
        self.blocks.iter().for_each(|b| b.visit(f));
        self.l1.visit(f);
        self.l2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stems.iter_mut().for_each(|s| s.visit_mut(f));
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
    }
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.dim(t.rank() - 1);
    t.data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}
