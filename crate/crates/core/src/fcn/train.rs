use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::argmax_rows;
use super::{FcnModel, InputVariant};
use crate::nn::ops::softmax_cross_entropy;
use crate::nn::{checkpoint, AdamW, AdamWConfig, Parameterized, PlateauSchedule, Tensor};
use crate::signal::UnifiedRepresentation;
use crate::{Error, Result};

/// One network input, flattened channel-major, with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Sample {
    /// Picks the channels a variant needs out of a unified representation.
    pub fn from_unified(rep: &UnifiedRepresentation, variant: InputVariant, label: usize) -> Result<Self> {
        let picks: &[usize] = match variant {
            InputVariant::Full => &[0, 1, 2],
            InputVariant::NoRefNoRes => &[0],
            InputVariant::NoRes => &[0, 1],
            InputVariant::NoRef => &[0, 2],
            InputVariant::TimeDomain => {
                return Err(Error::Config(
                    "time-domain samples are built from raw segments".into(),
                ))
            }
        };
        let input = picks.iter().flat_map(|&c| rep.channel(c).iter().copied()).collect();
        Ok(Self { input, label })
    }

    /// First `n_f` raw samples of a segment, zero-padded when shorter.
    pub fn time_domain(samples: &[f64], n_f: usize, label: usize) -> Self {
        let mut input = vec![0.0; n_f];
        let n = samples.len().min(n_f);
        input[..n].copy_from_slice(&samples[..n]);
        Self { input, label }
    }
}

/// Samples sharing one input shape `(channels, n_f)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub channels: usize,
    pub n_f: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(channels: usize, n_f: usize) -> Self {
        Self {
            channels,
            n_f,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Sample) -> Result<()> {
        if s.input.len() != self.channels * self.n_f {
            return Err(Error::Shape(format!(
                "sample of length {} in a set of shape ({}, {})",
                s.input.len(),
                self.channels,
                self.n_f
            )));
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Logits-ready predictions in batches of `batch`.
    pub fn predict(&self, model: &FcnModel, batch: usize) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        let mut out = Vec::with_capacity(self.len());
        for chunk in idx.chunks(batch.max(1)) {
            let (x, _) = assemble_batch(self, chunk)?;
            out.extend(model.predict(&x)?);
        }
        Ok(out)
    }

    pub fn accuracy(&self, model: &FcnModel, batch: usize) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Data("accuracy of an empty set".into()));
        }
        let pred = self.predict(model, batch)?;
        let hits = pred.iter().zip(&self.samples).filter(|(p, s)| **p == s.label).count();
        Ok(hits as f64 / self.len() as f64)
    }
}

/// Stacks the indexed samples into a `(B, channels, n_f)` tensor.
pub fn assemble_batch(set: &SampleSet, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let per = set.channels * set.n_f;
    let mut data = Vec::with_capacity(indices.len() * per);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = set
            .samples
            .get(i)
            .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))?;
        data.extend_from_slice(&s.input);
        labels.push(s.label);
    }
    Ok((Tensor::new(&[indices.len(), set.channels, set.n_f], data)?, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub patience: usize,
    pub factor: f64,
    pub lr_floor: f64,
    pub seed: u64,
    /// Stop once validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
    /// Append-only TSV training log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 1024,
            optimizer: AdamWConfig::default(),
            patience: 150,
            factor: 0.5,
            lr_floor: 1e-7,
            seed: 0,
            target_val_acc: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.optimizer.lr.to_string()),
            ("weight_decay".into(), self.optimizer.weight_decay.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("factor".into(), self.factor.to_string()),
            ("lr_floor".into(), self.lr_floor.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        if let Some(t) = self.target_val_acc {
            v.push(("target_val_acc".into(), t.to_string()));
        }
        v
    }

    /// Applies one `key=value` setting; returns `false` for keys this config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        use crate::config::parse_num;
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.optimizer.lr = parse_num(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "factor" => self.factor = parse_num(key, value)?,
            "lr_floor" => self.lr_floor = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "target_val_acc" => self.target_val_acc = Some(parse_num(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) || !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config("lr must be positive and factor in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub steps: u64,
}

fn append_log(path: &PathBuf, rec: &EpochRecord) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "epoch\ttrain_loss\ttrain_acc\tval_acc\tlr")?;
    }
    writeln!(
        f,
        "{}\t{:.6}\t{:.4}\t{:.4}\t{:e}",
        rec.epoch, rec.train_loss, rec.train_acc, rec.val_acc, rec.lr
    )?;
    Ok(())
}

/// Cross-entropy training with AdamW and the plateau schedule. On return the
/// model holds the weights of the epoch with the best validation accuracy
/// (training accuracy when `val` is empty).
pub fn pretrain(
    model: &mut FcnModel,
    train: &SampleSet,
    val: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mc = &model.config;
    for set in [train, val] {
        if !set.is_empty() && (set.channels != mc.in_channels || set.n_f != mc.n_f) {
            return Err(Error::Shape(format!(
                "samples of shape ({}, {}) for a network expecting ({}, {})",
                set.channels, set.n_f, mc.in_channels, mc.n_f
            )));
        }
    }
    if let Some(s) = train.samples.iter().find(|s| s.label >= mc.classes) {
        return Err(Error::Label {
            label: s.label,
            classes: mc.classes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut sched = PlateauSchedule::new(cfg.optimizer.lr, cfg.patience, cfg.factor, cfg.lr_floor);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut best: Option<(usize, f64, Vec<(String, Tensor)>)> = None;
    let eval_batch = cfg.batch_size.max(64);

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = assemble_batch(train, chunk)?;
            let (logits, cache) = model.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Data(format!("non-finite loss at epoch {epoch}")));
            }
            if initial_loss.is_nan() {
                initial_loss = loss;
            }
            loss_sum += loss * chunk.len() as f64;
            hits += argmax_rows(&logits)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            model.zero_grad();
            model.backward(&cache, &grad)?;
            opt.step(model)?;
            let lr = sched.step(loss);
            opt.set_lr(lr);
            if sched.should_stop() {
                break;
            }
        }
        let train_acc = hits as f64 / train.len() as f64;
        let val_acc = if val.is_empty() {
            train.accuracy(model, eval_batch)?
        } else {
            val.accuracy(model, eval_batch)?
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc,
            val_acc,
            lr: opt.lr(),
        };
        if let Some(p) = &cfg.log_path {
            append_log(p, &rec)?;
        }
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, checkpoint::collect(model)));
        }
        records.push(rec);
        let reached = cfg.target_val_acc.is_some_and(|t| val_acc >= t);
        if sched.should_stop() || reached {
            break 'epochs;
        }
    }

    let (best_epoch, best_val_acc, weights) = best.expect("at least one epoch ran");
    checkpoint::restore(model, &weights)?;
    Ok(TrainReport {
        epochs: records,
        initial_loss,
        best_epoch,
        best_val_acc,
        steps: opt.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::FcnConfig;
    use rand::Rng;

    fn toy_cfg(n_f: usize, classes: usize) -> FcnConfig {
        FcnConfig {
            n_f,
            in_channels: 1,
            stem_kernel: 8,
            stem_stride: 4,
            stem_channels: 4,
            branch_kernels: vec![3, 5],
            block_widths: vec![6, 8],
            cam_reduction: 2,
            pool_width: 2,
            hidden: 16,
            classes,
            batch_norm: true,
        }
    }

    /// Class `c` is a tone in bin band `c`, plus noise.
    fn tones(n: usize, n_f: usize, classes: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SampleSet::new(1, n_f);
        for i in 0..n {
            let label = i % classes;
            let f = (label + 1) as f64 * n_f as f64 / (2.0 * (classes + 1) as f64);
            let input = (0..n_f)
                .map(|t| {
                    (std::f64::consts::PI * f * t as f64 / n_f as f64).cos()
                        + rng.random_range(-0.5..0.5)
                })
                .collect();
            set.push(Sample { input, label }).unwrap();
        }
        set
    }

    #[test]
    fn empty_training_set_is_a_data_error() {
        let mut m = FcnModel::new(toy_cfg(64, 3), 0).unwrap();
        let empty = SampleSet::new(1, 64);
        let r = pretrain(&mut m, &empty, &empty, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn learns_separable_tones_and_starts_near_ln_gamma() {
        let train = tones(60, 128, 3, 1);
        let val = tones(15, 128, 3, 2);
        let mut m = FcnModel::new(toy_cfg(128, 3), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            optimizer: AdamWConfig {
                lr: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = pretrain(&mut m, &train, &val, &cfg).unwrap();
        assert!((rep.initial_loss - 3f64.ln()).abs() < 1.0, "{}", rep.initial_loss);
        assert!(rep.best_val_acc >= 0.99, "{:?}", rep.epochs.last());
        assert_eq!(val.accuracy(&m, 64).unwrap(), rep.best_val_acc);
    }

    #[test]
    fn same_seed_same_weights() {
        let train = tones(24, 64, 2, 4);
        let run = || {
            let mut m = FcnModel::new(toy_cfg(64, 2), 5).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 8,
                seed: 9,
                ..Default::default()
            };
            pretrain(&mut m, &train, &SampleSet::new(1, 64), &cfg).unwrap();
            checkpoint::collect(&m)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_is_tsv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        let train = tones(12, 64, 2, 4);
        let mut m = FcnModel::new(toy_cfg(64, 2), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            log_path: Some(path.clone()),
            ..Default::default()
        };
        pretrain(&mut m, &train, &train, &cfg).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch\ttrain_loss\ttrain_acc\tval_acc\tlr");
        assert_eq!(lines.len(), 4);
        assert!(lines[1..].iter().all(|l| l.split('\t').count() == 5));
    }

    #[test]
    fn time_domain_pads() {
        let s = Sample::time_domain(&[1.0, 2.0], 4, 3);
        assert_eq!(s.input, vec![1.0, 2.0, 0.0, 0.0]);
    }
}
