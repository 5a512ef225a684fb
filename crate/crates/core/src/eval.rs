//! Metrics and the experiment harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::fcn::{pretrain, FcnConfig, FcnModel, InputVariant, Sample, SampleSet, TrainConfig, TrainReport};
use crate::reference::{ReferenceStore, Split};
use crate::signal::dct::dct;
use crate::signal::{dcn_samples, unify, DcnConfig, VsegRecord};
use crate::synth::{DatasetManifest, ManifestEntry};
use crate::{Error, Result};

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        let mut m = Self::new(classes);
        if truth.len() != pred.len() {
            return Err(Error::Shape("truth and prediction lengths differ".into()));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for l in [truth, pred] {
            if l >= self.classes {
                return Err(Error::Label {
                    label: l,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        if self.total() == 0 {
            0.0
        } else {
            diag as f64 / self.total() as f64
        }
    }

    /// Class 0 is fault-free; every other class counts as faulty.
    pub fn alarm_rates(&self) -> AlarmRates {
        let healthy = self.row_sum(0);
        let false_alarms = healthy - self.get(0, 0);
        let faulty: u64 = (1..self.classes).map(|t| self.row_sum(t)).sum();
        let missed: u64 = (1..self.classes).map(|t| self.get(t, 0)).sum();
        AlarmRates {
            false_alarm: ratio(false_alarms, healthy),
            missed_alarm: ratio(missed, faulty),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for t in 0..self.classes {
            let row: Vec<String> = (0..self.classes).map(|p| self.get(t, p).to_string()).collect();
            s.push_str(&row.join("\t"));
            s.push('\n');
        }
        s
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmRates {
    pub false_alarm: f64,
    pub missed_alarm: f64,
}

impl AlarmRates {
    /// Direct per-sample definition.
    pub fn from_predictions(truth: &[usize], pred: &[usize]) -> Self {
        let (mut healthy, mut fa, mut faulty, mut miss) = (0u64, 0u64, 0u64, 0u64);
        for (&t, &p) in truth.iter().zip(pred) {
            if t == 0 {
                healthy += 1;
                fa += (p != 0) as u64;
            } else {
                faulty += 1;
                miss += (p == 0) as u64;
            }
        }
        Self {
            false_alarm: ratio(fa, healthy),
            missed_alarm: ratio(miss, faulty),
        }
    }
}

/// Samples prepared from manifest entries, with the entries that produced them.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub samples: SampleSet,
    pub entries: Vec<ManifestEntry>,
    /// Entries skipped because their condition has no reference.
    pub missing_reference: usize,
}

/// Per-sample reference seed.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Loads, transforms and pairs each entry with a reference of its condition.
pub fn prepare(
    dir: impl AsRef<Path>,
    entries: &[&ManifestEntry],
    store: &ReferenceStore,
    variant: InputVariant,
    n_f: usize,
    seed: u64,
) -> Result<PreparedSplit> {
    let dir = dir.as_ref();
    let dcn = DcnConfig::new(n_f, 0.01)?;
    if variant.uses_reference() {
        if let Some(sn) = store.n_f() {
            if sn != n_f {
                return Err(Error::Config(format!(
                    "reference store holds n_f = {sn}, model expects {n_f}"
                )));
            }
        }
    }
    let built = crate::par::map_range(entries.len(), |i| -> Result<Option<Sample>> {
        let e = entries[i];
        let rec = VsegRecord::read(dir.join(&e.path))?;
        let x = rec.samples_f64();
        if variant == InputVariant::TimeDomain {
            return Ok(Some(Sample::time_domain(&x, n_f, e.label)));
        }
        let q = dcn_samples(&x, &dcn)?;
        let r = match store.lookup_distinct(e.condition_id, sample_seed(seed, i), &q) {
            Ok(r) => r,
            Err(Error::MissingReference { .. }) => return Ok(None),
            Err(err) => return Err(err),
        };
        Ok(Some(Sample::from_unified(&unify(&q, r)?, variant, e.label)?))
    });
    let mut out = PreparedSplit {
        samples: SampleSet::new(variant.channels(), n_f),
        entries: Vec::new(),
        missing_reference: 0,
    };
    for (e, s) in entries.iter().zip(built) {
        match s? {
            Some(s) => {
                out.samples.push(s)?;
                out.entries.push((*e).clone());
            }
            None => out.missing_reference += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub alarms: AlarmRates,
    pub evaluated: usize,
    pub missing_reference: usize,
    /// Per source tag: (correct, total).
    pub per_source: BTreeMap<String, (usize, usize)>,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed\t{}", self.seed);
        let _ = writeln!(s, "evaluated\t{}", self.evaluated);
        let _ = writeln!(s, "missing_reference\t{}", self.missing_reference);
        let _ = writeln!(s, "accuracy\t{:.4}", self.accuracy);
        let _ = writeln!(s, "false_alarm\t{:.4}", self.alarms.false_alarm);
        let _ = writeln!(s, "missed_alarm\t{:.4}", self.alarms.missed_alarm);
        for (tag, (hit, n)) in &self.per_source {
            let _ = writeln!(s, "accuracy[{tag}]\t{:.4}", ratio(*hit as u64, *n as u64));
        }
        s
    }
}

/// Scores already-prepared samples.
pub fn evaluate_prepared(model: &FcnModel, split: &PreparedSplit, seed: u64) -> Result<EvalReport> {
    let truth = split.samples.labels();
    let pred = if split.samples.is_empty() {
        Vec::new()
    } else {
        split.samples.predict(model, 128)?
    };
    let confusion = ConfusionMatrix::from_pairs(model.config.classes, &truth, &pred)?;
    let mut per_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((e, t), p) in split.entries.iter().zip(&truth).zip(&pred) {
        let c = per_source.entry(e.source_tag.clone()).or_default();
        c.0 += (t == p) as usize;
        c.1 += 1;
    }
    Ok(EvalReport {
        accuracy: confusion.accuracy(),
        alarms: confusion.alarm_rates(),
        confusion,
        evaluated: truth.len(),
        missing_reference: split.missing_reference,
        per_source,
        seed,
    })
}

/// Loads a split from disk and scores it.
pub fn evaluate(
    model: &FcnModel,
    dir: impl AsRef<Path>,
    entries: &[&ManifestEntry],
    store: &ReferenceStore,
    variant: InputVariant,
    seed: u64,
) -> Result<EvalReport> {
    let split = prepare(dir, entries, store, variant, model.config.n_f, seed)?;
    evaluate_prepared(model, &split, seed)
}

/// Share of DCT energy in the first `n_f` coefficients (1 when `n_f >= len`).
pub fn energy_fraction(x: &[f64], n_f: usize) -> Result<f64> {
    let s = dct(x)?;
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::DegenerateSegment);
    }
    if n_f >= s.len() {
        return Ok(1.0);
    }
    Ok((s[..n_f].iter().map(|v| v * v).sum::<f64>() / total).min(1.0))
}

/// Mean energy fraction over segments for each `n_f`.
pub fn energy_fraction_curve(segments: &[Vec<f64>], nfs: &[usize]) -> Result<Vec<(usize, f64)>> {
    if segments.is_empty() {
        return Err(Error::Data("no segments".into()));
    }
    let per = crate::par::map_slice(segments, |x| -> Result<Vec<f64>> {
        let s = dct(x)?;
        let total: f64 = s.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return Err(Error::DegenerateSegment);
        }
        let mut prefix = Vec::with_capacity(s.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for v in &s {
            acc += v * v;
            prefix.push(acc);
        }
        Ok(nfs
            .iter()
            .map(|&n| {
                if n >= s.len() {
                    1.0
                } else {
                    (prefix[n] / total).min(1.0)
                }
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(nfs
        .iter()
        .enumerate()
        .map(|(j, &n)| (n, per.iter().map(|p| p[j]).sum::<f64>() / per.len() as f64))
        .collect())
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub variant: InputVariant,
    pub model: FcnModel,
    pub training: TrainReport,
    pub report: EvalReport,
}

/// Trains `variant` on the manifest's train/val splits and scores its test split.
pub fn ablation_run(
    dir: impl AsRef<Path>,
    manifest: &DatasetManifest,
    store: &ReferenceStore,
    variant: InputVariant,
    model_cfg: &FcnConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<AblationResult> {
    let dir = dir.as_ref();
    let mut cfg = model_cfg.clone();
    cfg.in_channels = variant.channels();
    let n_f = cfg.n_f;
    let load = |s: Split, salt: u64| prepare(dir, &manifest.split(s), store, variant, n_f, seed ^ salt);
    let train = load(Split::Train, 1)?;
    let val = load(Split::Val, 2)?;
    let test = load(Split::Test, 3)?;
    if train.samples.is_empty() {
        return Err(Error::Data("no usable training samples".into()));
    }
    let mut model = FcnModel::new(cfg, seed)?;
    let tc = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let training = pretrain(&mut model, &train.samples, &val.samples, &tc)?;
    let report = evaluate_prepared(&model, &test, seed)?;
    Ok(AblationResult {
        variant,
        model,
        training,
        report,
    })
}

/// TSV rows of (sample id, label, condition, source, features...).
pub fn dump_features(model: &FcnModel, split: &PreparedSplit, path: impl AsRef<Path>) -> Result<usize> {
    let mut s = String::new();
    let idx: Vec<usize> = (0..split.samples.len()).collect();
    let mut row = 0;
    for chunk in idx.chunks(128) {
        let (x, _) = crate::fcn::assemble_batch(&split.samples, chunk)?;
        let f = model.encode(&x)?;
        let w = f.dim(1);
        for (k, &i) in chunk.iter().enumerate() {
            let e = &split.entries[i];
            let _ = write!(s, "{}\t{}\t{}\t{}", e.path, e.label, e.condition_id, e.source_tag);
            for v in &f.data()[k * w..(k + 1) * w] {
                let _ = write!(s, "\t{v:.9e}");
            }
            s.push('\n');
            row += 1;
        }
    }
    fs::write(path, s)?;
    Ok(row)
}
