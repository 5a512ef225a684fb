use std::fs;
use std::path::{Path, PathBuf};

use bearing_core::alignment::{build_alignment, one_hot_mismatches, FaultDescriptionSet, ToyProvider};
use bearing_core::config::RunConfig;
use bearing_core::eval::{ablation_run, dump_features, energy_fraction_curve, evaluate_prepared, prepare, EvalReport};
use bearing_core::fcn::{pretrain, FaultLabel, FcnConfig, FcnModel, InputVariant, Sample, SampleSet};
use bearing_core::nn::ops::softmax;
use bearing_core::reference::{ReferenceStore, Split};
use bearing_core::signal::{dcn_samples, segment, unify, DcnConfig, RawSignal, VsegRecord};
use bearing_core::synth::{build_dataset, holdout_subset, parse_rigs, DatasetManifest};
use bearing_core::templates::{ResponseTemplateSet, Task};
use bearing_core::{sha256_hex, Error, Result};

const DESK_CONFIG: &str = include_str!("../../../configs/desk.conf");
const PARAM_ANCHOR: &str = "0.9747M";

pub fn gen_data(rigs: &Path, out: &Path, segments: usize, seed: u64, n_f: usize) -> Result<()> {
    let text = fs::read_to_string(rigs)
        .map_err(|e| Error::Config(format!("cannot read rig file {}: {e}", rigs.display())))?;
    let rigs = parse_rigs(&text)?;
    let labels: Vec<FaultLabel> = FaultLabel::all().collect();
    let built = build_dataset(&rigs, &labels, segments, seed, &DcnConfig::new(n_f, 0.01)?, out)?;
    let m = &built.manifest;
    println!("conditions\t{}", built.registry.len());
    for (id, info) in built.registry.iter() {
        println!("condition {id}\t{}", info.canonical());
    }
    println!("labels\t{}", labels.len());
    println!(
        "segments\t{} (train {}, val {}, test {})",
        m.entries.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test)
    );
    println!("references\t{}", built.store.total());
    let bytes = fs::read(out.join("manifest.tsv"))?;
    println!("manifest sha256\t{}", sha256_hex(&bytes));
    Ok(())
}

fn load_data(dir: &Path) -> Result<(DatasetManifest, ReferenceStore)> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("data directory {} not found", dir.display()),
        )));
    }
    let manifest = DatasetManifest::load(dir)?;
    let (store, _) = ReferenceStore::load(dir.join("store"))?;
    Ok((manifest, store))
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log.tsv");
    PathBuf::from(s)
}

pub fn train(data: &Path, config: &Path, out: &Path, seed: u64, variant: &str) -> Result<()> {
    let variant: InputVariant = variant.parse()?;
    let run = RunConfig::load(config)?;
    let (manifest, store) = load_data(data)?;
    let mut cfg = run.model.clone();
    cfg.in_channels = variant.channels();
    let n_f = cfg.n_f;
    let train = prepare(data, &manifest.split(Split::Train), &store, variant, n_f, seed ^ 1)?;
    let val = prepare(data, &manifest.split(Split::Val), &store, variant, n_f, seed ^ 2)?;
    if train.missing_reference + val.missing_reference > 0 {
        eprintln!(
            "warning: {} samples skipped for lack of a fault-free reference",
            train.missing_reference + val.missing_reference
        );
    }
    if train.samples.is_empty() {
        return Err(Error::Data("no usable training samples".into()));
    }
    let log = log_path(out);
    if log.exists() {
        fs::remove_file(&log)?;
    }
    let mut tc = run.train.clone();
    tc.seed = seed;
    tc.log_path = Some(log.clone());
    let mut model = FcnModel::new(cfg, seed)?;
    println!(
        "training {variant} model: {} parameters, {} train / {} val samples",
        model.config.param_count(),
        train.samples.len(),
        val.samples.len()
    );
    let report = pretrain(&mut model, &train.samples, &val.samples, &tc)?;
    model.save(out, variant)?;
    println!("epochs run\t{}", report.epochs.len());
    println!("best epoch\t{}", report.best_epoch);
    println!("best val accuracy\t{:.4}", report.best_val_acc);
    println!("log\t{}", log.display());
    println!("checkpoint sha256\t{}", sha256_hex(&fs::read(out)?));
    Ok(())
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub ckpt: PathBuf,
    pub holdout: Vec<String>,
    pub ablation: Option<String>,
    pub dump_features: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    pub seed: u64,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, ckpt_variant) = FcnModel::load(&a.ckpt)?;
    let variant = match &a.ablation {
        Some(v) => v.parse()?,
        None => ckpt_variant,
    };
    let (manifest, store) = load_data(&a.data)?;
    let tags: Vec<&str> = a.holdout.iter().map(|s| s.as_str()).collect();
    let manifest = holdout_subset(&manifest, &tags)?;

    let (model, report) = if a.ablation.is_some() || !tags.is_empty() {
        let run = match &a.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::parse(DESK_CONFIG)?,
        };
        let r = ablation_run(&a.data, &manifest, &store, variant, &model.config, &run.train, a.seed)?;
        println!(
            "retrained {variant} without [{}]: {} epochs, best val accuracy {:.4}",
            tags.join(","),
            r.training.epochs.len(),
            r.training.best_val_acc
        );
        (r.model, r.report)
    } else {
        let test = prepare(&a.data, &manifest.split(Split::Test), &store, variant, model.config.n_f, a.seed ^ 3)?;
        let report = evaluate_prepared(&model, &test, a.seed)?;
        (model, report)
    };
    print_report(&report, variant);
    let confusion = a.confusion.unwrap_or_else(|| a.data.join("confusion.tsv"));
    fs::write(&confusion, report.confusion.to_tsv())?;
    println!("confusion\t{}", confusion.display());
    if let Some(path) = a.dump_features {
        let test = prepare(&a.data, &manifest.split(Split::Test), &store, variant, model.config.n_f, a.seed ^ 3)?;
        let rows = dump_features(&model, &test, &path)?;
        println!("features\t{rows} rows -> {}", path.display());
    }
    Ok(())
}

fn print_report(report: &EvalReport, variant: InputVariant) {
    println!("variant\t{variant}");
    print!("{}", report.to_text());
    if report.missing_reference > 0 {
        eprintln!(
            "warning: {} test samples skipped for lack of a fault-free reference",
            report.missing_reference
        );
    }
}

pub fn diagnose(signal: &Path, condition: usize, store_dir: &Path, ckpt: &Path, task: &str, seed: u64) -> Result<()> {
    let task: Task = task.parse()?;
    let (model, variant) = FcnModel::load(ckpt)?;
    let (store, _) = ReferenceStore::load(store_dir)?;
    let rec = VsegRecord::read(signal)?;
    let raw = RawSignal::new(rec.samples_f64(), rec.sample_rate_hz, condition)?;
    let seg = segment(&raw, 0)?;
    let n_f = model.config.n_f;
    let sample = if variant == InputVariant::TimeDomain {
        Sample::time_domain(&seg.samples, n_f, 0)
    } else {
        let q = dcn_samples(&seg.samples, &DcnConfig::new(n_f, 0.01)?)?;
        let rep = if variant.uses_reference() {
            unify(&q, store.lookup(condition, seed)?)?
        } else {
            unify(&q, &q)?
        };
        Sample::from_unified(&rep, variant, 0)?
    };
    let mut set = SampleSet::new(variant.channels(), n_f);
    set.push(sample)?;
    let (x, _) = bearing_core::fcn::assemble_batch(&set, &[0])?;
    let probs = softmax(&model.classify(&x)?)?;
    let p = probs.data();
    let class = bearing_core::fcn::argmax_rows(&probs)[0];
    let label = FaultLabel::new(class)?;
    let response = ResponseTemplateSet::standard().respond(task, label)?;
    println!("class\t{class}");
    println!("description\t{label}");
    println!("confidence\t{:.4}", p[class]);
    println!("prompt\t{}", response.prompt);
    println!("answer\t{}", response.answer);
    Ok(())
}

pub fn align_init(
    ckpt: &Path,
    descriptions: Option<&Path>,
    tau: usize,
    hidden: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (model, _) = FcnModel::load(ckpt)?;
    let desc = match descriptions {
        Some(p) => FaultDescriptionSet::load(p)?,
        None => FaultDescriptionSet::standard(),
    };
    let provider = ToyProvider::for_descriptions(hidden, &desc, seed)?;
    let layer = build_alignment(&model, &desc, &provider, tau)?;
    let bad = one_hot_mismatches(&layer, &desc, &provider)?;
    layer.save(out)?;
    println!("alignment\ttau {tau}, hidden {hidden}, classes {}", layer.classes());
    if bad.is_empty() {
        println!("one-hot identity: PASS");
        Ok(())
    } else {
        println!("one-hot identity: FAIL (classes {bad:?})");
        Err(Error::Shape(format!("{} classes fail the one-hot round trip", bad.len())))
    }
}

pub fn inspect(data: &Path, sweep: &[usize]) -> Result<()> {
    let (manifest, _) = load_data(data)?;
    let segments = manifest
        .entries
        .iter()
        .map(|e| Ok(VsegRecord::read(data.join(&e.path))?.samples_f64()))
        .collect::<Result<Vec<_>>>()?;
    let mut nfs = sweep.to_vec();
    nfs.sort_unstable();
    nfs.dedup();
    let curve = energy_fraction_curve(&segments, &nfs)?;
    println!("segments\t{}", segments.len());
    println!("n_f\tenergy_fraction\tparameters");
    for (n, frac) in curve {
        println!("{n}\t{frac:.4}\t{}", FcnConfig::for_nf(n).param_count());
    }
    println!(
        "parameters at n_f=24000: {:.4}M (target {PARAM_ANCHOR})",
        FcnConfig::for_nf(24_000).param_count() as f64 / 1e6
    );
    Ok(())
}
