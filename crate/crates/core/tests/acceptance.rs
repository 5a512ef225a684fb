//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bearing_core::alignment::{build_alignment, fit_tokens, EmbeddingProvider, FaultDescriptionSet, ToyProvider};
use bearing_core::config::RunConfig;
use bearing_core::eval::{ablation_run, energy_fraction_curve, evaluate_prepared, prepare};
use bearing_core::fcn::{pretrain, FaultLabel, FcnConfig, FcnModel, InputVariant, TrainConfig};
use bearing_core::nn::{checkpoint, Tensor};
use bearing_core::reference::{decode_vfrq, encode_vfrq, ReferenceStore, Split};
use bearing_core::signal::dct::{dct, dct_direct, l2_norm};
use bearing_core::signal::{dcn, segment, DcnConfig, FrequencyRep, RawSignal, VsegRecord};
use bearing_core::synth::{build_dataset, default_rigs, holdout_subset, BuiltDataset};
use bearing_core::{sha256_hex, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DESK_CONFIG: &str = include_str!("../../../configs/desk.conf");

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    check(t <= limit, format!("{what} took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm_invariant() -> Outcome {
    let start = Instant::now();
    let cfg = DcnConfig::new(24_000, 0.01).map_err(|e| e.to_string())?;
    let target = 0.01 * (24_000f64).sqrt();
    let rates = [12_000u32, 25_600, 48_000, 100_000];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let rate = rates[i % rates.len()];
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let x: Vec<f64> = gaussian(rate as usize, &mut rng).into_iter().map(|v| v * scale).collect();
        let seg = segment(&RawSignal::new(x, rate, 0).map_err(|e| e.to_string())?, 0).map_err(|e| e.to_string())?;
        let rep = dcn(&seg, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((rep.norm() - target).abs() / target);
    }
    check(worst < 1e-9, format!("relative norm error {worst:e}"))?;
    within(start, Duration::from_secs(10), "1000 segments")?;
    Ok(format!("worst relative error {worst:.1e} in {:.1}s", start.elapsed().as_secs_f64()))
}

fn cross_rate_alignment() -> Outcome {
    let start = Instant::now();
    let cfg = DcnConfig::new(24_000, 0.01).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for f in [97.0f64, 1000.0, 3333.0] {
        let expected = (2.0 * f).round() as usize;
        for rate in [12_000u32, 48_000, 100_000] {
            let x: Vec<f64> = (0..rate as usize)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64).sin())
                .collect();
            let seg = segment(&RawSignal::new(x, rate, 0).map_err(|e| e.to_string())?, 0).map_err(|e| e.to_string())?;
            let rep = dcn(&seg, &cfg).map_err(|e| e.to_string())?;
            let peak = rep
                .coefficients
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0;
            check(
                peak.abs_diff(expected) <= 1,
                format!("{f} Hz at {rate} Hz peaks in bin {peak}, expected {expected}"),
            )?;
            out.push(peak);
        }
    }
    within(start, Duration::from_secs(30), "tone alignment")?;
    Ok(format!("peaks {out:?}"))
}

fn dct_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lengths: Vec<usize> = (0..49).map(|_| 10f64.powf(rng.random_range(0.0..4.6)) as usize).collect();
    lengths.push(100_000);
    let mut worst: f64 = 0.0;
    for &n in &lengths {
        let x = gaussian(n.max(1), &mut rng);
        let fast = dct(&x).map_err(|e| e.to_string())?;
        let slow = dct_direct(&x).map_err(|e| e.to_string())?;
        let diff: Vec<f64> = fast.iter().zip(&slow).map(|(a, b)| a - b).collect();
        worst = worst.max(l2_norm(&diff) / l2_norm(&slow));
    }
    check(worst < 1e-8, format!("fast vs direct relative error {worst:e}"))?;
    let mut parseval: f64 = 0.0;
    for n in (1..=4096).step_by(45).chain([4096]) {
        let x = gaussian(n, &mut rng);
        let e_x: f64 = x.iter().map(|v| v * v).sum();
        let e_s: f64 = dct(&x).map_err(|e| e.to_string())?.iter().map(|v| v * v).sum();
        parseval = parseval.max((e_x - e_s).abs() / e_x);
    }
    check(parseval < 1e-10, format!("Parseval relative error {parseval:e}"))?;
    Ok(format!(
        "50 lengths up to {}: {worst:.1e}; Parseval {parseval:.1e}",
        lengths.iter().max().unwrap()
    ))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let layers = common::layer_checks();
    let (name, worst) = layers.iter().copied().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    for (n, e) in &layers {
        check(*e < 1e-4, format!("{n}: relative error {e:e}"))?;
    }
    let e2e = common::tiny_fcn_check();
    check(e2e < 1e-3, format!("tiny network: relative error {e2e:e}"))?;
    within(start, Duration::from_secs(120), "gradient checks")?;
    Ok(format!(
        "{} layers, worst {worst:.1e} ({name}); network {e2e:.1e}",
        layers.len()
    ))
}

struct DefaultData {
    dir: tempfile::TempDir,
    built: BuiltDataset,
}

fn default_data() -> Result<DefaultData, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let labels: Vec<FaultLabel> = FaultLabel::all().collect();
    let built = build_dataset(&default_rigs(), &labels, 60, 7, &DcnConfig::new(6000, 0.01).unwrap(), dir.path())
        .map_err(|e| e.to_string())?;
    Ok(DefaultData { dir, built })
}

fn desk() -> RunConfig {
    RunConfig::parse(DESK_CONFIG).unwrap()
}

fn end_to_end(data: &DefaultData) -> Outcome {
    let start = Instant::now();
    let run = desk();
    let variant = InputVariant::Full;
    let dir = data.dir.path();
    let m = &data.built.manifest;
    let load = |s: Split, salt: u64| {
        prepare(dir, &m.split(s), &data.built.store, variant, run.model.n_f, salt).map_err(|e| e.to_string())
    };
    let (train, val, test) = (load(Split::Train, 1)?, load(Split::Val, 2)?, load(Split::Test, 3)?);
    let tc = TrainConfig {
        batch_size: 128,
        seed: 1,
        ..run.train.clone()
    };
    let mut model = FcnModel::new(run.model.clone(), 1).map_err(|e| e.to_string())?;
    let rep = pretrain(&mut model, &train.samples, &val.samples, &tc).map_err(|e| e.to_string())?;
    let r = evaluate_prepared(&model, &test, 1).map_err(|e| e.to_string())?;
    let summary = format!(
        "test accuracy {:.4}, false alarm {:.4}, missed alarm {:.4}, {} epochs, {:.0}s",
        r.accuracy,
        r.alarms.false_alarm,
        r.alarms.missed_alarm,
        rep.epochs.len(),
        start.elapsed().as_secs_f64()
    );
    check(rep.epochs.len() <= 50, format!("{} epochs", rep.epochs.len()))?;
    check(r.accuracy >= 0.95, summary.clone())?;
    check(r.alarms.false_alarm <= 0.02 && r.alarms.missed_alarm <= 0.02, summary.clone())?;
    within(start, Duration::from_secs(15 * 60), "training")?;
    Ok(summary)
}

fn ablation_ordering(data: &DefaultData) -> Outcome {
    let run = desk();
    let holdout = holdout_subset(&data.built.manifest, &["rigB"]).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=3u64 {
        let mut acc = BTreeMap::new();
        for v in [InputVariant::Full, InputVariant::NoRefNoRes] {
            let r = ablation_run(data.dir.path(), &holdout, &data.built.store, v, &run.model, &run.train, seed)
                .map_err(|e| e.to_string())?;
            acc.insert(v.name(), r.report.accuracy);
        }
        let (full, bare) = (acc["full"], acc["no_ref_no_res"]);
        wins += (full >= bare) as usize;
        rows.push(format!("seed {seed}: {full:.4} vs {bare:.4}"));
    }
    let summary = format!("rigB held out, full vs no_ref_no_res: {}", rows.join("; "));
    check(wins >= 2, summary.clone())?;
    Ok(summary)
}

fn alignment_identity() -> Outcome {
    let desc = FaultDescriptionSet::standard();
    let provider = ToyProvider::for_descriptions(32, &desc, 5).map_err(|e| e.to_string())?;
    let model = FcnModel::new(FcnConfig::compact(6000), 2).map_err(|e| e.to_string())?;
    let tau = 8;
    let layer = build_alignment(&model, &desc, &provider, tau).map_err(|e| e.to_string())?;
    let g = layer.classes();
    check(g == 10, format!("{g} classes"))?;
    for k in 0..g {
        let mut p = vec![0.0; g];
        p[k] = 1.0;
        let hv = layer.align_from_logits(&Tensor::new(&[1, g], p).unwrap()).map_err(|e| e.to_string())?;
        let tokens = fit_tokens(&provider.tokenize(&desc.texts()[k]), tau, provider.pad_id());
        let expected = provider.embed(&tokens);
        check(hv.shape() == [1, tau, 32], format!("shape {:?}", hv.shape()))?;
        let exact = hv.data().iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits());
        check(exact, format!("class {k} embedding differs"))?;
    }
    let nine = FaultDescriptionSet::new(desc.texts()[..9].to_vec()).unwrap();
    match build_alignment(&model, &nine, &provider, tau) {
        Err(Error::Config(_)) => {}
        other => return Err(format!("9 descriptions for 10 classes gave {other:?}")),
    }
    Ok(format!("{g} classes bit-exact at tau {tau}, class-count mismatch rejected"))
}

fn energy_and_params() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let segments: Vec<Vec<f64>> = [12_000usize, 25_600, 48_000]
        .iter()
        .flat_map(|&s| (0..4).map(|_| gaussian(s, &mut rng)).collect::<Vec<_>>())
        .chain(std::iter::once(
            (0..48_000).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48_000.0).sin()).collect(),
        ))
        .collect();
    let nfs: Vec<usize> = (1..=50).map(|k| k * 1000).collect();
    for s in &segments {
        let curve = energy_fraction_curve(std::slice::from_ref(s), &nfs).map_err(|e| e.to_string())?;
        check(curve.windows(2).all(|w| w[0].1 <= w[1].1), "curve decreases")?;
        for (n, f) in &curve {
            if *n >= s.len() {
                check(*f == 1.0, format!("fraction {f} at n_f {n} >= {}", s.len()))?;
            }
        }
    }
    let sweep = [6000, 12_000, 24_000, 48_000];
    let counts: Vec<usize> = sweep.iter().map(|&n| FcnConfig::for_nf(n).param_count()).collect();
    check(counts.windows(2).all(|w| w[0] <= w[1]), format!("parameter counts {counts:?}"))?;
    let at = counts[2] as f64 / 1e6;
    check((0.5..=1.5).contains(&at), format!("{at:.4}M parameters at n_f 24000"))?;
    Ok(format!("energy curves monotone; parameters {counts:?}, {at:.4}M at 24000"))
}

fn tree_digests(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), sha256_hex(&fs::read(&p).unwrap()));
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let rigs = &default_rigs()[..2];
    let labels: Vec<FaultLabel> = FaultLabel::all().collect();
    let dcn_cfg = DcnConfig::new(1024, 0.01).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let built = build_dataset(rigs, &labels, 3, 11, &dcn_cfg, a.path()).map_err(|e| e.to_string())?;
    build_dataset(rigs, &labels, 3, 11, &dcn_cfg, b.path()).map_err(|e| e.to_string())?;
    let (da, db) = (tree_digests(a.path()), tree_digests(b.path()));
    check(da == db, "rebuilt dataset differs")?;

    let digest = || -> Result<String, String> {
        let m = &built.manifest;
        let v = InputVariant::Full;
        let tr = prepare(a.path(), &m.split(Split::Train), &built.store, v, 1024, 1).map_err(|e| e.to_string())?;
        let va = prepare(a.path(), &m.split(Split::Val), &built.store, v, 1024, 2).map_err(|e| e.to_string())?;
        let mut model = FcnModel::new(FcnConfig::compact(1024), 4).map_err(|e| e.to_string())?;
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 4,
            ..TrainConfig::default()
        };
        pretrain(&mut model, &tr.samples, &va.samples, &tc).map_err(|e| e.to_string())?;
        let bytes = checkpoint::encode(&model.to_tensors(v).unwrap()).map_err(|e| e.to_string())?;
        Ok(sha256_hex(&bytes))
    };
    let (d1, d2) = (digest()?, digest()?);
    check(d1 == d2, "same-seed checkpoints differ")?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rec = VsegRecord::from_f64(48_000, &gaussian(48_000, &mut rng));
    let bytes = rec.encode();
    check(VsegRecord::decode(&bytes).map_err(|e| e.to_string())?.encode() == bytes, "VSEG round trip")?;
    let rep = FrequencyRep::new(gaussian(6000, &mut rng));
    let vb = encode_vfrq(&rep);
    let back = decode_vfrq(&vb).map_err(|e| e.to_string())?;
    check(back == rep && encode_vfrq(&back) == vb, "VFRQ round trip")?;
    let model = FcnModel::new(FcnConfig::compact(6000), 3).unwrap();
    let t = model.to_tensors(InputVariant::Full).unwrap();
    let cb = checkpoint::encode(&t).map_err(|e| e.to_string())?;
    let decoded = checkpoint::decode(&cb).map_err(|e| e.to_string())?;
    check(checkpoint::encode(&decoded).unwrap() == cb, "checkpoint round trip")?;
    let (restored, _) = FcnModel::from_tensors(&decoded).map_err(|e| e.to_string())?;
    check(restored == model, "restored model differs")?;
    Ok(format!("{} dataset files identical; checkpoint {}", da.len(), &d1[..16]))
}

fn reference_discipline() -> Outcome {
    let mut store = ReferenceStore::new();
    let rep = FrequencyRep::new(vec![1.0; 16]);
    match store.insert(0, rep.clone(), 3, Split::Train) {
        Err(Error::RejectedReference(_)) => {}
        other => return Err(format!("faulty reference accepted: {other:?}")),
    }
    for split in [Split::Val, Split::Test] {
        match store.insert(0, rep.clone(), 0, split) {
            Err(Error::RejectedReference(_)) => {}
            other => return Err(format!("{split} reference accepted: {other:?}")),
        }
    }
    match store.lookup(0, 0) {
        Err(Error::MissingReference { condition: 0 }) => {}
        other => return Err(format!("empty lookup gave {other:?}")),
    }
    store.insert(0, rep.clone(), 0, Split::Train).map_err(|e| e.to_string())?;
    check(store.lookup(0, 5).map_err(|e| e.to_string())? == &rep, "stored reference not returned")?;
    match store.lookup(1, 0) {
        Err(Error::MissingReference { condition: 1 }) => {}
        other => return Err(format!("unknown condition gave {other:?}")),
    }
    Ok("faulty/val/test inserts rejected, missing lookups error".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {n:>2} {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {n:>2} {name}: {msg} [{secs:.1}s]");
            }
        }
    };
    report(1, "norm invariant", &mut norm_invariant);
    report(2, "cross-rate alignment", &mut cross_rate_alignment);
    report(3, "DCT oracle equivalence", &mut dct_oracle);
    report(4, "gradient checks", &mut gradient_checks);
    let data = default_data();
    report(5, "end-to-end learning", &mut || end_to_end(data.as_ref().map_err(|e| e.clone())?));
    report(6, "ablation ordering", &mut || ablation_ordering(data.as_ref().map_err(|e| e.clone())?));
    report(7, "alignment identity", &mut alignment_identity);
    report(8, "energy fraction and model size", &mut energy_and_params);
    report(9, "determinism and persistence", &mut determinism);
    report(10, "reference discipline", &mut reference_discipline);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
