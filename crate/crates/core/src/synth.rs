//! Synthetic bearing vibration and the dataset builder.
//!
//! A rig produces shaft harmonics scaled by load. A fault adds a train of
//! decaying resonance bursts at its characteristic rate (a multiple of the
//! shaft rate); inner-ring bursts are amplitude-modulated at the shaft rate.
//! Severity scales burst amplitude.
//!
//! Dataset layout:
//!
//! ```text
//! <dir>/manifest.tsv                 path  label  condition_id  source_tag  split
//! <dir>/segments/<tag>/<label>/<k>.vseg
//! <dir>/store/...                    reference store, see `reference`
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fcn::{FaultLabel, Location, Severity};
use crate::reference::{ConditionInfo, ConditionRegistry, ReferenceStore, Split};
use crate::signal::{dcn_samples, segment_all, DcnConfig, RawSignal, VsegRecord};
use crate::{Error, Result, NUM_CLASSES};

/// One simulated test rig, which is also one working condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RigSpec {
    pub shaft_rate_hz: f64,
    pub load_scale: f64,
    pub sensor_gain: f64,
    pub sample_rate_hz: u32,
    pub noise_sigma: f64,
    pub resonance_hz: f64,
    /// Burst decay time constant in seconds.
    pub resonance_decay: f64,
    pub source_tag: String,
    pub outer_multiplier: f64,
    pub inner_multiplier: f64,
    pub ball_multiplier: f64,
}

impl RigSpec {
    pub fn new(tag: &str, shaft_rate_hz: f64, sample_rate_hz: u32, resonance_hz: f64) -> Self {
        Self {
            shaft_rate_hz,
            load_scale: 1.0,
            sensor_gain: 1.0,
            sample_rate_hz,
            noise_sigma: 0.05,
            resonance_hz,
            resonance_decay: 0.0015,
            source_tag: tag.to_string(),
            outer_multiplier: 3.58,
            inner_multiplier: 5.42,
            ball_multiplier: 4.71,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("rig {}: {m}", self.source_tag)));
        if self.source_tag.is_empty() || self.source_tag.contains(char::is_whitespace) {
            return fail("source tag must be a non-empty word".into());
        }
        if !(self.shaft_rate_hz > 0.0) || !self.shaft_rate_hz.is_finite() {
            return fail(format!("shaft rate {} must be positive", self.shaft_rate_hz));
        }
        if !(self.load_scale >= 0.0) || !(self.sensor_gain > 0.0) || !(self.noise_sigma >= 0.0) {
            return fail("load must be >= 0, gain > 0, noise >= 0".into());
        }
        if !(self.resonance_decay > 0.0) || !(self.resonance_hz > 0.0) {
            return fail("resonance frequency and decay must be positive".into());
        }
        if self.sample_rate_hz as f64 <= 2.0 * self.resonance_hz {
            return fail(format!(
                "sample rate {} cannot represent a {} Hz resonance",
                self.sample_rate_hz, self.resonance_hz
            ));
        }
        for m in [self.outer_multiplier, self.inner_multiplier, self.ball_multiplier] {
            if !(m > 0.0) {
                return fail("characteristic multipliers must be positive".into());
            }
        }
        Ok(())
    }

    pub fn condition_info(&self) -> ConditionInfo {
        ConditionInfo::new(
            Some(self.shaft_rate_hz * 60.0),
            &format!("{}", self.load_scale),
            &format!("gain{}@{}hz", self.sensor_gain, self.sample_rate_hz),
            &self.source_tag,
        )
    }

    pub fn multiplier(&self, location: Location) -> f64 {
        match location {
            Location::Inner => self.inner_multiplier,
            Location::Ball => self.ball_multiplier,
            Location::Outer => self.outer_multiplier,
        }
    }

    /// Parses one `key=value ...` line. `tag`, `shaft`, `rate` and `resonance` are required.
    pub fn parse_line(line: &str) -> Result<Self> {
        use crate::config::parse_num;
        let mut kv = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("rig field '{tok}' is not key=value")))?;
            if kv.insert(k, v).is_some() {
                return Err(Error::Config(format!("rig field '{k}' repeated")));
            }
        }
        let need = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("rig line lacks '{k}': {line}")))
        };
        let mut rig = RigSpec::new(
            need("tag")?,
            parse_num("shaft", need("shaft")?)?,
            parse_num("rate", need("rate")?)?,
            parse_num("resonance", need("resonance")?)?,
        );
        for (&k, &v) in &kv {
            match k {
                "tag" | "shaft" | "rate" | "resonance" => {}
                "load" => rig.load_scale = parse_num(k, v)?,
                "gain" => rig.sensor_gain = parse_num(k, v)?,
                "noise" => rig.noise_sigma = parse_num(k, v)?,
                "decay" => rig.resonance_decay = parse_num(k, v)?,
                "outer" => rig.outer_multiplier = parse_num(k, v)?,
                "inner" => rig.inner_multiplier = parse_num(k, v)?,
                "ball" => rig.ball_multiplier = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown rig field '{k}'"))),
            }
        }
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_line(&self) -> String {
        format!(
            "tag={} shaft={} rate={} resonance={} load={} gain={} noise={} decay={} outer={} inner={} ball={}",
            self.source_tag,
            self.shaft_rate_hz,
            self.sample_rate_hz,
            self.resonance_hz,
            self.load_scale,
            self.sensor_gain,
            self.noise_sigma,
            self.resonance_decay,
            self.outer_multiplier,
            self.inner_multiplier,
            self.ball_multiplier
        )
    }
}

/// One rig per non-empty, non-comment line.
pub fn parse_rigs(text: &str) -> Result<Vec<RigSpec>> {
    let rigs: Vec<RigSpec> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(RigSpec::parse_line)
        .collect::<Result<_>>()?;
    if rigs.is_empty() {
        return Err(Error::Config("rig file lists no rigs".into()));
    }
    let tags: BTreeSet<&str> = rigs.iter().map(|r| r.source_tag.as_str()).collect();
    if tags.len() != rigs.len() {
        return Err(Error::Config("rig tags must be unique".into()));
    }
    Ok(rigs)
}

pub const DEFAULT_RIGS: &str = include_str!("../assets/rigs.txt");

pub fn default_rigs() -> Vec<RigSpec> {
    parse_rigs(DEFAULT_RIGS).expect("bundled rig file parses")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub label: FaultLabel,
    /// Bursts per shaft revolution; unused for the fault-free class.
    pub characteristic_multiplier: f64,
    pub severity_amp: f64,
}

impl FaultSpec {
    pub fn severity_amp(s: Severity) -> f64 {
        match s {
            Severity::Minor => 0.5,
            Severity::Moderate => 1.0,
            Severity::Severe => 2.0,
        }
    }

    pub fn for_rig(rig: &RigSpec, label: FaultLabel) -> Self {
        match (label.location(), label.severity()) {
            (Some(l), Some(s)) => Self {
                label,
                characteristic_multiplier: rig.multiplier(l),
                severity_amp: Self::severity_amp(s),
            },
            _ => Self {
                label,
                characteristic_multiplier: 0.0,
                severity_amp: 0.0,
            },
        }
    }
}

/// A deterministic recording of `duration_s` seconds.
pub fn synthesize(rig: &RigSpec, fault: &FaultSpec, duration_s: usize, seed: u64) -> Result<RawSignal> {
    rig.validate()?;
    if duration_s == 0 {
        return Err(Error::Config("duration must be at least one second".into()));
    }
    if fault.label.is_faulty() && !(fault.characteristic_multiplier > 0.0 && fault.severity_amp >= 0.0) {
        return Err(Error::Config("fault needs a positive rate and non-negative amplitude".into()));
    }
    let fs = rig.sample_rate_hz as f64;
    let n = duration_s * rig.sample_rate_hz as usize;
    let fr = rig.shaft_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase1 = rng.random_range(0.0..2.0 * PI);
    let phase2 = rng.random_range(0.0..2.0 * PI);

    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            rig.load_scale
                * (0.5 * (2.0 * PI * fr * t + phase1).sin()
                    + 0.25 * (2.0 * PI * 2.0 * fr * t + phase2).sin())
        })
        .collect();

    if fault.label.is_faulty() {
        let period = 1.0 / (fault.characteristic_multiplier * fr);
        let inner = fault.label.location() == Some(Location::Inner);
        let span = (10.0 * rig.resonance_decay * fs).ceil() as usize;
        let mut t0 = rng.random_range(0.0..period);
        let end = n as f64 / fs;
        while t0 < end {
            let mut amp = fault.severity_amp * rng.random_range(0.9..1.1);
            if inner {
                amp *= 0.6 + 0.4 * (2.0 * PI * fr * t0).cos();
            }
            let first = (t0 * fs).ceil() as usize;
            for i in first..(first + span).min(n) {
                let dt = i as f64 / fs - t0;
                x[i] += amp * (-dt / rig.resonance_decay).exp() * (2.0 * PI * rig.resonance_hz * dt).sin();
            }
            t0 += period * (1.0 + rng.random_range(-0.005..0.005));
        }
    }

    let noise = Normal::new(0.0, rig.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    for v in &mut x {
        *v = rig.sensor_gain * *v + noise.sample(&mut rng);
    }
    RawSignal::new(x, rig.sample_rate_hz, 0)
}

/// Seed of one (rig, label) recording.
pub fn cell_seed(seed: u64, rig: usize, label: usize) -> u64 {
    let mut z = seed
        .wrapping_add((rig as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((label as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub label: usize,
    pub condition_id: usize,
    pub source_tag: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: &str = "path\tlabel\tcondition_id\tsource_tag\tsplit";

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.path, e.label, e.condition_id, e.source_tag, e.split
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Data("manifest header missing or wrong".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let c: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("manifest line {}: malformed", n + 2));
            if c.len() != 5 {
                return Err(bad());
            }
            let label: usize = c[1].parse().map_err(|_| bad())?;
            if label >= NUM_CLASSES {
                return Err(Error::Label {
                    label,
                    classes: NUM_CLASSES,
                });
            }
            entries.push(ManifestEntry {
                path: c[0].to_string(),
                label,
                condition_id: c[2].parse().map_err(|_| bad())?,
                source_tag: c[3].to_string(),
                split: c[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join("manifest.tsv"), self.to_tsv())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(dir.as_ref().join("manifest.tsv"))?)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn source_tags(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.source_tag.as_str()).collect()
    }
}

/// Per-stratum split sizes: `round(0.7 n)` train, `round(0.2 n)` val, the rest test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = ((0.7 * n as f64).round() as usize).min(n);
    let val = ((0.2 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn assign_splits(n: usize, rng: &mut ChaCha8Rng) -> Vec<Split> {
    let (tr, va, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < tr {
            Split::Train
        } else if rank < tr + va {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Everything `build_dataset` produces.
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub manifest: DatasetManifest,
    pub registry: ConditionRegistry,
    pub store: ReferenceStore,
}

/// Synthesizes `segments_per_cell` seconds for every (rig, label), writes
/// segments, manifest and reference store under `out_dir`.
pub fn build_dataset(
    rigs: &[RigSpec],
    labels: &[FaultLabel],
    segments_per_cell: usize,
    seed: u64,
    dcn: &DcnConfig,
    out_dir: impl AsRef<Path>,
) -> Result<BuiltDataset> {
    let out = out_dir.as_ref();
    if rigs.is_empty() || labels.is_empty() || segments_per_cell == 0 {
        return Err(Error::Config("need at least one rig, one label and one segment".into()));
    }
    for r in rigs {
        r.validate()?;
    }
    let mut registry = ConditionRegistry::new();
    let cids: Vec<usize> = rigs.iter().map(|r| registry.register(r.condition_info())).collect();

    let cells: Vec<(usize, FaultLabel)> = rigs
        .iter()
        .enumerate()
        .flat_map(|(ri, _)| labels.iter().map(move |&l| (ri, l)))
        .collect();
    let recordings = crate::par::map_slice(&cells, |&(ri, l)| {
        let rig = &rigs[ri];
        synthesize(rig, &FaultSpec::for_rig(rig, l), segments_per_cell, cell_seed(seed, ri, l.index()))
    });

    fs::create_dir_all(out)?;
    let mut manifest = DatasetManifest::default();
    let mut store = ReferenceStore::new();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
    for (&(ri, label), rec) in cells.iter().zip(recordings) {
        let mut raw = rec?;
        raw.condition_id = cids[ri];
        let segments = segment_all(&raw)?;
        let splits = assign_splits(segments.len(), &mut split_rng);
        let tag = &rigs[ri].source_tag;
        let rel_dir = format!("segments/{tag}/{}", label.index());
        fs::create_dir_all(out.join(&rel_dir))?;
        for (seg, split) in segments.iter().zip(splits) {
            let rel = format!("{rel_dir}/{:04}.vseg", seg.segment_index);
            VsegRecord::from_f64(seg.sample_rate_hz, &seg.samples).write(out.join(&rel))?;
            if label.index() == 0 && split == Split::Train {
                // references are built from the stored f32 samples so that
                // reloading a segment reproduces its spectrum exactly
                let stored = VsegRecord::from_f64(seg.sample_rate_hz, &seg.samples).samples_f64();
                store.insert(cids[ri], dcn_samples(&stored, dcn)?, 0, split)?;
            }
            manifest.entries.push(ManifestEntry {
                path: rel,
                label: label.index(),
                condition_id: cids[ri],
                source_tag: tag.clone(),
                split,
            });
        }
    }
    manifest.save(out)?;
    store.save(&registry, out.join("store"))?;
    Ok(BuiltDataset {
        manifest,
        registry,
        store,
    })
}

/// Segments a VSEG recording and writes its one-second pieces next to the
/// dataset, registering its condition. Imported entries land in `split`.
pub fn import_recording(
    path: impl AsRef<Path>,
    info: ConditionInfo,
    label: usize,
    split: Split,
    registry: &mut ConditionRegistry,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>> {
    let label = FaultLabel::new(label)?;
    let rec = VsegRecord::read(path.as_ref())?;
    let cid = registry.register(info.clone());
    let raw = RawSignal::new(rec.samples_f64(), rec.sample_rate_hz, cid)?;
    let segments = segment_all(&raw)?;
    let stem = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    let rel_dir = format!("segments/imported/{stem}");
    fs::create_dir_all(out_dir.as_ref().join(&rel_dir))?;
    let mut entries = Vec::with_capacity(segments.len());
    for seg in &segments {
        let rel = format!("{rel_dir}/{:04}.vseg", seg.segment_index);
        VsegRecord::from_f64(seg.sample_rate_hz, &seg.samples).write(out_dir.as_ref().join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: label.index(),
            condition_id: cid,
            source_tag: info.source.clone(),
            split,
        });
    }
    Ok(entries)
}

/// Leave-source-out view: entries of `excluded` sources are removed from
/// training and validation and become the whole test set.
pub fn holdout_subset(manifest: &DatasetManifest, excluded: &[&str]) -> Result<DatasetManifest> {
    let tags = manifest.source_tags();
    if let Some(t) = excluded.iter().find(|t| !tags.contains(**t)) {
        return Err(Error::Config(format!("unknown source tag '{t}'")));
    }
    if excluded.is_empty() {
        return Ok(manifest.clone());
    }
    let entries = manifest
        .entries
        .iter()
        .filter_map(|e| {
            if excluded.contains(&e.source_tag.as_str()) {
                Some(ManifestEntry {
                    split: Split::Test,
                    ..e.clone()
                })
            } else if e.split == Split::Test {
                None
            } else {
                Some(e.clone())
            }
        })
        .collect();
    Ok(DatasetManifest { entries })
}

/// Energy of the DCT spectrum in a comb of `harmonics` teeth at multiples of
/// `hz` (each tooth +-`width` bins), relative to the total.
pub fn comb_energy(spectrum: &[f64], hz: f64, harmonics: usize, width: usize) -> f64 {
    let total: f64 = spectrum.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut seen = BTreeSet::new();
    for h in 1..=harmonics {
        let c = (2.0 * hz * h as f64).round() as usize;
        for b in c.saturating_sub(width)..=c + width {
            if b < spectrum.len() {
                seen.insert(b);
            }
        }
    }
    seen.iter().map(|&b| spectrum[b] * spectrum[b]).sum::<f64>() / total
}

/// Single-statistic location oracle: the candidate characteristic rate whose
/// comb in the envelope spectrum of a faulty recording carries the most energy.
pub fn oracle_location(samples: &[f64], sample_rate_hz: u32, rig: &RigSpec) -> Location {
    let env = envelope_spectrum(samples);
    let scale = samples.len() as f64 / sample_rate_hz as f64;
    let score = |l: Location| {
        comb_energy(&env, rig.multiplier(l) * rig.shaft_rate_hz * scale, 5, 1)
    };
    Location::ALL
        .into_iter()
        .max_by(|a, b| score(*a).total_cmp(&score(*b)))
        .unwrap()
}

/// Spectrum of the squared signal, used as an envelope proxy.
pub fn envelope_spectrum(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    let sq: Vec<f64> = x.iter().map(|v| v * v - mean).collect();
    crate::signal::dct::dct(&sq).unwrap_or_default()
}
