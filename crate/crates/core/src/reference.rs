//! Working-condition registry and the fault-free reference store.
//!
//! A working condition is the tuple (speed, load, sensor, source rig). Each
//! distinct tuple gets a dense index in first-seen order. The store keeps,
//! per condition, the DCN spectra of fault-free training segments; a query
//! is paired with one of them, drawn uniformly with an explicit seed.
//!
//! On disk:
//!
//! ```text
//! <dir>/conditions.tsv          index  rpm  load  sensor  source
//! <dir>/refs/<id>/<k>.vfreq     "VFRQ", u32 LE n_f, n_f f64 LE
//! <dir>/checksums.tsv           id  k  sha256(vfreq bytes)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::FrequencyRep;
use crate::{sha256_hex, Error, Result};

pub const VFRQ_MAGIC: &[u8; 4] = b"VFRQ";

/// Dataset partition a segment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

/// Speed, load, sensor and source of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInfo {
    pub rpm: Option<f64>,
    pub load: String,
    pub sensor: String,
    pub source: String,
}

fn escape_field(s: &str) -> String {
    s.to_lowercase().replace('\\', "\\\\").replace('|', "\\|")
}

impl ConditionInfo {
    pub fn new(rpm: Option<f64>, load: &str, sensor: &str, source: &str) -> Self {
        Self {
            rpm,
            load: load.to_string(),
            sensor: sensor.to_string(),
            source: source.to_string(),
        }
    }

    /// `rpm|load|sensor|source`, lowercase, rpm to three decimals.
    pub fn canonical(&self) -> String {
        let rpm = match self.rpm {
            Some(v) => format!("{v:.3}"),
            None => "unknown".to_string(),
        };
        format!(
            "{}|{}|{}|{}",
            rpm,
            escape_field(&self.load),
            escape_field(&self.sensor),
            escape_field(&self.source)
        )
    }
}

/// Dense, append-only index of working conditions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionRegistry {
    infos: Vec<ConditionInfo>,
    index: HashMap<String, usize>,
}

impl ConditionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing index for a known condition, else appends it.
    pub fn register(&mut self, info: ConditionInfo) -> usize {
        let key = info.canonical();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.infos.len();
        self.infos.push(info);
        self.index.insert(key, id);
        id
    }

    pub fn find(&self, info: &ConditionInfo) -> Option<usize> {
        self.index.get(&info.canonical()).copied()
    }

    pub fn get(&self, id: usize) -> Option<&ConditionInfo> {
        self.infos.get(id)
    }

    pub fn len(&self) -> usize {
        self.infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ConditionInfo)> {
        self.infos.iter().enumerate()
    }
}

/// Fault-free training-split spectra keyed by condition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceStore {
    refs: BTreeMap<usize, Vec<FrequencyRep>>,
}

fn mix(seed: u64, condition: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ (condition as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ReferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a reference; only fault-free (`label == 0`) training segments qualify.
    pub fn insert(
        &mut self,
        condition_id: usize,
        rep: FrequencyRep,
        fault_label: usize,
        split: Split,
    ) -> Result<()> {
        if fault_label != 0 {
            return Err(Error::RejectedReference(format!(
                "label {fault_label} is not fault-free"
            )));
        }
        if split != Split::Train {
            return Err(Error::RejectedReference(format!(
                "segment from the {split} split; references come from training data only"
            )));
        }
        if let Some(n_f) = self.n_f() {
            if rep.n_f() != n_f {
                return Err(Error::Shape(format!(
                    "reference has {} components, store holds {}",
                    rep.n_f(),
                    n_f
                )));
            }
        }
        self.refs.entry(condition_id).or_default().push(rep);
        Ok(())
    }

    /// Component count shared by all stored references.
    pub fn n_f(&self) -> Option<usize> {
        self.refs.values().flatten().next().map(|r| r.n_f())
    }

    pub fn references(&self, condition_id: usize) -> &[FrequencyRep] {
        self.refs.get(&condition_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn conditions(&self) -> impl Iterator<Item = usize> + '_ {
        self.refs.keys().copied()
    }

    pub fn total(&self) -> usize {
        self.refs.values().map(Vec::len).sum()
    }

    fn pick(&self, condition_id: usize, seed: u64) -> Result<(usize, &[FrequencyRep])> {
        let list = self.references(condition_id);
        if list.is_empty() {
            return Err(Error::MissingReference {
                condition: condition_id,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, condition_id));
        Ok((rng.random_range(0..list.len()), list))
    }

    /// Uniformly drawn reference; a pure function of contents, condition and seed.
    pub fn lookup(&self, condition_id: usize, seed: u64) -> Result<&FrequencyRep> {
        let (i, list) = self.pick(condition_id, seed)?;
        Ok(&list[i])
    }

    /// Like [`lookup`](Self::lookup) but never returns a reference bitwise
    /// equal to `query` when another candidate exists.
    pub fn lookup_distinct(
        &self,
        condition_id: usize,
        seed: u64,
        query: &FrequencyRep,
    ) -> Result<&FrequencyRep> {
        let (start, list) = self.pick(condition_id, seed)?;
        for step in 0..list.len() {
            let cand = &list[(start + step) % list.len()];
            if cand != query {
                return Ok(cand);
            }
        }
        Ok(&list[start])
    }

    /// Writes the registry and store under `dir`.
    pub fn save(&self, registry: &ConditionRegistry, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("refs"))?;

        let mut tsv = String::new();
        for (id, info) in registry.iter() {
            for field in [&info.load, &info.sensor, &info.source] {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(Error::Persistence(format!(
                        "condition field {field:?} contains a tab or newline"
                    )));
                }
            }
            let rpm = info.rpm.map_or_else(|| "unknown".to_string(), |v| format!("{v}"));
            tsv.push_str(&format!(
                "{id}\t{rpm}\t{}\t{}\t{}\n",
                info.load, info.sensor, info.source
            ));
        }
        fs::write(dir.join("conditions.tsv"), tsv)?;

        let mut sums = String::new();
        for (&cid, list) in &self.refs {
            let cdir = dir.join("refs").join(cid.to_string());
            fs::create_dir_all(&cdir)?;
            for (k, rep) in list.iter().enumerate() {
                let bytes = encode_vfrq(rep);
                sums.push_str(&format!("{cid}\t{k}\t{}\n", sha256_hex(&bytes)));
                fs::write(cdir.join(format!("{k}.vfreq")), bytes)?;
            }
        }
        fs::write(dir.join("checksums.tsv"), sums)?;
        Ok(())
    }

    /// Restores a store written by [`save`](Self::save).
    pub fn load(dir: impl AsRef<Path>) -> Result<(ReferenceStore, ConditionRegistry)> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| {
                Error::Persistence(format!("cannot read {}: {e}", dir.join(name).display()))
            })
        };

        let mut registry = ConditionRegistry::new();
        for (lineno, line) in read("conditions.tsv")?.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::Persistence(format!(
                    "conditions.tsv line {}: expected 5 columns",
                    lineno + 1
                )));
            }
            let id: usize = cols[0].parse().map_err(|_| {
                Error::Persistence(format!("conditions.tsv line {}: bad index", lineno + 1))
            })?;
            let rpm = match cols[1] {
                "unknown" => None,
                v => Some(v.parse::<f64>().map_err(|_| {
                    Error::Persistence(format!("conditions.tsv line {}: bad rpm", lineno + 1))
                })?),
            };
            let assigned = registry.register(ConditionInfo::new(rpm, cols[2], cols[3], cols[4]));
            if assigned != id || id != lineno {
                return Err(Error::Persistence(format!(
                    "conditions.tsv line {}: index {id} out of order",
                    lineno + 1
                )));
            }
        }

        let mut store = ReferenceStore::new();
        for (lineno, line) in read("checksums.tsv")?.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Persistence(format!("checksums.tsv line {}: malformed", lineno + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let cid: usize = cols[0].parse().map_err(|_| bad())?;
            let k: usize = cols[1].parse().map_err(|_| bad())?;
            if cid >= registry.len() {
                return Err(Error::Persistence(format!(
                    "reference for unregistered condition {cid}"
                )));
            }
            if store.references(cid).len() != k {
                return Err(Error::Persistence(format!(
                    "reference {cid}/{k} listed out of order"
                )));
            }
            let path = dir.join("refs").join(cid.to_string()).join(format!("{k}.vfreq"));
            let bytes = fs::read(&path)
                .map_err(|e| Error::Persistence(format!("cannot read {}: {e}", path.display())))?;
            if sha256_hex(&bytes) != cols[2] {
                return Err(Error::Persistence(format!(
                    "checksum mismatch for {}",
                    path.display()
                )));
            }
            let rep = decode_vfrq(&bytes)?;
            store.insert(cid, rep, 0, Split::Train)?;
        }
        Ok((store, registry))
    }
}

pub fn encode_vfrq(rep: &FrequencyRep) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * rep.n_f());
    out.extend_from_slice(VFRQ_MAGIC);
    out.extend_from_slice(&(rep.n_f() as u32).to_le_bytes());
    for v in &rep.coefficients {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vfrq(bytes: &[u8]) -> Result<FrequencyRep> {
    if bytes.len() < 8 || &bytes[..4] != VFRQ_MAGIC {
        return Err(Error::Format("bad VFRQ header".into()));
    }
    let n_f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if payload.len() != 8 * n_f {
        return Err(Error::Format(format!(
            "VFRQ payload holds {} bytes, header promises {n_f} values",
            payload.len()
        )));
    }
    Ok(FrequencyRep::new(
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    ))
}
