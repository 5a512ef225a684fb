//! Fault classification network (FCN).
//!
//! Each input channel of the unified representation passes through its own
//! wide-kernel convolution stem. The stem outputs are concatenated and fed to
//! a stack of multiscale channel-attention blocks (MSCAB), globally average
//! pooled into a feature vector, and classified by two linear layers.

mod model;
mod train;

pub use model::{argmax_rows, Cam, ConvUnit, FcnModel, ForwardCache, Mscab};
pub use train::{
    assemble_batch, pretrain, EpochRecord, Sample, SampleSet, TrainConfig, TrainReport,
};

use std::fmt;
use std::str::FromStr;

use crate::nn::ops::conv_out_len;
use crate::{Error, Result, NUM_CLASSES};

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnConfig {
    pub n_f: usize,
    /// Input channels: 3 for `[query, reference, residual]`, fewer for ablations.
    pub in_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Output channels of each per-input stem.
    pub stem_channels: usize,
    /// Kernel sizes of the parallel MSCAB branches (odd).
    pub branch_kernels: Vec<usize>,
    /// Output width of each MSCAB block.
    pub block_widths: Vec<usize>,
    pub cam_reduction: usize,
    pub pool_width: usize,
    pub hidden: usize,
    pub classes: usize,
    pub batch_norm: bool,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self::for_nf(24_000)
    }
}

impl FcnConfig {
    /// Full-size defaults. The stem kernel scales with `n_f` (64 at 24 000).
    pub fn for_nf(n_f: usize) -> Self {
        Self {
            n_f,
            in_channels: 3,
            stem_kernel: default_stem_kernel(n_f),
            stem_stride: 8,
            stem_channels: 16,
            branch_kernels: vec![3, 5, 7],
            block_widths: vec![32, 64, 128],
            cam_reduction: 8,
            pool_width: 4,
            hidden: 2048,
            classes: NUM_CLASSES,
            batch_norm: true,
        }
    }

    /// A narrow network for single-machine training runs.
    pub fn compact(n_f: usize) -> Self {
        Self {
            n_f,
            in_channels: 3,
            stem_kernel: 16,
            stem_stride: 4,
            stem_channels: 4,
            branch_kernels: vec![3, 5, 7],
            block_widths: vec![8, 16, 32],
            cam_reduction: 4,
            pool_width: 4,
            hidden: 64,
            classes: NUM_CLASSES,
            batch_norm: true,
        }
    }

    /// Channels entering the first MSCAB block.
    pub fn stem_out_channels(&self) -> usize {
        self.in_channels * self.stem_channels
    }

    /// Width of the pooled feature vector.
    pub fn feature_width(&self) -> usize {
        *self.block_widths.last().unwrap_or(&0)
    }

    /// Sequence length after the stems and after each block.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let mut lens = vec![conv_out_len(self.n_f, self.stem_kernel, self.stem_stride, 0)
            .map_err(|e| Error::Config(e.to_string()))?];
        for _ in &self.block_widths {
            let l = *lens.last().unwrap();
            if l < self.pool_width {
                return Err(Error::Config(format!(
                    "sequence of length {l} too short for pooling width {}",
                    self.pool_width
                )));
            }
            lens.push(l / self.pool_width);
        }
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(1..=3).contains(&self.in_channels) {
            return fail(format!("in_channels must be 1..=3, got {}", self.in_channels));
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 || self.stem_channels == 0 {
            return fail("stem kernel, stride and channels must be positive".into());
        }
        if self.branch_kernels.is_empty() || self.branch_kernels.iter().any(|k| k % 2 == 0) {
            return fail(format!(
                "branch kernels must be a non-empty list of odd sizes, got {:?}",
                self.branch_kernels
            ));
        }
        if self.block_widths.is_empty() || self.block_widths.contains(&0) {
            return fail("block widths must be positive".into());
        }
        if self.hidden == 0 || self.pool_width == 0 || self.cam_reduction == 0 {
            return fail("hidden, pool_width and cam_reduction must be positive".into());
        }
        let narrowest = self.block_widths.iter().min().unwrap() * self.branch_kernels.len();
        if self.cam_reduction > narrowest {
            return fail(format!(
                "cam reduction {} exceeds attention channels {narrowest}",
                self.cam_reduction
            ));
        }
        self.stage_lengths().map(|_| ())
    }

    /// Trainable parameter count, computed from the hyperparameters alone.
    pub fn param_count(&self) -> usize {
        let bn = |c: usize| if self.batch_norm { 2 * c } else { 0 };
        let s = self.stem_channels;
        let mut total = self.in_channels * (s * self.stem_kernel + s + bn(s));
        let mut cin = self.stem_out_channels();
        for &w in &self.block_widths {
            for &k in &self.branch_kernels {
                total += cin * w * k + w + bn(w);
            }
            let cat = w * self.branch_kernels.len();
            let mid = (cat / self.cam_reduction).max(1);
            total += cat * mid + mid + mid * cat + cat;
            total += cat * w + w + bn(w);
            cin = w;
        }
        total + cin * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    /// `key=value` lines for this config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("n_f".into(), self.n_f.to_string()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("stem_kernel".into(), self.stem_kernel.to_string()),
            ("stem_stride".into(), self.stem_stride.to_string()),
            ("stem_channels".into(), self.stem_channels.to_string()),
            ("branch_kernels".into(), list(&self.branch_kernels)),
            ("block_widths".into(), list(&self.block_widths)),
            ("cam_reduction".into(), self.cam_reduction.to_string()),
            ("pool_width".into(), self.pool_width.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("batch_norm".into(), self.batch_norm.to_string()),
        ]
    }

    /// Applies one `key=value` setting; returns `false` for keys this config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        use crate::config::{parse_bool, parse_list, parse_num};
        match key {
            "n_f" => self.n_f = parse_num(key, value)?,
            "in_channels" => self.in_channels = parse_num(key, value)?,
            "stem_kernel" => self.stem_kernel = parse_num(key, value)?,
            "stem_stride" => self.stem_stride = parse_num(key, value)?,
            "stem_channels" => self.stem_channels = parse_num(key, value)?,
            "branch_kernels" => self.branch_kernels = parse_list(key, value)?,
            "block_widths" => self.block_widths = parse_list(key, value)?,
            "cam_reduction" => self.cam_reduction = parse_num(key, value)?,
            "pool_width" => self.pool_width = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "batch_norm" => self.batch_norm = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Stem kernel used by the full-size defaults: `n_f / 375`, at least 8.
pub fn default_stem_kernel(n_f: usize) -> usize {
    ((n_f as f64 / 375.0).round() as usize).max(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Inner,
    Ball,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Minor,
    Moderate,
    Severe,
}

impl Location {
    pub const ALL: [Location; 3] = [Location::Inner, Location::Ball, Location::Outer];

    pub fn name(self) -> &'static str {
        match self {
            Location::Inner => "inner ring",
            Location::Ball => "ball",
            Location::Outer => "outer ring",
        }
    }
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Minor, Severity::Moderate, Severity::Severe];

    pub fn name(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        }
    }
}

/// Class index: 0 fault-free; 1-3 inner, 4-6 ball, 7-9 outer, each minor/moderate/severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaultLabel(u8);

impl FaultLabel {
    pub const NORMAL: FaultLabel = FaultLabel(0);

    pub fn new(label: usize) -> Result<Self> {
        if label >= NUM_CLASSES {
            return Err(Error::Label {
                label,
                classes: NUM_CLASSES,
            });
        }
        Ok(Self(label as u8))
    }

    pub fn from_parts(location: Location, severity: Severity) -> Self {
        let base = match location {
            Location::Inner => 1,
            Location::Ball => 4,
            Location::Outer => 7,
        };
        let off = match severity {
            Severity::Minor => 0,
            Severity::Moderate => 1,
            Severity::Severe => 2,
        };
        Self(base + off)
    }

    pub fn all() -> impl Iterator<Item = FaultLabel> {
        (0..NUM_CLASSES as u8).map(FaultLabel)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_faulty(self) -> bool {
        self.0 != 0
    }

    pub fn location(self) -> Option<Location> {
        match self.0 {
            0 => None,
            1..=3 => Some(Location::Inner),
            4..=6 => Some(Location::Ball),
            _ => Some(Location::Outer),
        }
    }

    pub fn severity(self) -> Option<Severity> {
        match self.0 {
            0 => None,
            v => Some(Severity::ALL[((v - 1) % 3) as usize]),
        }
    }
}

impl fmt::Display for FaultLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.location(), self.severity()) {
            (Some(l), Some(s)) => write!(f, "{} fault of bearing {}", s.name(), l.name()),
            _ => f.write_str("normal bearing without fault"),
        }
    }
}

/// Which channels of the representation the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputVariant {
    /// `[query, reference, residual]`.
    Full,
    /// Query only.
    NoRefNoRes,
    /// `[query, reference]`.
    NoRes,
    /// `[query, residual]`.
    NoRef,
    /// First `n_f` raw time-domain samples of the query, no DCN.
    TimeDomain,
}

impl InputVariant {
    pub const ALL: [InputVariant; 5] = [
        InputVariant::Full,
        InputVariant::NoRefNoRes,
        InputVariant::NoRes,
        InputVariant::NoRef,
        InputVariant::TimeDomain,
    ];

    pub fn channels(self) -> usize {
        match self {
            InputVariant::Full => 3,
            InputVariant::NoRes | InputVariant::NoRef => 2,
            InputVariant::NoRefNoRes | InputVariant::TimeDomain => 1,
        }
    }

    pub fn uses_reference(self) -> bool {
        matches!(
            self,
            InputVariant::Full | InputVariant::NoRes | InputVariant::NoRef
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVariant::Full => "full",
            InputVariant::NoRefNoRes => "no_ref_no_res",
            InputVariant::NoRes => "no_res",
            InputVariant::NoRef => "no_ref",
            InputVariant::TimeDomain => "time_domain",
        }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant '{s}'")))
    }
}
