//! Fixed-duration segmentation and discrete cosine normalization (DCN).
//!
//! A segment always spans one second, so its length equals the sensor's
//! sampling rate and DCT bin `k` sits at `k / 2` Hz regardless of the rate.
//! DCN keeps the first `n_f` coefficients (zero-padding shorter spectra) and
//! rescales the result to norm `beta * sqrt(n_f)`, which makes recordings from
//! different sensors directly comparable bin by bin.

pub mod dct;
pub mod vseg;

pub use dct::{dct, dct_direct, l2_norm};
pub use vseg::VsegRecord;

use crate::{Error, Result};

/// A recording at a known sampling rate under one working condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub condition_id: usize,
}

impl RawSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, condition_id: usize) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be at least 1 Hz".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            condition_id,
        })
    }

    /// Number of whole one-second segments in the recording.
    pub fn segment_count(&self) -> usize {
        self.samples.len() / self.sample_rate_hz as usize
    }
}

/// Exactly one second of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub segment_index: usize,
    pub condition_id: usize,
}

impl SignalSegment {
    /// Wraps one second of samples; the length must equal the rate.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, condition_id: usize) -> Result<Self> {
        if sample_rate_hz == 0 || samples.len() != sample_rate_hz as usize {
            return Err(Error::Shape(format!(
                "segment of {} samples does not span one second at {} Hz",
                samples.len(),
                sample_rate_hz
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            segment_index: 0,
            condition_id,
        })
    }
}

/// Target component count and amplitude scale for DCN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcnConfig {
    pub n_f: usize,
    pub beta: f64,
}

impl Default for DcnConfig {
    fn default() -> Self {
        Self {
            n_f: 24_000,
            beta: 0.01,
        }
    }
}

impl DcnConfig {
    pub fn new(n_f: usize, beta: f64) -> Result<Self> {
        if n_f == 0 {
            return Err(Error::Config("n_f must be at least 1".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { n_f, beta })
    }

    /// Norm every DCN output carries.
    pub fn target_norm(&self) -> f64 {
        self.beta * (self.n_f as f64).sqrt()
    }
}

/// Normalized signed DCT amplitudes of length `n_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRep {
    pub coefficients: Vec<f64>,
}

impl FrequencyRep {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn n_f(&self) -> usize {
        self.coefficients.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.coefficients)
    }
}

/// `[query; reference; query - reference]`, stored row-major as `3 x n_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedRepresentation {
    n_f: usize,
    data: Vec<f64>,
}

impl UnifiedRepresentation {
    pub const CHANNELS: usize = 3;

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_f..(c + 1) * self.n_f]
    }

    pub fn query(&self) -> &[f64] {
        self.channel(0)
    }

    pub fn reference(&self) -> &[f64] {
        self.channel(1)
    }

    pub fn residual(&self) -> &[f64] {
        self.channel(2)
    }

    /// Flat `3 * n_f` buffer, channel-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// The `m`-th one-second segment, `samples[m*s .. (m+1)*s]`.
pub fn segment(raw: &RawSignal, m: usize) -> Result<SignalSegment> {
    let s = raw.sample_rate_hz as usize;
    let end = (m + 1)
        .checked_mul(s)
        .ok_or_else(|| Error::Config("segment index overflow".into()))?;
    if end > raw.samples.len() {
        return Err(Error::SegmentBounds {
            index: m,
            needed: end,
            available: raw.samples.len(),
        });
    }
    Ok(SignalSegment {
        samples: raw.samples[m * s..end].to_vec(),
        sample_rate_hz: raw.sample_rate_hz,
        segment_index: m,
        condition_id: raw.condition_id,
    })
}

/// All consecutive non-overlapping segments; a trailing partial second is dropped.
pub fn segment_all(raw: &RawSignal) -> Result<Vec<SignalSegment>> {
    let count = raw.segment_count();
    if count == 0 {
        return Err(Error::TooShort {
            len: raw.samples.len(),
            sample_rate: raw.sample_rate_hz,
        });
    }
    (0..count).map(|m| segment(raw, m)).collect()
}

/// Scales `x` to norm `beta * sqrt(len(x))`.
pub fn normalize(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    let norm = l2_norm(x);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateSegment);
    }
    let factor = beta * (x.len() as f64).sqrt() / norm;
    Ok(x.iter().map(|v| v * factor).collect())
}

/// Discrete cosine normalization of one-second samples.
pub fn dcn_samples(samples: &[f64], cfg: &DcnConfig) -> Result<FrequencyRep> {
    let mut spectrum = dct(samples)?;
    // cut or zero-pad to n_f before normalizing, so the norm target uses n_f
    spectrum.resize(cfg.n_f, 0.0);
    Ok(FrequencyRep::new(normalize(&spectrum, cfg.beta)?))
}

/// Discrete cosine normalization of a segment.
pub fn dcn(seg: &SignalSegment, cfg: &DcnConfig) -> Result<FrequencyRep> {
    dcn_samples(&seg.samples, cfg)
}

/// DCN over many segments, in parallel when enabled.
pub fn dcn_batch(segments: &[SignalSegment], cfg: &DcnConfig) -> Vec<Result<FrequencyRep>> {
    crate::par::map_slice(segments, |s| dcn(s, cfg))
}

/// Stacks query, reference and their elementwise difference.
pub fn unify(query: &FrequencyRep, reference: &FrequencyRep) -> Result<UnifiedRepresentation> {
    let n_f = query.n_f();
    if reference.n_f() != n_f {
        return Err(Error::Shape(format!(
            "query has {} components, reference has {}",
            n_f,
            reference.n_f()
        )));
    }
    let mut data = Vec::with_capacity(3 * n_f);
    data.extend_from_slice(&query.coefficients);
    data.extend_from_slice(&reference.coefficients);
    data.extend(
        query
            .coefficients
            .iter()
            .zip(&reference.coefficients)
            .map(|(q, r)| q - r),
    );
    Ok(UnifiedRepresentation { n_f, data })
}

/// DCT bin holding frequency `hz` in a one-second window (`round(2 * hz)`).
pub fn frequency_bin_of_hz(hz: f64, n_f: usize) -> Result<usize> {
    let max_hz = n_f as f64 / 2.0;
    if !(0.0..=max_hz).contains(&hz) {
        return Err(Error::FrequencyRange { hz, max_hz });
    }
    // f64::round rounds half away from zero
    Ok((2.0 * hz).round() as usize)
}
