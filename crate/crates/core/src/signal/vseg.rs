//! `VSEG` segment files: `"VSEG"`, u32 LE sample rate, u32 LE sample count,
//! then `count` IEEE-754 f32 LE samples.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const VSEG_MAGIC: &[u8; 4] = b"VSEG";
const HEADER_LEN: usize = 12;

/// A decoded segment file.
#[derive(Debug, Clone, PartialEq)]
pub struct VsegRecord {
    pub sample_rate_hz: u32,
    pub samples: Vec<f32>,
}

impl VsegRecord {
    /// Builds a record from 64-bit samples, narrowing them to f32.
    pub fn from_f64(sample_rate_hz: u32, samples: &[f64]) -> Self {
        Self {
            sample_rate_hz,
            samples: samples.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.samples.len());
        out.extend_from_slice(VSEG_MAGIC);
        out.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "VSEG header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != VSEG_MAGIC {
            return Err(Error::Format("bad VSEG magic".into()));
        }
        let rate = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * count {
            return Err(Error::Format(format!(
                "VSEG payload holds {} bytes, header promises {} samples",
                payload.len(),
                count
            )));
        }
        if rate == 0 {
            return Err(Error::Format("VSEG sample rate is zero".into()));
        }
        let samples = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            sample_rate_hz: rate,
            samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes)
    }
}
