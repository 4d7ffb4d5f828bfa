//! Time-domain records and their provenance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical unit of a trace's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceUnit {
    /// Optical quadrature amplitude normalized so the vacuum field has unit
    /// double-sided spectral density.
    ShotNoise,
    /// Oscillator position in units of z_zpf.
    Zzpf,
    /// Force, newtons.
    Newton,
    /// Detector output in arbitrary beat-note units.
    BeatNote,
}

impl std::fmt::Display for TraceUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TraceUnit::ShotNoise => "shot_noise",
            TraceUnit::Zzpf => "z_zpf",
            TraceUnit::Newton => "newton",
            TraceUnit::BeatNote => "beat_note",
        };
        f.write_str(s)
    }
}

/// Where a trace came from: the seed and a hash of the generating config.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// A uniformly sampled real-valued record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    pub unit: TraceUnit,
    pub label: String,
    pub provenance: Provenance,
}

impl TimeTrace {
    pub fn new(
        sample_rate: f64,
        samples: Vec<f64>,
        unit: TraceUnit,
        label: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample_rate must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("trace contains non-finite samples".into()));
        }
        Ok(Self {
            sample_rate,
            samples,
            unit,
            label: label.into(),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sample variance about the mean (population normalization).
    pub fn variance(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.samples.iter().map(|&s| (s - m) * (s - m)).sum::<f64>() / self.samples.len() as f64
    }
}

/// Simultaneous amplitude (x0) and phase (xπ/2) quadrature records on a
/// common sample grid.
#[derive(Debug, Clone)]
pub struct QuadraturePair {
    pub x0: TimeTrace,
    pub xpi2: TimeTrace,
}

impl QuadraturePair {
    pub fn new(x0: TimeTrace, xpi2: TimeTrace) -> Result<Self> {
        if x0.len() != xpi2.len() {
            return Err(Error::Config(format!(
                "quadrature traces differ in length: {} vs {}",
                x0.len(),
                xpi2.len()
            )));
        }
        if x0.sample_rate != xpi2.sample_rate {
            return Err(Error::Config(format!(
                "quadrature traces differ in sample rate: {} vs {}",
                x0.sample_rate, xpi2.sample_rate
            )));
        }
        Ok(Self { x0, xpi2 })
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.x0.sample_rate
    }

    /// Keep only the first `n` frames.
    pub fn truncated(&self, n: usize) -> QuadraturePair {
        let mut out = self.clone();
        out.x0.samples.truncate(n);
        out.xpi2.samples.truncate(n);
        out
    }
}
