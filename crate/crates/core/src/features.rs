//! Multi-scale spectral image (MSSI) construction.
//!
//! A vibration record is cut into non-overlapping segments. For every segment
//! the head `2^m` samples are transformed for each `m` in `m_min..=m_max`, each
//! one-sided magnitude spectrum is min-max scaled, stretched to the longest
//! row, stacked in ascending `m` and finally reshaped row-major into a 32×56
//! image. The classifier consumes a 128×128 nearest-neighbour upscale of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};

pub const MSSI_ROWS: usize = 32;
pub const MSSI_COLS: usize = 56;
pub const MSSI_LEN: usize = MSSI_ROWS * MSSI_COLS;
pub const CNN_SIDE: usize = 128;

/// A raw vibration record.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sampling_rate: f64,
    pub label: Option<u32>,
    pub source_id: String,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sampling_rate: f64, label: Option<u32>, source_id: impl Into<String>) -> Self {
        Self { samples, sampling_rate, label, source_id: source_id.into() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Signal { source_id: self.source_id.clone(), message };
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(fail(format!("sampling rate must be positive, got {}", self.sampling_rate)));
        }
        if self.samples.is_empty() {
            return Err(fail("no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}

/// A fixed-length, mean-removed slice of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub label: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub m_min: u32,
    pub m_max: u32,
    pub seg_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { m_min: 3, m_max: 9, seg_len: 2048 }
    }
}

impl FeatureConfig {
    pub fn with_seg_len(seg_len: usize) -> Self {
        Self { seg_len, ..Self::default() }
    }

    pub fn rows(&self) -> usize {
        (self.m_max - self.m_min + 1) as usize
    }

    /// Width every row is aligned to: the one-sided length at `m_max`.
    pub fn row_len(&self) -> usize {
        1 << (self.m_max - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_min < 1 || self.m_min > self.m_max {
            return Err(Error::Config(format!(
                "need 1 <= m_min <= m_max, got m_min={} m_max={}",
                self.m_min, self.m_max
            )));
        }
        if self.m_max >= usize::BITS - 1 || (1usize << self.m_max) > self.seg_len {
            return Err(Error::Config(format!(
                "segment length {} shorter than the largest FFT window 2^{}",
                self.seg_len, self.m_max
            )));
        }
        Ok(())
    }

    fn check_geometry(&self) -> Result<()> {
        self.validate()?;
        let total = self.rows() * self.row_len();
        if total != MSSI_LEN {
            return Err(Error::Geometry(format!(
                "{} rows x {} = {total} elements, image needs {MSSI_LEN}",
                self.rows(),
                self.row_len()
            )));
        }
        Ok(())
    }
}

/// A 32×56 feature image, row-major, every pixel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MssiImage {
    pixels: Vec<f64>,
    pub label: Option<u32>,
}

impl MssiImage {
    pub fn new(pixels: Vec<f64>, label: Option<u32>) -> Result<Self> {
        if pixels.len() != MSSI_LEN {
            return Err(Error::Shape(format!("MSSI image needs {MSSI_LEN} pixels, got {}", pixels.len())));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Shape(format!("pixel {i} outside [0,1]: {}", pixels[i])));
        }
        Ok(Self { pixels, label })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * MSSI_COLS + col]
    }

    pub fn upscale(&self) -> Vec<f64> {
        upscale_index_map().map(|src| self.pixels[src]).collect()
    }
}

/// Splits `signal` into `floor(len/seg_len)` consecutive mean-removed
/// segments, discarding the remainder.
pub fn segment_signal(signal: &Signal, seg_len: usize) -> Result<Vec<Segment>> {
    if seg_len == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    if signal.samples.len() < seg_len {
        return Err(Error::SignalTooShort { len: signal.samples.len(), need: seg_len });
    }
    signal
        .samples
        .chunks_exact(seg_len)
        .map(|chunk| Ok(Segment { samples: dsp::remove_mean(chunk)?, label: signal.label }))
        .collect()
}

/// Normalized one-sided spectra of the segment head at every scale, ascending
/// in `m`; row `i` has length `2^(m_min+i-1)`.
pub fn multiscale_spectra(seg: &Segment, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let need = 1usize << cfg.m_max;
    if seg.samples.len() < need {
        return Err(Error::SignalTooShort { len: seg.samples.len(), need });
    }
    (cfg.m_min..=cfg.m_max)
        .map(|m| {
            let window = &seg.samples[..1 << m];
            dsp::minmax_normalize(&dsp::magnitude_spectrum(window)?)
        })
        .collect()
}

/// The stacked 7×256 matrix before reshaping, flattened row-major.
pub fn stacked_rows(seg: &Segment, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.check_geometry()?;
    let width = cfg.row_len();
    let mut out = Vec::with_capacity(cfg.rows() * width);
    for row in multiscale_spectra(seg, cfg)? {
        out.extend(dsp::align_to_length(&row, width)?);
    }
    Ok(out)
}

pub fn build_mssi(seg: &Segment, cfg: &FeatureConfig) -> Result<MssiImage> {
    // 7×256 and 32×56 share the same row-major element order.
    MssiImage::new(stacked_rows(seg, cfg)?, seg.label)
}

/// Flat source index in the 32×56 image for each pixel of the 128×128 output.
pub fn upscale_index_map() -> impl Iterator<Item = usize> {
    (0..CNN_SIDE).flat_map(|r| {
        let sr = r * MSSI_ROWS / CNN_SIDE;
        (0..CNN_SIDE).map(move |c| sr * MSSI_COLS + c * MSSI_COLS / CNN_SIDE)
    })
}

/// Nearest-neighbour resize of a flat 32×56 image to 128×128:
/// `out[r][c] = img[r·32/128][c·56/128]`.
pub fn upscale_nearest(pixels: &[f64]) -> Result<Vec<f64>> {
    if pixels.len() != MSSI_LEN {
        return Err(Error::Shape(format!(
            "upscale expects {MSSI_ROWS}x{MSSI_COLS} input, got {} values",
            pixels.len()
        )));
    }
    Ok(upscale_index_map().map(|src| pixels[src]).collect())
}

/// Featurizes every segment of every signal, in signal order then segment
/// order. Errors carry the offending signal's `source_id`.
pub fn featurize_dataset(signals: &[Signal], cfg: &FeatureConfig) -> Result<Vec<MssiImage>> {
    cfg.check_geometry()?;
    let with_source = |s: &Signal, e: Error| match e {
        e @ Error::Signal { .. } => e,
        other => Error::Signal { source_id: s.source_id.clone(), message: other.to_string() },
    };
    let mut segments = Vec::new();
    for s in signals {
        s.validate()?;
        segments.extend(segment_signal(s, cfg.seg_len).map_err(|e| with_source(s, e))?);
    }
    segments.par_iter().map(|seg| build_mssi(seg, cfg)).collect()
}
