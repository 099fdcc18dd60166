//! Phoneme guidance tracks.
//!
//! A guidance track is a frame-aligned scalar signal built from a phoneme
//! alignment map and a simple acoustic prior (per-frame log-RMS energy),
//! standardized, squashed through tanh, and RMS-matched to the latent it
//! conditions. When no alignment is available the track is absent and the
//! denoiser receives an all-zero guidance channel instead.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::tensor::LatentTensor;

const STD_FLOOR: f64 = 1e-8;
const RMS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentError {
    /// A line did not parse as `start<TAB>end<TAB>phoneme_id`.
    MalformedLine { line_no: usize, line: String },
    /// Segment with negative time or end <= start.
    InvalidSegment { line_no: usize },
    /// Segments out of order or overlapping.
    Overlap { line_no: usize },
}

impl fmt::Display for AlignmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MalformedLine { line_no, line } => {
                write!(f, "alignment line {line_no} malformed: {line:?}")
            }
            Self::InvalidSegment { line_no } => {
                write!(f, "alignment line {line_no}: negative time or empty segment")
            }
            Self::Overlap { line_no } => {
                write!(f, "alignment line {line_no}: segments overlap or are out of order")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AlignmentError {}

/// One aligned phoneme interval, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedSegment {
    pub start: f64,
    pub end: f64,
    pub phoneme_id: u32,
}

/// Time-ordered, non-overlapping phoneme segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentMap {
    segments: Vec<AlignedSegment>,
}

impl AlignmentMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(segments: Vec<AlignedSegment>) -> Result<Self, AlignmentError> {
        for (i, seg) in segments.iter().enumerate() {
            if seg.start < 0.0 || seg.end <= seg.start {
                return Err(AlignmentError::InvalidSegment { line_no: i + 1 });
            }
            if i > 0 && seg.start < segments[i - 1].end {
                return Err(AlignmentError::Overlap { line_no: i + 1 });
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[AlignedSegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Parses the line-oriented `start<TAB>end<TAB>phoneme_id` format.
    /// Blank lines are ignored; an empty input yields an empty map.
    pub fn parse(text: &str) -> Result<Self, AlignmentError> {
        let mut segments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (a, b, c) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => {
                    return Err(AlignmentError::MalformedLine { line_no, line: line.into() });
                }
            };
            let start: f64 = a
                .trim()
                .parse()
                .map_err(|_| AlignmentError::MalformedLine { line_no, line: line.into() })?;
            let end: f64 = b
                .trim()
                .parse()
                .map_err(|_| AlignmentError::MalformedLine { line_no, line: line.into() })?;
            let phoneme_id: u32 = c
                .trim()
                .parse()
                .map_err(|_| AlignmentError::MalformedLine { line_no, line: line.into() })?;
            if start < 0.0 || end <= start || !start.is_finite() || !end.is_finite() {
                return Err(AlignmentError::InvalidSegment { line_no });
            }
            if let Some(prev) = segments.last() {
                let prev: &AlignedSegment = prev;
                if start < prev.end {
                    return Err(AlignmentError::Overlap { line_no });
                }
            }
            segments.push(AlignedSegment { start, end, phoneme_id });
        }
        Ok(Self { segments })
    }

    /// Renders back to the text format parsed by [`AlignmentMap::parse`].
    pub fn to_text(&self) -> String {
        use core::fmt::Write;
        let mut out = String::new();
        for seg in &self.segments {
            let _ = writeln!(out, "{:.6}\t{:.6}\t{}", seg.start, seg.end, seg.phoneme_id);
        }
        out
    }
}

/// A guidance signal aligned to latent frames.
///
/// `values` are post-tanh, in (-1, 1); the RMS match against the latent
/// being conditioned happens at use time via [`rms_match`].
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTrack {
    pub values: Vec<f64>,
    pub gamma: f64,
}

impl GuidanceTrack {
    pub fn frames(&self) -> usize {
        self.values.len()
    }
}

/// Rasterizes an alignment onto `num_frames` latent frames.
///
/// Frame `k` covers `[k/frame_rate, (k+1)/frame_rate)` and carries the
/// phoneme id active at its center, scaled to `id / max_id`; frames outside
/// every segment carry 0.
pub fn rasterize(alignment: &AlignmentMap, num_frames: usize, frame_rate: f64) -> Vec<f64> {
    let max_id = alignment.segments().iter().map(|s| s.phoneme_id).max().unwrap_or(0);
    let mut track = Vec::with_capacity(num_frames);
    for k in 0..num_frames {
        let center = (k as f64 + 0.5) / frame_rate;
        let mut value = 0.0;
        for seg in alignment.segments() {
            if center >= seg.start && center < seg.end {
                if max_id > 0 {
                    value = seg.phoneme_id as f64 / max_id as f64;
                }
                break;
            }
        }
        track.push(value);
    }
    track
}

/// Per-frame log-RMS energy of a waveform, framed without overlap; the
/// acoustic prior combined with the rasterized alignment.
pub fn log_rms_prior(samples: &[f64], frame_size: usize, num_frames: usize) -> Vec<f64> {
    let mut prior = Vec::with_capacity(num_frames);
    for k in 0..num_frames {
        let start = k * frame_size;
        let end = (start + frame_size).min(samples.len());
        let e = if start < end { math::rms(&samples[start..end]) } else { 0.0 };
        prior.push(math::ln(e + 1e-8));
    }
    prior
}

fn standardize(values: &[f64]) -> Vec<f64> {
    let m = math::mean(values);
    let s = math::std_dev(values);
    if s < STD_FLOOR {
        return values.iter().map(|_| 0.0).collect();
    }
    values.iter().map(|v| (v - m) / s).collect()
}

/// Combines a rasterized alignment with an acoustic prior into a smooth,
/// bounded guidance signal: standardize each, sum, squash with tanh.
pub fn build_guidance(raster: &[f64], acoustic_prior: &[f64]) -> Vec<f64> {
    debug_assert_eq!(raster.len(), acoustic_prior.len());
    let r = standardize(raster);
    let p = standardize(acoustic_prior);
    r.iter().zip(&p).map(|(a, b)| math::tanh(a + b)).collect()
}

/// Scales `y` so its RMS equals `gamma` times the reference tensor's RMS.
/// A silent track (RMS below 1e-8) maps to zeros.
pub fn rms_match(y: &[f64], reference: &LatentTensor, gamma: f64) -> Vec<f64> {
    let y_rms = math::rms(y);
    if y_rms < RMS_FLOOR {
        return y.iter().map(|_| 0.0).collect();
    }
    let scale = gamma * reference.rms() / y_rms;
    y.iter().map(|v| v * scale).collect()
}
