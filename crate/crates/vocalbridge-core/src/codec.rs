//! Waveform-to-latent codec.
//!
//! A linear orthonormal stand-in for a neural audio codec: waveforms are
//! cut into fixed-size frames and each frame is projected onto the first
//! `kept_coefficients` rows of an orthonormal DCT-II basis. Linearity makes
//! latent-domain perturbations exactly computable, and `kept == frame_size`
//! gives a lossless round trip for algebra tests. Real codec latents can be
//! injected through the latent file format instead.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math;
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecError {
    /// frame_size and kept_coefficients must satisfy 1 <= kept <= frame_size.
    BadSpec,
    /// Latent channel count does not match the codec's kept coefficients.
    ChannelMismatch { expected: usize, got: usize },
    /// Waveform contains non-finite samples.
    NonFiniteSamples,
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadSpec => write!(f, "codec spec requires 1 <= kept_coefficients <= frame_size"),
            Self::ChannelMismatch { expected, got } => {
                write!(f, "latent has {got} channels, codec expects {expected}")
            }
            Self::NonFiniteSamples => write!(f, "waveform contains non-finite samples"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CodecError {}

/// A mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Orthonormal frame codec: `frame_size`-sample frames projected onto the
/// first `kept_coefficients` DCT-II basis rows.
#[derive(Debug, Clone)]
pub struct CodecSpec {
    frame_size: usize,
    kept_coefficients: usize,
    sample_rate: u32,
    /// Row-major `kept x frame_size` slice of the orthonormal basis.
    basis: Vec<f64>,
}

impl CodecSpec {
    pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
    pub const DEFAULT_FRAME_SIZE: usize = 64;
    pub const DEFAULT_KEPT: usize = 32;

    pub fn new(frame_size: usize, kept_coefficients: usize, sample_rate: u32) -> Result<Self, CodecError> {
        if frame_size == 0 || kept_coefficients == 0 || kept_coefficients > frame_size {
            return Err(CodecError::BadSpec);
        }
        let mut basis = Vec::with_capacity(kept_coefficients * frame_size);
        let w = frame_size as f64;
        for r in 0..kept_coefficients {
            let scale = if r == 0 { math::sqrt(1.0 / w) } else { math::sqrt(2.0 / w) };
            for n in 0..frame_size {
                let angle = PI * (2.0 * n as f64 + 1.0) * r as f64 / (2.0 * w);
                basis.push(scale * math::cos(angle));
            }
        }
        Ok(Self { frame_size, kept_coefficients, sample_rate, basis })
    }

    pub fn default_spec() -> Self {
        Self::new(Self::DEFAULT_FRAME_SIZE, Self::DEFAULT_KEPT, Self::DEFAULT_SAMPLE_RATE).unwrap()
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn kept_coefficients(&self) -> usize {
        self.kept_coefficients
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Latent frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.frame_size as f64
    }

    fn basis_row(&self, r: usize) -> &[f64] {
        &self.basis[r * self.frame_size..(r + 1) * self.frame_size]
    }

    /// Number of latent frames for a waveform of `num_samples` samples
    /// (zero-padded tail).
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.frame_size).max(1)
    }

    /// Projects a waveform into the latent domain: one latent column per
    /// frame, one channel per kept basis row.
    pub fn encode(&self, waveform: &Waveform) -> Result<LatentTensor, CodecError> {
        if !waveform.samples.iter().all(|s| s.is_finite()) {
            return Err(CodecError::NonFiniteSamples);
        }
        let frames = self.num_frames(waveform.samples.len());
        let mut latent = LatentTensor::zeros(self.kept_coefficients, frames);
        let mut frame_buf = Vec::with_capacity(self.frame_size);
        for l in 0..frames {
            frame_buf.clear();
            let start = l * self.frame_size;
            for n in 0..self.frame_size {
                frame_buf.push(waveform.samples.get(start + n).copied().unwrap_or(0.0));
            }
            for r in 0..self.kept_coefficients {
                latent.set(r, l, math::dot(self.basis_row(r), &frame_buf));
            }
        }
        Ok(latent)
    }

    /// Transpose projection back to a waveform; exact inverse of
    /// [`CodecSpec::encode`] on the padded domain when `kept == frame_size`.
    pub fn decode(&self, latent: &LatentTensor) -> Result<Waveform, CodecError> {
        if latent.channels() != self.kept_coefficients {
            return Err(CodecError::ChannelMismatch {
                expected: self.kept_coefficients,
                got: latent.channels(),
            });
        }
        let mut samples = alloc::vec![0.0; latent.frames() * self.frame_size];
        for l in 0..latent.frames() {
            let out = &mut samples[l * self.frame_size..(l + 1) * self.frame_size];
            for r in 0..self.kept_coefficients {
                let coeff = latent.get(r, l);
                for (o, b) in out.iter_mut().zip(self.basis_row(r)) {
                    *o += coeff * b;
                }
            }
        }
        Ok(Waveform { sample_rate: self.sample_rate, samples })
    }
}
