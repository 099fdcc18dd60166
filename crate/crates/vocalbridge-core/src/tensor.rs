//! Channel-by-frame tensors.
//!
//! All latent-domain quantities (clean latents, perturbation residuals,
//! diffusion noise, network activations) share this one dense row-major
//! layout: `data[c * frames + l]`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Shape disagreement between tensors that an operation requires to match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeMismatch {
    pub expected: (usize, usize),
    pub got: (usize, usize),
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shape mismatch: expected {}x{}, got {}x{}",
            self.expected.0, self.expected.1, self.got.0, self.got.1
        )
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ShapeMismatch {}

/// A dense channels-by-frames tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self { channels, frames, data: vec![0.0; channels * frames] }
    }

    pub fn from_fn(channels: usize, frames: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * frames);
        for c in 0..channels {
            for l in 0..frames {
                data.push(f(c, l));
            }
        }
        Self { channels, frames, data }
    }

    /// Builds a tensor from row-major data; length must equal `channels * frames`.
    pub fn from_vec(channels: usize, frames: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == channels * frames).then_some(Self { channels, frames, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.frames)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, l: usize) -> f64 {
        self.data[c * self.frames + l]
    }

    #[inline]
    pub fn set(&mut self, c: usize, l: usize, v: f64) {
        self.data[c * self.frames + l] = v;
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), ShapeMismatch> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(ShapeMismatch { expected: self.shape(), got: other.shape() })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            frames: self.frames,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination; shapes must already agree.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            channels: self.channels,
            frames: self.frames,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// self + s * other, fused into one pass.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn l2_norm(&self) -> f64 {
        math::l2_norm(&self.data)
    }

    pub fn rms(&self) -> f64 {
        math::rms(&self.data)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / self.data.len() as f64
    }

    /// Mean absolute difference over all elements.
    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / self.data.len() as f64
    }

    /// Largest |a - b| over all elements.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let t = LatentTensor::from_fn(2, 3, |c, l| (c * 10 + l) as f64);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(t.get(1, 2), 12.0);
        assert_eq!(t.row(1), &[10.0, 11.0, 12.0]);
    }

    #[test]
    fn shape_mismatch_reported() {
        let a = LatentTensor::zeros(2, 3);
        let b = LatentTensor::zeros(3, 2);
        let err = a.same_shape(&b).unwrap_err();
        assert_eq!(err.expected, (2, 3));
        assert_eq!(err.got, (3, 2));
    }

    #[test]
    fn add_scaled_matches_scalar_loop() {
        let a = LatentTensor::from_fn(3, 4, |c, l| c as f64 - l as f64);
        let b = LatentTensor::from_fn(3, 4, |c, l| (c * l) as f64 + 0.5);
        let got = a.add_scaled(&b, -2.5);
        for c in 0..3 {
            for l in 0..4 {
                let want = a.get(c, l) + (-2.5) * b.get(c, l);
                assert!((got.get(c, l) - want).abs() < 1e-15);
            }
        }
    }
}
