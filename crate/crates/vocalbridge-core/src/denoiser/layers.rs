//! Layer primitives with hand-written reverse-mode gradients.
//!
//! Each primitive exposes a forward pass and a backward pass that consumes
//! the cached forward inputs. Iteration order is fixed everywhere so
//! gradient accumulation is bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::LatentTensor;

/// Static description of a 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn same(in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        // kernel 3 with pad = dilation keeps the frame count unchanged.
        Self { in_ch, out_ch, kernel: 3, stride: 1, dilation, pad: dilation }
    }

    pub fn down(in_ch: usize, out_ch: usize) -> Self {
        Self { in_ch, out_ch, kernel: 3, stride: 2, dilation: 1, pad: 1 }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self { in_ch, out_ch, kernel: 1, stride: 1, dilation: 1, pad: 0 }
    }

    pub fn out_frames(&self, in_frames: usize) -> usize {
        (in_frames + 2 * self.pad - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel
    }
}

#[inline]
fn ceil_div(a: isize, b: isize) -> isize {
    (a + b - 1).div_euclid(b)
}

/// Output positions `j` for which `j*stride + offset` lands inside `0..l_in`.
#[inline]
fn valid_range(offset: isize, stride: usize, l_in: usize, l_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = ceil_div(-offset, s).clamp(0, l_out as isize);
    let hi = ceil_div(l_in as isize - offset, s).clamp(lo, l_out as isize);
    (lo as usize, hi as usize)
}

pub fn conv1d_forward(spec: &ConvSpec, x: &LatentTensor, w: &[f64], b: &[f64]) -> LatentTensor {
    debug_assert_eq!(x.channels(), spec.in_ch);
    debug_assert_eq!(w.len(), spec.weight_len());
    debug_assert_eq!(b.len(), spec.out_ch);
    let l_in = x.frames();
    let l_out = spec.out_frames(l_in);
    let mut y = LatentTensor::zeros(spec.out_ch, l_out);
    for o in 0..spec.out_ch {
        y.row_mut(o).fill(b[o]);
        for i in 0..spec.in_ch {
            let x_row = x.row(i);
            for k in 0..spec.kernel {
                let weight = w[(o * spec.in_ch + i) * spec.kernel + k];
                let offset = (k * spec.dilation) as isize - spec.pad as isize;
                let (j_lo, j_hi) = valid_range(offset, spec.stride, l_in, l_out);
                if j_lo >= j_hi {
                    continue;
                }
                if spec.stride == 1 {
                    let src = &x_row[(j_lo as isize + offset) as usize..];
                    let y_row = y.row_mut(o);
                    for (dst, s) in y_row[j_lo..j_hi].iter_mut().zip(src) {
                        *dst += weight * s;
                    }
                } else {
                    let y_row = y.row_mut(o);
                    for j in j_lo..j_hi {
                        let m = (j * spec.stride) as isize + offset;
                        y_row[j] += weight * x_row[m as usize];
                    }
                }
            }
        }
    }
    y
}

/// Backward pass; returns the input gradient and accumulates weight/bias
/// gradients into `gw`/`gb`.
pub fn conv1d_backward(
    spec: &ConvSpec,
    x: &LatentTensor,
    w: &[f64],
    gy: &LatentTensor,
    gw: &mut [f64],
    gb: &mut [f64],
) -> LatentTensor {
    debug_assert_eq!(gy.channels(), spec.out_ch);
    let l_in = x.frames();
    let l_out = gy.frames();
    debug_assert_eq!(l_out, spec.out_frames(l_in));
    let mut gx = LatentTensor::zeros(spec.in_ch, l_in);
    for o in 0..spec.out_ch {
        let gy_row = gy.row(o);
        gb[o] += gy_row.iter().sum::<f64>();
        for i in 0..spec.in_ch {
            let x_row = x.row(i);
            for k in 0..spec.kernel {
                let idx = (o * spec.in_ch + i) * spec.kernel + k;
                let weight = w[idx];
                let offset = (k * spec.dilation) as isize - spec.pad as isize;
                let (j_lo, j_hi) = valid_range(offset, spec.stride, l_in, l_out);
                if j_lo >= j_hi {
                    continue;
                }
                if spec.stride == 1 {
                    let start = (j_lo as isize + offset) as usize;
                    let src = &x_row[start..];
                    gw[idx] += gy_row[j_lo..j_hi]
                        .iter()
                        .zip(src)
                        .map(|(g, s)| g * s)
                        .sum::<f64>();
                    let gx_row = gx.row_mut(i);
                    for (dst, g) in gx_row[start..].iter_mut().zip(&gy_row[j_lo..j_hi]) {
                        *dst += weight * g;
                    }
                } else {
                    let gx_row = gx.row_mut(i);
                    for j in j_lo..j_hi {
                        let m = ((j * spec.stride) as isize + offset) as usize;
                        gw[idx] += gy_row[j] * x_row[m];
                        gx_row[m] += weight * gy_row[j];
                    }
                }
            }
        }
    }
    gx
}

pub fn silu_forward(x: &LatentTensor) -> LatentTensor {
    x.map(math::silu)
}

/// Backward through an elementwise silu whose pre-activation was `pre`.
pub fn silu_backward(pre: &LatentTensor, gy: &LatentTensor) -> LatentTensor {
    pre.zip_map(gy, |p, g| math::silu_prime(p) * g)
}

/// Nearest-neighbor temporal upsampling by 2.
pub fn upsample2_forward(x: &LatentTensor) -> LatentTensor {
    let mut y = LatentTensor::zeros(x.channels(), x.frames() * 2);
    for c in 0..x.channels() {
        let src = x.row(c);
        let dst = y.row_mut(c);
        for (j, &v) in src.iter().enumerate() {
            dst[2 * j] = v;
            dst[2 * j + 1] = v;
        }
    }
    y
}

pub fn upsample2_backward(gy: &LatentTensor) -> LatentTensor {
    let mut gx = LatentTensor::zeros(gy.channels(), gy.frames() / 2);
    for c in 0..gy.channels() {
        let src = gy.row(c);
        let dst = gx.row_mut(c);
        for j in 0..dst.len() {
            dst[j] = src[2 * j] + src[2 * j + 1];
        }
    }
    gx
}

/// Per-channel affine modulation: `y[c] = (1 + scale[c]) * x[c] + shift[c]`.
pub fn film_forward(x: &LatentTensor, scale: &[f64], shift: &[f64]) -> LatentTensor {
    debug_assert_eq!(scale.len(), x.channels());
    let mut y = x.clone();
    for c in 0..x.channels() {
        let (s, b) = (1.0 + scale[c], shift[c]);
        for v in y.row_mut(c) {
            *v = s * *v + b;
        }
    }
    y
}

/// Returns the input gradient plus the gradients of the per-channel scale
/// and shift vectors.
pub fn film_backward(
    x: &LatentTensor,
    scale: &[f64],
    gy: &LatentTensor,
) -> (LatentTensor, Vec<f64>, Vec<f64>) {
    let c_n = x.channels();
    let mut gx = LatentTensor::zeros(c_n, x.frames());
    let mut gscale = vec![0.0; c_n];
    let mut gshift = vec![0.0; c_n];
    for c in 0..c_n {
        let s = 1.0 + scale[c];
        let x_row = x.row(c);
        let gy_row = gy.row(c);
        let gx_row = gx.row_mut(c);
        let mut gs = 0.0;
        let mut gb = 0.0;
        for j in 0..x_row.len() {
            gx_row[j] = s * gy_row[j];
            gs += x_row[j] * gy_row[j];
            gb += gy_row[j];
        }
        gscale[c] = gs;
        gshift[c] = gb;
    }
    (gx, gscale, gshift)
}

pub fn linear_forward(w: &[f64], b: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    (0..out_dim).map(|o| b[o] + math::dot(&w[o * in_dim..(o + 1) * in_dim], x)).collect()
}

/// Returns the input gradient and accumulates weight/bias gradients.
pub fn linear_backward(
    w: &[f64],
    x: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let in_dim = x.len();
    let out_dim = gy.len();
    let mut gx = vec![0.0; in_dim];
    for o in 0..out_dim {
        let g = gy[o];
        gb[o] += g;
        let w_row = &w[o * in_dim..(o + 1) * in_dim];
        let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            gw_row[i] += g * x[i];
            gx[i] += g * w_row[i];
        }
    }
    gx
}

/// Stacks `extra`'s channels below `base`'s.
pub fn concat_channels(base: &LatentTensor, extra: &LatentTensor) -> LatentTensor {
    debug_assert_eq!(base.frames(), extra.frames());
    let mut data = Vec::with_capacity((base.channels() + extra.channels()) * base.frames());
    data.extend_from_slice(base.data());
    data.extend_from_slice(extra.data());
    LatentTensor::from_vec(base.channels() + extra.channels(), base.frames(), data).unwrap()
}

/// Splits a gradient flowing into a channel concatenation.
pub fn split_channels(g: &LatentTensor, base_channels: usize) -> (LatentTensor, LatentTensor) {
    let frames = g.frames();
    let split = base_channels * frames;
    let head = LatentTensor::from_vec(base_channels, frames, g.data()[..split].to_vec()).unwrap();
    let tail =
        LatentTensor::from_vec(g.channels() - base_channels, frames, g.data()[split..].to_vec())
            .unwrap();
    (head, tail)
}

/// Right-pads frames with zeros up to `target` frames.
pub fn pad_frames(x: &LatentTensor, target: usize) -> LatentTensor {
    debug_assert!(target >= x.frames());
    let mut y = LatentTensor::zeros(x.channels(), target);
    for c in 0..x.channels() {
        y.row_mut(c)[..x.frames()].copy_from_slice(x.row(c));
    }
    y
}

/// Keeps the first `target` frames.
pub fn crop_frames(x: &LatentTensor, target: usize) -> LatentTensor {
    debug_assert!(target <= x.frames());
    LatentTensor::from_fn(x.channels(), target, |c, l| x.get(c, l))
}
