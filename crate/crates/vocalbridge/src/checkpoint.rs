//! Denoiser checkpoint format.
//!
//! Layout: magic "VBCK", version byte 1, a fixed config block
//! (latent_channels, base_width, num_levels, time_embed_dim as u32 LE,
//! guidance_enabled as u8, guidance_gamma_milli as u32 LE), u32 tensor
//! count, then each tensor as u16 name length + UTF-8 name, u8 rank,
//! rank u32 dims, and the values as little-endian f32 in enumeration
//! order. Round-trips bit-exactly.

use std::fs;
use std::path::Path;

use vocalbridge_core::denoiser::{DenoiserConfig, DenoiserParams, NamedTensor};

use crate::error::{CliError, Result};
use crate::files::atomic_write;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VBCK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn write_checkpoint(path: &Path, params: &DenoiserParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    let c = &params.config;
    for v in [c.latent_channels, c.base_width, c.num_levels, c.time_embed_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(u8::from(c.guidance_enabled));
    buf.extend_from_slice(&c.guidance_gamma_milli.to_le_bytes());
    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for tensor in &params.tensors {
        let name = tensor.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(tensor.shape.len() as u8);
        for &d in &tensor.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<DenoiserParams> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(format_err(path, format!("truncated while reading {what}")));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |pos: &mut usize, what: &str| -> Result<u32> {
        let b = take(pos, 4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };

    if take(&mut pos, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(format_err(path, "bad magic, not a checkpoint"));
    }
    let version = take(&mut pos, 1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let latent_channels = u32_at(&mut pos, "latent_channels")? as usize;
    let base_width = u32_at(&mut pos, "base_width")? as usize;
    let num_levels = u32_at(&mut pos, "num_levels")? as usize;
    let time_embed_dim = u32_at(&mut pos, "time_embed_dim")? as usize;
    let guidance_enabled = take(&mut pos, 1, "guidance_enabled")?[0] != 0;
    let guidance_gamma_milli = u32_at(&mut pos, "guidance_gamma")?;
    let mut config =
        DenoiserConfig::new(latent_channels, base_width, num_levels, time_embed_dim, guidance_enabled)
            .map_err(|e| format_err(path, e.to_string()))?;
    config.guidance_gamma_milli = guidance_gamma_milli;

    let num_tensors = u32_at(&mut pos, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(num_tensors);
    for i in 0..num_tensors {
        let name_len = {
            let b = take(&mut pos, 2, "name length")?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let name = std::str::from_utf8(take(&mut pos, name_len, "name")?)
            .map_err(|_| format_err(path, format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = take(&mut pos, 1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(&mut pos, "dim")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for j in 0..len {
            let b = take(&mut pos, 4, "values")?;
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(format_err(path, format!("non-finite value in {name} at {j}")));
            }
            data.push(v as f64);
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    let params = DenoiserParams { config, tensors };
    // Reject checkpoints whose tensor list does not match the config layout.
    vocalbridge_core::denoiser::forward(
        &params,
        &vocalbridge_core::tensor::LatentTensor::zeros(
            config.latent_channels,
            config.frame_multiple(),
        ),
        1,
        None,
    )
    .map_err(|e| format_err(path, format!("layout check failed: {e}")))?;
    Ok(params)
}
