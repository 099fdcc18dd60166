//! Binary and text file formats: latent tensors, embeddings, and the
//! calibration record.
//!
//! Latent file: magic "VBLT", version byte 1, u32 channels, u32 frames,
//! then channels*frames little-endian f32 values row-major.
//! Embedding file: magic "VBEM", u32 dim, dim little-endian f32 values.
//! Calibration file: one text line `eer=<v> tau=<v>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use vocalbridge_core::metrics::EmbeddingVector;
use vocalbridge_core::tensor::LatentTensor;

use crate::error::{CliError, Result};

pub const LATENT_MAGIC: &[u8; 4] = b"VBLT";
pub const LATENT_VERSION: u8 = 1;
pub const EMBEDDING_MAGIC: &[u8; 4] = b"VBEM";

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: message.into() }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, format!("truncated while reading {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

pub fn write_latent_file(path: &Path, latent: &LatentTensor) -> Result<()> {
    let mut buf =
        Vec::with_capacity(4 + 1 + 8 + 4 * latent.len());
    buf.extend_from_slice(LATENT_MAGIC);
    buf.push(LATENT_VERSION);
    buf.extend_from_slice(&(latent.channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(latent.frames() as u32).to_le_bytes());
    for &v in latent.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_latent_file(path: &Path) -> Result<LatentTensor> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != LATENT_MAGIC {
        return Err(format_err(path, "bad magic, not a latent file"));
    }
    let version = r.take(1, "version")?[0];
    if version != LATENT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let channels = r.u32("channels")? as usize;
    let frames = r.u32("frames")? as usize;
    if channels == 0 || frames == 0 {
        return Err(format_err(path, "zero channels or frames"));
    }
    let mut data = Vec::with_capacity(channels * frames);
    for i in 0..channels * frames {
        let v = r.f32("payload")?;
        if !v.is_finite() {
            return Err(format_err(path, format!("non-finite value at index {i}")));
        }
        data.push(v as f64);
    }
    r.finish()?;
    LatentTensor::from_vec(channels, frames, data)
        .ok_or_else(|| format_err(path, "inconsistent payload length"))
}

pub fn write_embedding_file(path: &Path, embedding: &EmbeddingVector) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 4 * embedding.dim());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(embedding.dim() as u32).to_le_bytes());
    for &v in embedding.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingVector> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != EMBEDDING_MAGIC {
        return Err(format_err(path, "bad magic, not an embedding file"));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(format_err(path, "zero-dimensional embedding"));
    }
    let mut values = Vec::with_capacity(dim);
    for i in 0..dim {
        let v = r.f32("payload")?;
        if !v.is_finite() {
            return Err(format_err(path, format!("non-finite value at index {i}")));
        }
        values.push(v as f64);
    }
    r.finish()?;
    Ok(EmbeddingVector::from_raw(values))
}

/// Returns true when the file carries the embedding magic; used to let
/// trial manifests point at either latents or precomputed embeddings.
pub fn is_embedding_file(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    Ok(bytes.len() >= 4 && &bytes[..4] == EMBEDDING_MAGIC)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub eer: f64,
    pub tau: f64,
}

pub fn write_calibration_file(path: &Path, calibration: &Calibration) -> Result<()> {
    let text = format!("eer={:.6} tau={:.6}\n", calibration.eer, calibration.tau);
    atomic_write(path, text.as_bytes())
}

pub fn read_calibration_file(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    let line = text.lines().next().ok_or_else(|| format_err(path, "empty calibration file"))?;
    let mut eer = None;
    let mut tau = None;
    for field in line.split_whitespace() {
        if let Some(v) = field.strip_prefix("eer=") {
            eer = v.parse::<f64>().ok();
        } else if let Some(v) = field.strip_prefix("tau=") {
            tau = v.parse::<f64>().ok();
        }
    }
    match (eer, tau) {
        (Some(eer), Some(tau)) if eer.is_finite() && tau.is_finite() => {
            Ok(Calibration { eer, tau })
        }
        _ => Err(format_err(path, "expected `eer=<v> tau=<v>`")),
    }
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::from_io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CliError::from_io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::from_io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vocalbridge_core::rng::SeedStream;

    #[test]
    fn latent_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vblt");
        let mut rng = SeedStream::new(1);
        let latent = rng.normal_tensor(3, 7);
        write_latent_file(&path, &latent).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = read_latent_file(&path).unwrap();
        write_latent_file(&path, &loaded).unwrap();
        let second = fs::read(&path).unwrap();
        assert_eq!(first, second);
        assert_eq!(loaded.shape(), (3, 7));
    }

    #[test]
    fn latent_truncation_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vblt");
        let mut rng = SeedStream::new(2);
        write_latent_file(&path, &rng.normal_tensor(2, 4)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        let err = read_latent_file(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");
    }

    #[test]
    fn latent_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vblt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01").unwrap();
        let err = read_latent_file(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn latent_nan_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.vblt");
        let mut buf = Vec::new();
        buf.extend_from_slice(LATENT_MAGIC);
        buf.push(LATENT_VERSION);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &buf).unwrap();
        let err = read_latent_file(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn missing_latent_file_maps_to_exit_3() {
        let err = read_latent_file(Path::new("/nonexistent/x.vblt")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn embedding_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.vbem");
        let e = EmbeddingVector::from_raw(vec![0.25, -0.5, 1.0, 0.125]);
        write_embedding_file(&path, &e).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = read_embedding_file(&path).unwrap();
        write_embedding_file(&path, &loaded).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert!(is_embedding_file(&path).unwrap());
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.txt");
        let c = Calibration { eer: 0.0486, tau: 0.951 };
        write_calibration_file(&path, &c).unwrap();
        let back = read_calibration_file(&path).unwrap();
        assert!((back.eer - 0.0486).abs() < 1e-9);
        assert!((back.tau - 0.951).abs() < 1e-9);
    }
}
