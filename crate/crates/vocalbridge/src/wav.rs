//! Mono RIFF/WAVE io: float32 on write, float32 or 16-bit PCM on read.

use std::path::Path;

use vocalbridge_core::codec::Waveform;

use crate::error::{CliError, Result};

pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    for &s in &waveform.samples {
        writer
            .write_sample(s as f32)
            .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    }
    writer
        .finalize()
        .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => CliError::from_io(path, io),
        other => CliError::Format { path: path.to_path_buf(), message: other.to_string() },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: format!("expected mono, got {} channels", spec.channels),
        });
    }
    let samples: std::result::Result<Vec<f64>, hound::Error> = match spec.sample_format {
        hound::SampleFormat::Float => {
            reader.samples::<f32>().map(|s| s.map(|v| v as f64)).collect()
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect()
        }
    };
    let samples = samples
        .map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(Waveform { sample_rate: spec.sample_rate, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = Waveform {
            sample_rate: 16_000,
            samples: (0..256).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect(),
        };
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 256);
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pcm16_wav_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..64i32 {
            w.write_sample((i * 256) as i16).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.samples.len(), 64);
        assert!((wave.samples[1] - 256.0 / 32768.0).abs() < 1e-9);
    }

    #[test]
    fn missing_wav_is_exit_3() {
        let err = read_wav(Path::new("/nonexistent/a.wav")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
