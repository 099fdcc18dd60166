//! Speaker-verification scoring.
//!
//! A deterministic filterbank-statistics embedder stands in for a neural
//! speaker encoder: per-band mean and standard deviation of mel-style
//! filterbank energies, concatenated and unit-normalized. Verification is
//! cosine similarity against enrollment centroids; the decision threshold
//! is calibrated at the equal-error-rate operating point and the
//! authentication restoration rate counts protected-rejected trials that
//! become accepted after purification.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::codec::Waveform;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    /// EER needs at least one genuine and one impostor score.
    EmptyScores,
    /// ARR needs at least one trial.
    EmptyTrials,
    /// Embedding dimensions disagree.
    DimensionMismatch { expected: usize, got: usize },
    /// Waveform too short for even a single analysis frame.
    WaveformTooShort,
    /// Centroids need at least one enrollment embedding.
    EmptyEnrollment,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyScores => write!(f, "EER requires non-empty genuine and impostor scores"),
            Self::EmptyTrials => write!(f, "ARR requires at least one trial"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "embedding dimension {got}, expected {expected}")
            }
            Self::WaveformTooShort => write!(f, "waveform shorter than one analysis frame"),
            Self::EmptyEnrollment => write!(f, "centroid requires at least one embedding"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// A unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps raw values, normalizing to unit L2 norm. All-zero input stays
    /// zero (and will score 0 against everything).
    pub fn from_raw(values: Vec<f64>) -> Self {
        let norm = math::l2_norm(&values);
        if norm > 0.0 {
            Self { values: values.iter().map(|v| v / norm).collect() }
        } else {
            Self { values }
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Mean of enrollment embeddings for one speaker; unit-normalized at
/// scoring time by the cosine itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerCentroid {
    pub speaker_id: String,
    centroid: Vec<f64>,
}

impl SpeakerCentroid {
    pub fn from_embeddings(
        speaker_id: String,
        embeddings: &[EmbeddingVector],
    ) -> Result<Self, MetricsError> {
        let first = embeddings.first().ok_or(MetricsError::EmptyEnrollment)?;
        let dim = first.dim();
        let mut centroid = vec![0.0; dim];
        for e in embeddings {
            if e.dim() != dim {
                return Err(MetricsError::DimensionMismatch { expected: dim, got: e.dim() });
            }
            for (acc, v) in centroid.iter_mut().zip(e.values()) {
                *acc += v;
            }
        }
        for v in &mut centroid {
            *v /= embeddings.len() as f64;
        }
        Ok(Self { speaker_id, centroid })
    }

    pub fn values(&self) -> &[f64] {
        &self.centroid
    }
}

/// Cosine similarity between an embedding and a centroid, in [-1, 1].
pub fn cosine_score(e: &EmbeddingVector, c: &SpeakerCentroid) -> f64 {
    let num = math::dot(e.values(), c.values());
    let denom = math::l2_norm(e.values()) * math::l2_norm(c.values());
    if denom == 0.0 {
        0.0
    } else {
        (num / denom).clamp(-1.0, 1.0)
    }
}

/// Per-utterance verification record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub speaker_id: String,
    /// Cosine score of the protected utterance against its centroid.
    pub s_prot: f64,
    /// Cosine score of the purified utterance against its centroid.
    pub s_pur: f64,
}

/// Equal-error-rate calibration result.
#[derive(Debug, Clone, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub tau: f64,
    /// (threshold, FAR, FRR) samples over the sweep.
    pub curve: Vec<(f64, f64, f64)>,
}

fn far_frr(tau: f64, genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
    let far = impostor.iter().filter(|&&s| s >= tau).count() as f64 / impostor.len() as f64;
    let frr = genuine.iter().filter(|&&s| s < tau).count() as f64 / genuine.len() as f64;
    (far, frr)
}

/// Sweeps candidate thresholds (all distinct scores plus midpoints between
/// adjacent distinct scores) and returns the threshold minimizing |FAR-FRR|,
/// ties broken toward the smallest threshold; EER is (FAR+FRR)/2 there.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerResult, MetricsError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut thresholds = Vec::with_capacity(candidates.len() * 2);
    for (i, &c) in candidates.iter().enumerate() {
        thresholds.push(c);
        if i + 1 < candidates.len() {
            thresholds.push(0.5 * (c + candidates[i + 1]));
        }
    }

    let mut best_tau = thresholds[0];
    let mut best_gap = f64::INFINITY;
    let mut best_eer = 0.0;
    let mut curve = Vec::with_capacity(thresholds.len());
    for &tau in &thresholds {
        let (far, frr) = far_frr(tau, genuine, impostor);
        curve.push((tau, far, frr));
        let gap = (far - frr).abs();
        if gap < best_gap {
            best_gap = gap;
            best_tau = tau;
            best_eer = 0.5 * (far + frr);
        }
    }
    Ok(EerResult { eer: best_eer, tau: best_tau, curve })
}

/// Authentication restoration rate at threshold `tau`: among trials whose
/// protected score fell below `tau`, the fraction whose purified score
/// reaches it. `None` when no trial was rejected in protected form.
pub fn compute_arr(trials: &[TrialRecord], tau: f64) -> Result<Option<f64>, MetricsError> {
    if trials.is_empty() {
        return Err(MetricsError::EmptyTrials);
    }
    let rejected = trials.iter().filter(|r| r.s_prot < tau).count();
    if rejected == 0 {
        return Ok(None);
    }
    let restored = trials.iter().filter(|r| r.s_prot < tau && r.s_pur >= tau).count();
    Ok(Some(restored as f64 / rejected as f64))
}

/// Analysis settings for the filterbank embedder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedderSpec {
    pub frame_size: usize,
    pub hop: usize,
    pub num_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Log-compress band energies before the statistics; keeps quiet bands
    /// from being drowned out by dominant partials.
    pub log_compress: bool,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            frame_size: 256,
            hop: 128,
            num_bands: 16,
            f_min: 0.0,
            f_max: 4000.0,
            log_compress: true,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * math::ln(1.0 + f / 700.0) / math::ln(10.0)
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (math::powf(10.0, m / 2595.0) - 1.0)
}

/// Deterministic filterbank-statistics embedder.
#[derive(Debug, Clone)]
pub struct Embedder {
    spec: EmbedderSpec,
    window: Vec<f64>,
    /// cos/sin tables for each retained DFT bin: `[bin][sample]`.
    cos_table: Vec<f64>,
    sin_table: Vec<f64>,
    num_bins: usize,
    /// Triangular filter weights: `[band][bin]`.
    filters: Vec<f64>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec, sample_rate: u32) -> Self {
        let n = spec.frame_size;
        let num_bins = n / 2 + 1;
        let window: Vec<f64> =
            (0..n).map(|i| 0.5 - 0.5 * math::cos(2.0 * PI * i as f64 / n as f64)).collect();
        let mut cos_table = Vec::with_capacity(num_bins * n);
        let mut sin_table = Vec::with_capacity(num_bins * n);
        for b in 0..num_bins {
            for i in 0..n {
                let angle = 2.0 * PI * b as f64 * i as f64 / n as f64;
                cos_table.push(math::cos(angle));
                sin_table.push(math::sin(angle));
            }
        }
        // Triangular mel filters over the retained bins.
        let mel_lo = hz_to_mel(spec.f_min);
        let mel_hi = hz_to_mel(spec.f_max);
        let edges: Vec<f64> = (0..spec.num_bands + 2)
            .map(|i| {
                mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (spec.num_bands + 1) as f64)
            })
            .collect();
        let bin_hz = sample_rate as f64 / n as f64;
        let mut filters = vec![0.0; spec.num_bands * num_bins];
        for band in 0..spec.num_bands {
            let (lo, mid, hi) = (edges[band], edges[band + 1], edges[band + 2]);
            for bin in 0..num_bins {
                let f = bin as f64 * bin_hz;
                let w = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                filters[band * num_bins + bin] = w;
            }
        }
        Self { spec, window, cos_table, sin_table, num_bins, filters }
    }

    pub fn dim(&self) -> usize {
        2 * self.spec.num_bands
    }

    /// Band energies for each frame: `[frame][band]`.
    fn band_energies(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, MetricsError> {
        let n = self.spec.frame_size;
        if samples.len() < n {
            return Err(MetricsError::WaveformTooShort);
        }
        let num_frames = 1 + (samples.len() - n) / self.spec.hop;
        let mut frames = Vec::with_capacity(num_frames);
        let mut windowed = vec![0.0; n];
        let mut power = vec![0.0; self.num_bins];
        for fr in 0..num_frames {
            let start = fr * self.spec.hop;
            for i in 0..n {
                windowed[i] = samples[start + i] * self.window[i];
            }
            for b in 0..self.num_bins {
                let cos_row = &self.cos_table[b * n..(b + 1) * n];
                let sin_row = &self.sin_table[b * n..(b + 1) * n];
                let re = math::dot(cos_row, &windowed);
                let im = math::dot(sin_row, &windowed);
                power[b] = re * re + im * im;
            }
            let mut bands = vec![0.0; self.spec.num_bands];
            for band in 0..self.spec.num_bands {
                let e =
                    math::dot(&self.filters[band * self.num_bins..(band + 1) * self.num_bins], &power);
                bands[band] = if self.spec.log_compress { math::ln(e + 1e-10) } else { e };
            }
            frames.push(bands);
        }
        Ok(frames)
    }

    /// Embeds a waveform: per-band mean and standard deviation of the
    /// filterbank energies over frames, concatenated and unit-normalized.
    pub fn embed(&self, waveform: &Waveform) -> Result<EmbeddingVector, MetricsError> {
        let frames = self.band_energies(&waveform.samples)?;
        let num_bands = self.spec.num_bands;
        let mut raw = Vec::with_capacity(2 * num_bands);
        for band in 0..num_bands {
            let series: Vec<f64> = frames.iter().map(|f| f[band]).collect();
            raw.push(math::mean(&series));
        }
        for band in 0..num_bands {
            let series: Vec<f64> = frames.iter().map(|f| f[band]).collect();
            raw.push(math::std_dev(&series));
        }
        Ok(EmbeddingVector::from_raw(raw))
    }
}
