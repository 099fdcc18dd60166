//! Synthetic speakers, utterances, and protection-perturbation surrogates.
//!
//! Speakers are defined by a fixed stack of spectral partials plus a pitch
//! range; utterances are segmented harmonic signals with per-segment
//! amplitude and pitch, an overall envelope, and a low broadband noise
//! floor. The segment structure doubles as the ground-truth phoneme
//! alignment. Perturbations are applied in the latent domain at a fixed
//! relative L2 ratio.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::guidance::{AlignedSegment, AlignmentMap};
use crate::math;
use crate::rng::SeedStream;
use crate::tensor::LatentTensor;
use crate::codec::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthError {
    /// Perturbation strength must be positive.
    BadStrength,
    /// A zero clean latent cannot carry a relative-norm perturbation.
    SilentLatent,
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadStrength => write!(f, "perturbation strength must be > 0"),
            Self::SilentLatent => write!(f, "clean latent has zero norm"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

/// A synthetic speaker: fixed partials (frequency, amplitude) plus a pitch
/// range for the per-utterance voiced component.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub speaker_id: String,
    pub harmonic_profile: Vec<(f64, f64)>,
    pub f0_range: (f64, f64),
}

/// Deterministically generates `count` speakers with partials spread over
/// the codec passband. Amplitudes are normalized to sum to at most 1.
pub fn gen_speakers(count: usize, seed: u64, sample_rate: u32) -> Vec<SyntheticSpeaker> {
    let nyquist = sample_rate as f64 / 2.0;
    let f_hi = (nyquist * 0.45).min(3600.0);
    (0..count)
        .map(|i| {
            let mut rng = SeedStream::derived(seed, &[0x7370_6b72, i as u64]);
            let num_partials = 4 + rng.below(3);
            let mut partials: Vec<(f64, f64)> = (0..num_partials)
                .map(|_| (rng.uniform_in(200.0, f_hi), rng.uniform_in(0.4, 1.0)))
                .collect();
            let total: f64 = partials.iter().map(|p| p.1).sum();
            for p in &mut partials {
                p.1 /= total * 1.25;
            }
            let f0_lo = rng.uniform_in(90.0, 200.0);
            SyntheticSpeaker {
                speaker_id: format!("spk{i:03}"),
                harmonic_profile: partials,
                f0_range: (f0_lo, f0_lo * 1.3),
            }
        })
        .collect()
}

/// Generates an utterance and the segment structure it was built from.
///
/// The signal is the speaker's partial stack, amplitude-modulated per
/// segment, plus a pitched three-harmonic component whose f0 jumps per
/// segment, a raised-cosine fade at both ends, and a low noise floor.
pub fn gen_utterance_with_alignment(
    speaker: &SyntheticSpeaker,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> (Waveform, AlignmentMap) {
    let mut rng = SeedStream::derived(seed, &[0x7574_7472]);
    let num_samples = (duration_secs * sample_rate as f64) as usize;
    let num_segments = 2 + rng.below(3);

    // Random segment boundaries; each segment gets a pseudo-phoneme id, an
    // amplitude factor, and an f0 within the speaker's range.
    let mut cuts: Vec<f64> = (0..num_segments - 1).map(|_| rng.uniform()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut bounds = Vec::with_capacity(num_segments + 1);
    bounds.push(0.0);
    bounds.extend(cuts.iter().map(|c| c * duration_secs));
    bounds.push(duration_secs);

    let mut segments = Vec::with_capacity(num_segments);
    let mut seg_params = Vec::with_capacity(num_segments);
    for s in 0..num_segments {
        let phoneme_id = 1 + rng.below(24) as u32;
        let amp = rng.uniform_in(0.45, 1.0);
        let f0 = rng.uniform_in(speaker.f0_range.0, speaker.f0_range.1);
        segments.push(AlignedSegment { start: bounds[s], end: bounds[s + 1], phoneme_id });
        seg_params.push((amp, f0));
    }
    let alignment = AlignmentMap::new(segments).expect("segments are ordered by construction");

    let phase_seed: Vec<f64> =
        (0..speaker.harmonic_profile.len()).map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
    let voiced_phase = rng.uniform_in(0.0, 2.0 * PI);
    let fade = (0.02 * sample_rate as f64) as usize;

    let mut samples = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let t = i as f64 / sample_rate as f64;
        let seg_idx = alignment
            .segments()
            .iter()
            .position(|s| t >= s.start && t < s.end)
            .unwrap_or(seg_params.len() - 1);
        let (amp, f0) = seg_params[seg_idx];

        let mut v = 0.0;
        for (p, &(freq, a)) in speaker.harmonic_profile.iter().enumerate() {
            v += a * math::sin(2.0 * PI * freq * t + phase_seed[p]);
        }
        // Pitched component: three harmonics of the segment f0.
        for h in 1..=3u32 {
            v += 0.05 * math::sin(2.0 * PI * f0 * h as f64 * t + voiced_phase);
        }
        v *= amp;
        v += 0.01 * rng.standard_normal();

        // Raised-cosine fade in/out.
        let env = if i < fade {
            0.5 - 0.5 * math::cos(PI * i as f64 / fade as f64)
        } else if i + fade > num_samples {
            let k = num_samples - i;
            0.5 - 0.5 * math::cos(PI * k as f64 / fade as f64)
        } else {
            1.0
        };
        samples.push((v * env).clamp(-1.0, 1.0));
    }
    (Waveform { sample_rate, samples }, alignment)
}

/// Convenience wrapper when the alignment is not needed.
pub fn gen_utterance(
    speaker: &SyntheticSpeaker,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Waveform {
    gen_utterance_with_alignment(speaker, duration_secs, sample_rate, seed).0
}

/// Perturbation families standing in for real protection tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// White noise confined to the upper latent channels.
    BandNoise,
    /// A fixed random direction, reused for every utterance sharing a seed
    /// (one seed per speaker makes per-speaker perturbations parallel).
    FixedDirection,
    /// Sinusoids across frames with per-channel frequency and phase.
    SinusoidalComb,
}

impl PerturbationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::BandNoise => "bandnoise",
            Self::FixedDirection => "fixed-direction",
            Self::SinusoidalComb => "sinusoidal-comb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bandnoise" => Some(Self::BandNoise),
            "fixed-direction" => Some(Self::FixedDirection),
            "sinusoidal-comb" => Some(Self::SinusoidalComb),
            _ => None,
        }
    }
}

/// Latent-domain perturbation settings; `strength` is the target
/// `|eps_a| / |z_c|` ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub strength: f64,
    pub seed: u64,
}

/// Applies a perturbation to a clean latent, returning the protected latent
/// and the residual with `|eps_a| / |z_c|` equal to the requested strength.
pub fn protect(
    z_c: &LatentTensor,
    spec: &PerturbationSpec,
) -> Result<(LatentTensor, LatentTensor), SynthError> {
    if !(spec.strength > 0.0) {
        return Err(SynthError::BadStrength);
    }
    let clean_norm = z_c.l2_norm();
    if clean_norm == 0.0 {
        return Err(SynthError::SilentLatent);
    }
    let (channels, frames) = z_c.shape();
    let mut rng = SeedStream::derived(spec.seed, &[0x7065_7274]);
    let raw = match spec.kind {
        PerturbationKind::BandNoise => {
            let band_start = channels / 8;
            LatentTensor::from_fn(channels, frames, |c, _| {
                if c >= band_start {
                    rng.standard_normal()
                } else {
                    0.0
                }
            })
        }
        PerturbationKind::FixedDirection => rng.normal_tensor(channels, frames),
        PerturbationKind::SinusoidalComb => {
            let phases: Vec<f64> =
                (0..channels).map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
            LatentTensor::from_fn(channels, frames, |c, l| {
                let cycles = 2.0 + (c % 5) as f64;
                math::sin(2.0 * PI * cycles * l as f64 / frames as f64 + phases[c])
            })
        }
    };
    let raw_norm = raw.l2_norm();
    debug_assert!(raw_norm > 0.0);
    let eps_a = raw.scale(spec.strength * clean_norm / raw_norm);
    let z_a = z_c.add(&eps_a);
    Ok((z_a, eps_a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecSpec;

    #[test]
    fn speakers_respect_invariants() {
        let speakers = gen_speakers(10, 7, 16_000);
        assert_eq!(speakers.len(), 10);
        for s in &speakers {
            let amp_sum: f64 = s.harmonic_profile.iter().map(|p| p.1).sum();
            assert!(amp_sum <= 1.0, "{}", s.speaker_id);
            for &(f, _) in &s.harmonic_profile {
                assert!(f < 8000.0);
            }
            assert!(s.f0_range.0 < s.f0_range.1);
        }
        // Deterministic.
        assert_eq!(speakers, gen_speakers(10, 7, 16_000));
    }

    #[test]
    fn utterance_deterministic_and_bounded() {
        let speaker = &gen_speakers(1, 3, 16_000)[0];
        let a = gen_utterance(speaker, 0.5, 16_000, 11);
        let b = gen_utterance(speaker, 0.5, 16_000, 11);
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|&s| (-1.0..=1.0).contains(&s)));
        let c = gen_utterance(speaker, 0.5, 16_000, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn spectral_peaks_land_on_profile_frequencies() {
        let speaker = SyntheticSpeaker {
            speaker_id: "test".into(),
            harmonic_profile: alloc::vec![(500.0, 0.5), (1500.0, 0.4)],
            f0_range: (100.0, 130.0),
        };
        let wave = gen_utterance(&speaker, 1.0, 16_000, 5);
        // Plain DFT magnitude over the middle of the utterance.
        let n = 8192usize;
        let start = 4000;
        let mut mags = Vec::with_capacity(n / 2);
        for bin in 0..n / 2 {
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..n {
                let angle = 2.0 * PI * bin as f64 * i as f64 / n as f64;
                re += wave.samples[start + i] * math::cos(angle);
                im += wave.samples[start + i] * math::sin(angle);
            }
            mags.push(re * re + im * im);
        }
        let bin_hz = 16_000.0 / n as f64;
        for &(freq, _) in &speaker.harmonic_profile {
            let bin = (freq / bin_hz).round() as usize;
            let window = &mags[bin.saturating_sub(2)..(bin + 3).min(mags.len())];
            let local_peak = window.iter().cloned().fold(0.0, f64::max);
            // The profile frequency must dominate its neighborhood: compare
            // against the median-scale background two hundred bins away.
            let background = mags[bin + 200];
            assert!(local_peak > 10.0 * background, "freq {freq}");
        }
    }

    #[test]
    fn alignment_covers_duration() {
        let speaker = &gen_speakers(1, 9, 16_000)[0];
        let (_, alignment) = gen_utterance_with_alignment(speaker, 0.7, 16_000, 21);
        assert!(!alignment.is_empty());
        assert!((alignment.duration() - 0.7).abs() < 1e-9);
        assert!(alignment.segments()[0].start == 0.0);
    }

    #[test]
    fn protect_ratio_is_exact() {
        let speaker = &gen_speakers(1, 1, 16_000)[0];
        let wave = gen_utterance(speaker, 0.3, 16_000, 2);
        let codec = CodecSpec::default_spec();
        let z_c = codec.encode(&wave).unwrap();
        for kind in [
            PerturbationKind::BandNoise,
            PerturbationKind::FixedDirection,
            PerturbationKind::SinusoidalComb,
        ] {
            let spec = PerturbationSpec { kind, strength: 0.5, seed: 4 };
            let (z_a, eps_a) = protect(&z_c, &spec).unwrap();
            let ratio = eps_a.l2_norm() / z_c.l2_norm();
            assert!((ratio - 0.5).abs() < 1e-6, "{kind:?}");
            assert!(z_a.sub(&eps_a).max_abs_diff(&z_c) < 1e-12);
        }
    }

    #[test]
    fn small_strength_stays_close_to_clean() {
        let z_c = LatentTensor::from_fn(4, 8, |c, l| (c + l) as f64 * 0.1 + 0.05);
        let spec =
            PerturbationSpec { kind: PerturbationKind::BandNoise, strength: 1e-9, seed: 1 };
        let (z_a, _) = protect(&z_c, &spec).unwrap();
        assert!(z_a.max_abs_diff(&z_c) < 1e-8);
    }

    #[test]
    fn fixed_direction_is_parallel_across_utterances() {
        let mut rng = SeedStream::new(8);
        let z1 = rng.normal_tensor(4, 10);
        let z2 = rng.normal_tensor(4, 10);
        let spec =
            PerturbationSpec { kind: PerturbationKind::FixedDirection, strength: 0.5, seed: 77 };
        let (_, e1) = protect(&z1, &spec).unwrap();
        let (_, e2) = protect(&z2, &spec).unwrap();
        let cos = crate::math::dot(e1.data(), e2.data()) / (e1.l2_norm() * e2.l2_norm());
        assert!((cos - 1.0).abs() < 1e-9, "cos={cos}");
    }

    #[test]
    fn bandnoise_leaves_low_channels_untouched() {
        let z_c = LatentTensor::from_fn(16, 6, |_, _| 1.0);
        let spec = PerturbationSpec { kind: PerturbationKind::BandNoise, strength: 0.3, seed: 5 };
        let (_, eps_a) = protect(&z_c, &spec).unwrap();
        for c in 0..2 {
            assert!(eps_a.row(c).iter().all(|&v| v == 0.0), "channel {c}");
        }
        assert!(eps_a.row(8).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn protect_rejects_degenerate_inputs() {
        let zero = LatentTensor::zeros(2, 4);
        let spec = PerturbationSpec { kind: PerturbationKind::BandNoise, strength: 0.5, seed: 0 };
        assert_eq!(protect(&zero, &spec).unwrap_err(), SynthError::SilentLatent);
        let z = LatentTensor::from_fn(2, 4, |_, _| 1.0);
        let bad = PerturbationSpec { strength: 0.0, ..spec };
        assert_eq!(protect(&z, &bad).unwrap_err(), SynthError::BadStrength);
    }

    #[test]
    fn kind_string_round_trip() {
        for kind in [
            PerturbationKind::BandNoise,
            PerturbationKind::FixedDirection,
            PerturbationKind::SinusoidalComb,
        ] {
            assert_eq!(PerturbationKind::parse(kind.as_str()), Some(kind));
        }
        assert_eq!(PerturbationKind::parse("unknown"), None);
    }
}
