//! Dataset generation and loading.
//!
//! `gen` synthesizes speakers and utterances, encodes them, applies the
//! configured latent-domain perturbation, and writes latents, residuals,
//! alignment stubs, and the four manifests (train, and enroll/dev/trial
//! over the held-out speakers). Train and test speaker sets are disjoint.

use std::path::{Path, PathBuf};

use vocalbridge_core::bridge::PairedSample;
use vocalbridge_core::codec::CodecSpec;
use vocalbridge_core::guidance::{self, AlignmentMap, GuidanceTrack};
use vocalbridge_core::rng::derive_seed;
use vocalbridge_core::synth::{self, PerturbationKind, SyntheticSpeaker};
use vocalbridge_core::tensor::LatentTensor;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::files::{atomic_write, read_latent_file, write_latent_file};
use crate::manifest::{write_dataset_manifest, DatasetRecord};

const SALT_UTTERANCE: u64 = 0x6765_6e75;
const SALT_PERTURB_UTT: u64 = 0x6765_6e70;
const SALT_PERTURB_SPK: u64 = 0x6765_6e73;

/// Everything `gen` wrote, for reporting and tests.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dir: PathBuf,
    pub train_manifest: PathBuf,
    pub enroll_manifest: PathBuf,
    pub dev_manifest: PathBuf,
    pub trial_manifest: PathBuf,
    pub num_train_speakers: usize,
    pub num_test_speakers: usize,
}

pub fn manifest_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join("train.tsv"),
        dir.join("enroll.tsv"),
        dir.join("dev.tsv"),
        dir.join("trial.tsv"),
    )
}

/// Perturbation seed policy: a fixed-direction perturbation is seeded per
/// speaker so all of a speaker's residuals are parallel; the other kinds
/// draw fresh noise per utterance.
fn perturbation_seed(kind: PerturbationKind, base: u64, spk: usize, utt: usize) -> u64 {
    match kind {
        PerturbationKind::FixedDirection => derive_seed(base, &[SALT_PERTURB_SPK, spk as u64]),
        _ => derive_seed(base, &[SALT_PERTURB_UTT, spk as u64, utt as u64]),
    }
}

pub fn build_dataset(config: &ExperimentConfig, dir: &Path) -> Result<GeneratedDataset> {
    let codec = config.build_codec()?;
    let ds = &config.dataset;
    let speakers = synth::gen_speakers(ds.num_speakers, config.seed, codec.sample_rate());
    let num_train = ((ds.num_speakers as f64 * ds.train_split).round() as usize)
        .clamp(1, ds.num_speakers - 1);
    let kind = PerturbationKind::parse(&ds.perturbation).expect("validated config");

    let mut train_records = Vec::new();
    let mut enroll_records = Vec::new();
    let mut dev_records = Vec::new();
    let mut trial_records = Vec::new();

    for (spk_idx, speaker) in speakers.iter().enumerate() {
        let spk_dir = dir.join(&speaker.speaker_id);
        for utt_idx in 0..ds.utts_per_speaker {
            let utt_id = format!("utt{utt_idx:03}");
            let utt_seed = derive_seed(config.seed, &[SALT_UTTERANCE, spk_idx as u64, utt_idx as u64]);
            let (wave, alignment) = synth::gen_utterance_with_alignment(
                speaker,
                ds.duration_secs,
                codec.sample_rate(),
                utt_seed,
            );
            let z_c = codec.encode(&wave).map_err(|e| CliError::Numeric(e.to_string()))?;
            let pert_seed = perturbation_seed(kind, config.seed, spk_idx, utt_idx);
            let spec = synth::PerturbationSpec { kind, strength: ds.strength, seed: pert_seed };
            let (z_a, _) = synth::protect(&z_c, &spec)
                .map_err(|e| CliError::Numeric(e.to_string()))?;

            let clean_path = spk_dir.join(format!("{utt_id}.clean.vblt"));
            let protected_path = spk_dir.join(format!("{utt_id}.prot.vblt"));
            let residual_path = spk_dir.join(format!("{utt_id}.resid.vblt"));
            let alignment_path = spk_dir.join(format!("{utt_id}.align.tsv"));
            write_latent_file(&clean_path, &z_c)?;
            write_latent_file(&protected_path, &z_a)?;
            // The stored residual is the difference of the stored (f32)
            // latents, so reloading and subtracting reproduces it exactly.
            let stored_clean = read_latent_file(&clean_path)?;
            let stored_protected = read_latent_file(&protected_path)?;
            write_latent_file(&residual_path, &stored_protected.sub(&stored_clean))?;
            atomic_write(&alignment_path, alignment.to_text().as_bytes())?;

            let record = DatasetRecord {
                speaker_id: speaker.speaker_id.clone(),
                utt_id: utt_id.clone(),
                clean_path,
                protected_path,
                alignment_path,
            };
            if spk_idx < num_train {
                train_records.push(record);
            } else if utt_idx < ds.enroll_per_speaker {
                enroll_records.push(record);
            } else if utt_idx < ds.enroll_per_speaker + ds.dev_per_speaker {
                dev_records.push(record);
            } else {
                trial_records.push(record);
            }
        }
    }

    let (train_manifest, enroll_manifest, dev_manifest, trial_manifest) = manifest_paths(dir);
    write_dataset_manifest(&train_manifest, &train_records)?;
    write_dataset_manifest(&enroll_manifest, &enroll_records)?;
    write_dataset_manifest(&dev_manifest, &dev_records)?;
    write_dataset_manifest(&trial_manifest, &trial_records)?;

    Ok(GeneratedDataset {
        dir: dir.to_path_buf(),
        train_manifest,
        enroll_manifest,
        dev_manifest,
        trial_manifest,
        num_train_speakers: num_train,
        num_test_speakers: ds.num_speakers - num_train,
    })
}

/// Builds the guidance track for a latent from its alignment file and the
/// decoded waveform's per-frame log-RMS energy.
pub fn guidance_for(
    codec: &CodecSpec,
    latent: &LatentTensor,
    alignment_path: &Path,
    gamma: f64,
) -> Result<GuidanceTrack> {
    let text = std::fs::read_to_string(alignment_path)
        .map_err(|e| CliError::from_io(alignment_path, e))?;
    let alignment = AlignmentMap::parse(&text).map_err(|e| CliError::Format {
        path: alignment_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let frames = latent.frames();
    let raster = guidance::rasterize(&alignment, frames, codec.frame_rate());
    let wave = codec.decode(latent).map_err(|e| CliError::Numeric(e.to_string()))?;
    let prior = guidance::log_rms_prior(&wave.samples, codec.frame_size(), frames);
    Ok(GuidanceTrack { values: guidance::build_guidance(&raster, &prior), gamma })
}

/// Loads paired samples for training or validation. The perturbation
/// residual is recomputed as protected minus clean, matching the stored
/// residual files bit for bit. Guidance tracks are built from the clean
/// latent (the training-side convention) when requested.
pub fn load_paired_samples(
    records: &[DatasetRecord],
    codec: &CodecSpec,
    with_guidance: bool,
    gamma: f64,
) -> Result<Vec<PairedSample>> {
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let clean = read_latent_file(&r.clean_path)?;
        let protected = read_latent_file(&r.protected_path)?;
        clean.same_shape(&protected).map_err(|e| CliError::Format {
            path: r.protected_path.clone(),
            message: e.to_string(),
        })?;
        let perturbation = protected.sub(&clean);
        let guidance = if with_guidance {
            Some(guidance_for(codec, &clean, &r.alignment_path, gamma)?)
        } else {
            None
        };
        samples.push(PairedSample {
            utt_id: format!("{}/{}", r.speaker_id, r.utt_id),
            clean,
            perturbation,
            guidance,
        });
    }
    Ok(samples)
}

/// Synthetic speakers for self-checks, matching the dataset generator.
pub fn speakers_for(config: &ExperimentConfig) -> Vec<SyntheticSpeaker> {
    synth::gen_speakers(config.dataset.num_speakers, config.seed, config.codec.sample_rate)
}
