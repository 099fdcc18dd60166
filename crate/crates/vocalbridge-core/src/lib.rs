#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]

//! Latent diffusion-bridge purification primitives.
//!
//! This crate holds the algorithmic core of VocalBridge: cosine noise
//! schedules with bridge scaling coefficients, the bridged forward process
//! and its training losses, a FiLM/time-conditioned 1D U-Net denoiser with
//! hand-written reverse-mode gradients, deterministic DDIM purification,
//! speaker-verification scoring (EER calibration and the authentication
//! restoration rate), and a synthetic speaker/perturbation generator for
//! desk-scale experiments.
//!
//! Everything here is pure computation over in-memory tensors; file formats,
//! manifests, and the command-line pipelines live in the companion
//! `vocalbridge` crate. The crate is `no_std`-compatible (with `alloc`).

extern crate alloc;

pub mod bridge;
pub mod codec;
pub mod denoiser;
pub mod guidance;
pub mod math;
pub mod metrics;
pub mod purifier;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use bridge::{BridgedSample, LossBreakdown, PairedSample};
pub use codec::{CodecSpec, Waveform};
pub use denoiser::{DenoiserConfig, DenoiserParams, NoisePredictor};
pub use guidance::{AlignmentMap, GuidanceTrack};
pub use metrics::{EerResult, EmbedderSpec, EmbeddingVector, SpeakerCentroid, TrialRecord};
pub use purifier::PurifyConfig;
pub use schedule::NoiseSchedule;
pub use synth::{PerturbationKind, PerturbationSpec, SyntheticSpeaker};
pub use tensor::LatentTensor;
pub use trainer::{TrainConfig, TrainOutcome};
