//! Experiment configuration: one TOML file validated up front, unknown
//! keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vocalbridge_core::codec::CodecSpec;
use vocalbridge_core::denoiser::DenoiserConfig;
use vocalbridge_core::purifier::PurifyConfig;
use vocalbridge_core::schedule::NoiseSchedule;
use vocalbridge_core::synth::{PerturbationKind, PerturbationSpec};
use vocalbridge_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub num_steps: usize,
    /// Notional cosine length the schedule is truncated from; equal to
    /// `num_steps` for a plain cosine ending near zero.
    pub span: usize,
    pub offset: f64,
    pub max_beta: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { num_steps: 200, span: 500, offset: 0.008, max_beta: 0.999 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub frame_size: usize,
    pub kept_coefficients: usize,
    pub sample_rate: u32,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { frame_size: 64, kept_coefficients: 32, sample_rate: 16_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub base_width: usize,
    pub num_levels: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self { base_width: 16, num_levels: 3, time_embed_dim: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub num_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub lambda_z0: f64,
    pub guidance_enabled: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 16,
            num_epochs: 6,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            grad_clip_norm: 1.0,
            lambda_z0: 0.01,
            guidance_enabled: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PurifySection {
    pub num_inference_steps: usize,
    /// 0 means "use the schedule's terminal step".
    pub terminal_step: usize,
}

impl Default for PurifySection {
    fn default() -> Self {
        Self { num_inference_steps: 10, terminal_step: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub gamma: f64,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        Self { gamma: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Where `gen` writes and the other commands read.
    pub dir: PathBuf,
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub duration_secs: f64,
    pub perturbation: String,
    pub strength: f64,
    /// Fraction of speakers assigned to the training split.
    pub train_split: f64,
    pub enroll_per_speaker: usize,
    pub dev_per_speaker: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            num_speakers: 20,
            utts_per_speaker: 20,
            duration_secs: 0.6,
            perturbation: "bandnoise".to_string(),
            strength: 0.5,
            train_split: 0.5,
            enroll_per_speaker: 5,
            dev_per_speaker: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub codec: CodecSection,
    pub denoiser: DenoiserSection,
    pub train: TrainSection,
    pub purify: PurifySection,
    pub guidance: GuidanceSection,
    pub dataset: DatasetSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let s = &self.schedule;
        if s.num_steps == 0 {
            return Err("schedule.num_steps must be >= 1".into());
        }
        if s.span < s.num_steps {
            return Err("schedule.span must be >= schedule.num_steps".into());
        }
        if !(s.offset >= 0.0 && s.offset < 1.0) {
            return Err("schedule.offset must be in [0, 1)".into());
        }
        if !(s.max_beta > 0.0 && s.max_beta < 1.0) {
            return Err("schedule.max_beta must be in (0, 1)".into());
        }
        let c = &self.codec;
        if c.frame_size == 0 || c.kept_coefficients == 0 || c.kept_coefficients > c.frame_size {
            return Err("codec requires 1 <= kept_coefficients <= frame_size".into());
        }
        if c.sample_rate == 0 {
            return Err("codec.sample_rate must be positive".into());
        }
        let d = &self.denoiser;
        if d.base_width == 0 || d.num_levels == 0 {
            return Err("denoiser.base_width and num_levels must be >= 1".into());
        }
        if d.time_embed_dim < 2 || d.time_embed_dim % 2 != 0 {
            return Err("denoiser.time_embed_dim must be even and >= 2".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.num_epochs == 0 {
            return Err("train.batch_size and num_epochs must be >= 1".into());
        }
        if t.base_lr < 0.0 || t.weight_decay < 0.0 || t.lambda_z0 < 0.0 {
            return Err("train rates must be non-negative".into());
        }
        if t.grad_clip_norm <= 0.0 {
            return Err("train.grad_clip_norm must be > 0".into());
        }
        let p = &self.purify;
        let terminal = self.terminal_step();
        if p.num_inference_steps == 0 {
            return Err("purify.num_inference_steps must be >= 1".into());
        }
        if terminal > s.num_steps {
            return Err("purify.terminal_step must be <= schedule.num_steps".into());
        }
        if p.num_inference_steps > terminal {
            return Err("purify.num_inference_steps must be <= terminal_step".into());
        }
        if !(self.guidance.gamma >= 0.0) {
            return Err("guidance.gamma must be >= 0".into());
        }
        let ds = &self.dataset;
        if ds.num_speakers < 2 {
            return Err("dataset.num_speakers must be >= 2".into());
        }
        if ds.utts_per_speaker == 0 {
            return Err("dataset.utts_per_speaker must be >= 1".into());
        }
        if !(ds.duration_secs > 0.0) {
            return Err("dataset.duration_secs must be > 0".into());
        }
        if PerturbationKind::parse(&ds.perturbation).is_none() {
            return Err(format!(
                "dataset.perturbation must be one of bandnoise, fixed-direction, sinusoidal-comb (got {:?})",
                ds.perturbation
            ));
        }
        if !(ds.strength > 0.0) {
            return Err("dataset.strength must be > 0".into());
        }
        if !(ds.train_split > 0.0 && ds.train_split < 1.0) {
            return Err("dataset.train_split must be in (0, 1)".into());
        }
        if ds.enroll_per_speaker == 0 {
            return Err("dataset.enroll_per_speaker must be >= 1".into());
        }
        if ds.enroll_per_speaker + ds.dev_per_speaker >= ds.utts_per_speaker {
            return Err("enroll + dev utterances must leave room for trial utterances".into());
        }
        Ok(())
    }

    /// Effective purification terminal step (0 in the file means "schedule T").
    pub fn terminal_step(&self) -> usize {
        if self.purify.terminal_step == 0 {
            self.schedule.num_steps
        } else {
            self.purify.terminal_step
        }
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::truncated_cosine(
            self.schedule.num_steps,
            self.schedule.span,
            self.schedule.offset,
            self.schedule.max_beta,
        )
        .map_err(|e| CliError::Numeric(e.to_string()))
    }

    pub fn build_codec(&self) -> Result<CodecSpec> {
        CodecSpec::new(self.codec.frame_size, self.codec.kept_coefficients, self.codec.sample_rate)
            .map_err(|e| CliError::Numeric(e.to_string()))
    }

    pub fn build_denoiser_config(&self, guidance_enabled: bool) -> Result<DenoiserConfig> {
        let mut config = DenoiserConfig::new(
            self.codec.kept_coefficients,
            self.denoiser.base_width,
            self.denoiser.num_levels,
            self.denoiser.time_embed_dim,
            guidance_enabled,
        )
        .map_err(|e| CliError::Numeric(e.to_string()))?;
        config.guidance_gamma_milli = (self.guidance.gamma * 1000.0).round() as u32;
        Ok(config)
    }

    pub fn build_train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            num_epochs: self.train.num_epochs,
            base_lr: self.train.base_lr,
            weight_decay: self.train.weight_decay,
            grad_clip_norm: self.train.grad_clip_norm,
            lambda_z0: self.train.lambda_z0,
            seed: self.seed,
            guidance_enabled: self.train.guidance_enabled,
        }
    }

    pub fn build_purify_config(&self) -> PurifyConfig {
        PurifyConfig {
            num_inference_steps: self.purify.num_inference_steps,
            terminal_step: self.terminal_step(),
            seed: self.seed,
        }
    }

    pub fn build_perturbation_spec(&self, seed: u64) -> PerturbationSpec {
        PerturbationSpec {
            kind: PerturbationKind::parse(&self.dataset.perturbation)
                .expect("validated at load time"),
            strength: self.dataset.strength,
            seed,
        }
    }

    /// Dataset directory resolved against the config file's directory when
    /// relative.
    pub fn dataset_dir(&self, config_path: &Path) -> PathBuf {
        if self.dataset.dir.is_absolute() {
            self.dataset.dir.clone()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(&self.dataset.dir)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let config = ExperimentConfig::default();
        assert!(config.validate().is_ok());
        assert_eq!(config.terminal_step(), 200);
    }

    #[test]
    fn empty_file_gives_defaults() {
        let config: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<ExperimentConfig>("unknown_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown"), "{err}");
        let err =
            toml::from_str::<ExperimentConfig>("[schedule]\nnum_steps = 5\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("bogus") || err.to_string().contains("unknown"));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut config = ExperimentConfig::default();
        config.purify.num_inference_steps = 10_000;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.dataset.perturbation = "mystery".into();
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.dataset.enroll_per_speaker = 15;
        config.dataset.dev_per_speaker = 5;
        assert!(config.validate().is_err());
    }

    #[test]
    fn load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let mut config = ExperimentConfig::default();
        config.seed = 7;
        config.train.num_epochs = 2;
        std::fs::write(&path, toml::to_string(&config).unwrap()).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn malformed_config_is_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "seed = \"not a number\"").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
