//! Training loop: adaptive-moment updates with decoupled weight decay,
//! cosine learning-rate decay, and global gradient-norm clipping.
//!
//! Each step draws a fresh timestep and Gaussian noise per sample, builds
//! the bridged sample, and descends the bridge loss plus the weighted L1
//! consistency term. All stochasticity is derived from the config seed and
//! global sample indices, so runs are bit-reproducible for a fixed config.

use alloc::vec::Vec;
use core::fmt;

use crate::bridge::{self, BridgeError, LossBreakdown, PairedSample};
use crate::denoiser::{self, DenoiserConfig, DenoiserError, DenoiserParams, Gradients};
use crate::math;
use crate::rng::{derive_seed, SeedStream};
use crate::schedule::NoiseSchedule;
use crate::tensor::LatentTensor;

const SALT_DRAWS: u64 = 0x6472_6177;
const SALT_SHUFFLE: u64 = 0x7368_7566;
const SALT_VALIDATE: u64 = 0x7661_6c64;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    /// Dataset tensors disagree in shape.
    InconsistentShapes { sample_index: usize },
    /// Loss went non-finite; training aborts with the offending location.
    NonFiniteLoss { step: usize, sample_index: usize },
    Bridge(BridgeError),
    Denoiser(DenoiserError),
    BadConfig(&'static str),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDataset => write!(f, "training dataset is empty"),
            Self::InconsistentShapes { sample_index } => {
                write!(f, "sample {sample_index} has a different latent shape")
            }
            Self::NonFiniteLoss { step, sample_index } => {
                write!(f, "non-finite loss at step {step}, sample {sample_index}")
            }
            Self::Bridge(e) => e.fmt(f),
            Self::Denoiser(e) => e.fmt(f),
            Self::BadConfig(msg) => write!(f, "bad train config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<BridgeError> for TrainError {
    fn from(e: BridgeError) -> Self {
        Self::Bridge(e)
    }
}

impl From<DenoiserError> for TrainError {
    fn from(e: DenoiserError) -> Self {
        Self::Denoiser(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub num_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub lambda_z0: f64,
    pub seed: u64,
    pub guidance_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            num_epochs: 4,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            grad_clip_norm: 1.0,
            lambda_z0: 0.01,
            seed: 0,
            guidance_enabled: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1"));
        }
        if self.num_epochs == 0 {
            return Err(TrainError::BadConfig("num_epochs must be >= 1"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::BadConfig("base_lr must be finite and >= 0"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(TrainError::BadConfig("grad_clip_norm must be > 0"));
        }
        if self.lambda_z0 < 0.0 {
            return Err(TrainError::BadConfig("lambda_z0 must be >= 0"));
        }
        Ok(())
    }
}

/// One optimizer-step log record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub bridge_loss: f64,
    pub z0_l1: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: LossBreakdown,
}

/// Training result: final parameters plus the loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
}

/// Cosine decay from `base_lr` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    debug_assert!(total_steps > 0);
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + math::cos(phase))
}

/// Scales gradients so the global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &DenoiserParams, weight_decay: f64) -> Self {
        let m = params.tensors.iter().map(|t| alloc::vec![0.0; t.data.len()]).collect();
        let v = params.tensors.iter().map(|t| alloc::vec![0.0; t.data.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay, step_count: 0, m, v }
    }

    /// One update over a flat parameter/gradient pair with external state.
    #[allow(clippy::too_many_arguments)]
    pub fn step_flat(
        p: &mut [f64],
        g: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
        step_count: u64,
    ) {
        let bc1 = 1.0 - math::powf(beta1, step_count as f64);
        let bc2 = 1.0 - math::powf(beta2, step_count as f64);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (math::sqrt(v_hat) + epsilon) + weight_decay * p[i]);
        }
    }

    pub fn step(&mut self, params: &mut DenoiserParams, grads: &Gradients, lr: f64) {
        self.step_count += 1;
        for (idx, tensor) in params.tensors.iter_mut().enumerate() {
            Self::step_flat(
                &mut tensor.data,
                &grads.by_tensor[idx],
                &mut self.m[idx],
                &mut self.v[idx],
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                self.weight_decay,
                self.step_count,
            );
        }
    }
}

fn check_dataset(dataset: &[PairedSample]) -> Result<(usize, usize), TrainError> {
    let first = dataset.first().ok_or(TrainError::EmptyDataset)?;
    let shape = first.clean.shape();
    for (i, sample) in dataset.iter().enumerate() {
        if sample.clean.shape() != shape || sample.perturbation.shape() != shape {
            return Err(TrainError::InconsistentShapes { sample_index: i });
        }
    }
    Ok(shape)
}

/// Loss and parameter gradient for one sample at a drawn (t, eps).
fn sample_loss_and_grad(
    params: &DenoiserParams,
    sample: &PairedSample,
    t: usize,
    eps: &LatentTensor,
    lambda_z0: f64,
    use_guidance: bool,
    schedule: &NoiseSchedule,
) -> Result<(LossBreakdown, Gradients), TrainError> {
    let bridged = bridge::make_bridged_sample(&sample.clean, &sample.perturbation, t, eps, schedule)?;
    let guidance = if use_guidance { sample.guidance.as_ref() } else { None };
    let (eps_pred, trace) = denoiser::forward_traced(params, &bridged.z_t_d, t, guidance)?;
    let loss = bridge::total_loss(&eps_pred, &bridged, &sample.clean, lambda_z0, schedule)?;

    // d(total)/d(eps_pred): the MSE term contributes 2*(pred - target)/n;
    // the L1 term flows through z0_hat with factor -sqrt(1-a)/sqrt(a).
    let n = eps_pred.len() as f64;
    let a = schedule.alpha_bar(t);
    let l1_factor = -lambda_z0 * math::sqrt(1.0 - a) / math::sqrt(a) / n;
    let z0_hat = bridge::reconstruct_z0(&bridged.z_t_d, &eps_pred, &bridged.eps_a, t, schedule)?;
    let mut upstream = eps_pred.sub(&bridged.eps_eff).scale(2.0 / n);
    {
        let up = upstream.data_mut();
        let z0 = z0_hat.data();
        let zc = sample.clean.data();
        for i in 0..up.len() {
            let sign = (z0[i] - zc[i]).signum();
            up[i] += l1_factor * sign;
        }
    }
    let (grads, _) = denoiser::backward(params, &trace, &upstream)?;
    Ok((loss, grads))
}

/// Optimizes denoiser parameters over the paired dataset.
pub fn train(
    dataset: &[PairedSample],
    config: &TrainConfig,
    denoiser_config: &DenoiserConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_dataset(dataset)?;
    let mut params = denoiser::init_params(denoiser_config, config.seed)?;
    let mut optimizer = AdamW::new(&params, config.weight_decay);

    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.num_epochs;
    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(config.num_epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step_index = 0usize;
    let mut sample_counter = 0u64;

    for epoch in 0..config.num_epochs {
        let mut shuffle_rng = SeedStream::derived(config.seed, &[SALT_SHUFFLE, epoch as u64]);
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = LossBreakdown::zero(config.lambda_z0);
        let mut epoch_samples = 0usize;

        for batch in order.chunks(config.batch_size) {
            let lr = cosine_lr(step_index, total_steps, config.base_lr);
            let mut batch_grads = params.zeros_like_grads();
            let mut batch_loss = LossBreakdown::zero(config.lambda_z0);

            for &sample_index in batch {
                let sample = &dataset[sample_index];
                let mut draw =
                    SeedStream::derived(config.seed, &[SALT_DRAWS, sample_counter]);
                sample_counter += 1;
                let t = 1 + draw.below(schedule.num_steps());
                let eps = draw.normal_tensor(sample.clean.channels(), sample.clean.frames());
                let (loss, grads) = sample_loss_and_grad(
                    &params,
                    sample,
                    t,
                    &eps,
                    config.lambda_z0,
                    config.guidance_enabled,
                    schedule,
                )?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step: step_index, sample_index });
                }
                batch_grads.add_assign(&grads);
                batch_loss.bridge_loss += loss.bridge_loss;
                batch_loss.z0_l1 += loss.z0_l1;
                batch_loss.total += loss.total;
            }

            let inv = 1.0 / batch.len() as f64;
            batch_grads.scale(inv);
            batch_loss.bridge_loss *= inv;
            batch_loss.z0_l1 *= inv;
            batch_loss.total *= inv;
            if !batch_grads.all_finite() {
                return Err(TrainError::NonFiniteLoss { step: step_index, sample_index: batch[0] });
            }

            clip_gradients(&mut batch_grads, config.grad_clip_norm);
            optimizer.step(&mut params, &batch_grads, lr);

            steps.push(StepRecord {
                step: step_index,
                lr,
                bridge_loss: batch_loss.bridge_loss,
                z0_l1: batch_loss.z0_l1,
                total: batch_loss.total,
            });
            epoch_loss.bridge_loss += batch_loss.bridge_loss * batch.len() as f64;
            epoch_loss.z0_l1 += batch_loss.z0_l1 * batch.len() as f64;
            epoch_loss.total += batch_loss.total * batch.len() as f64;
            epoch_samples += batch.len();
            step_index += 1;
        }

        let inv = 1.0 / epoch_samples as f64;
        epochs.push(EpochSummary {
            epoch,
            mean_loss: LossBreakdown {
                bridge_loss: epoch_loss.bridge_loss * inv,
                z0_l1: epoch_loss.z0_l1 * inv,
                lambda_z0: config.lambda_z0,
                total: epoch_loss.total * inv,
            },
        });
    }

    Ok(TrainOutcome { params, steps, epochs })
}

/// Deterministic validation bridge loss: every sample is evaluated at fixed
/// quarter-points of the schedule with noise seeded per (sample, point),
/// independent of the model, so two models can be compared on identical
/// draws.
pub fn validation_bridge_loss(
    params: &DenoiserParams,
    dataset: &[PairedSample],
    use_guidance: bool,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64, TrainError> {
    check_dataset(dataset)?;
    let t_points = [
        (schedule.num_steps() / 4).max(1),
        (schedule.num_steps() / 2).max(1),
        (3 * schedule.num_steps() / 4).max(1),
    ];
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, sample) in dataset.iter().enumerate() {
        for (j, &t) in t_points.iter().enumerate() {
            let noise_seed = derive_seed(seed, &[SALT_VALIDATE, i as u64, j as u64]);
            let eps = SeedStream::new(noise_seed)
                .normal_tensor(sample.clean.channels(), sample.clean.frames());
            let bridged =
                bridge::make_bridged_sample(&sample.clean, &sample.perturbation, t, &eps, schedule)?;
            let guidance = if use_guidance { sample.guidance.as_ref() } else { None };
            let eps_pred = denoiser::forward(params, &bridged.z_t_d, t, guidance)?;
            acc += bridge::bridge_loss(&eps_pred, &bridged.eps_eff)?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn tiny_dataset(n: usize, channels: usize, frames: usize) -> Vec<PairedSample> {
        let mut rng = SeedStream::new(100);
        (0..n)
            .map(|i| {
                // Structured clean latents (smooth per-channel levels) so the
                // denoiser has something learnable to subtract.
                let levels: Vec<f64> = (0..channels).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let clean = LatentTensor::from_fn(channels, frames, |c, l| {
                    levels[c] + 0.05 * math::sin(l as f64)
                });
                let perturbation = rng.normal_tensor(channels, frames).scale(0.3);
                PairedSample {
                    utt_id: alloc::format!("utt{i}").to_string(),
                    clean,
                    perturbation,
                    guidance: None,
                }
            })
            .collect()
    }

    fn tiny_setup() -> (DenoiserConfig, NoiseSchedule) {
        let dcfg = DenoiserConfig::new(2, 4, 2, 8, false).unwrap();
        let schedule = NoiseSchedule::truncated_cosine(20, 50, 0.008, 0.999).unwrap();
        (dcfg, schedule)
    }

    #[test]
    fn cosine_lr_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.5), 0.5);
        assert!((cosine_lr(50, 100, 0.5) - 0.25).abs() < 1e-12);
        assert!(cosine_lr(100, 100, 0.5).abs() < 1e-15);
    }

    #[test]
    fn clip_identity_below_threshold() {
        let mut g = Gradients { by_tensor: vec![vec![0.3, 0.4]] };
        let before = g.clone();
        let norm = clip_gradients(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = Gradients { by_tensor: vec![vec![3.0, 4.0]] };
        clip_gradients(&mut g, 2.5);
        assert!((g.global_norm() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn clip_random_matches_independent_norm() {
        let mut rng = SeedStream::new(42);
        let mut g = Gradients {
            by_tensor: (0..3).map(|_| (0..17).map(|_| rng.standard_normal()).collect()).collect(),
        };
        let manual: f64 =
            g.by_tensor.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let reported = clip_gradients(&mut g, 0.5);
        assert!((manual - reported).abs() < 1e-12);
        assert!((g.global_norm() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn adamw_moves_toward_quadratic_minimum() {
        // Bowl f(p) = sum p_i^2 / 2 has gradient p; one step must move every
        // coordinate toward 0 (coordinates are larger than the step size).
        let mut p = vec![1.5, -2.0, 0.3, -0.05];
        let g = p.clone();
        let mut m = vec![0.0; 4];
        let mut v = vec![0.0; 4];
        AdamW::step_flat(&mut p, &g, &mut m, &mut v, 0.01, 0.9, 0.999, 1e-8, 0.0, 1);
        let start = [1.5f64, -2.0, 0.3, -0.05];
        for i in 0..4 {
            assert!(p[i].abs() < start[i].abs(), "i={i}");
            assert_eq!(p[i].signum(), start[i].signum());
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(3, 2, 8);
        let cfg = TrainConfig { base_lr: 0.0, num_epochs: 2, batch_size: 2, ..Default::default() };
        let outcome = train(&dataset, &cfg, &dcfg, &schedule).unwrap();
        let init = denoiser::init_params(&dcfg, cfg.seed).unwrap();
        assert_eq!(outcome.params, init);
    }

    #[test]
    fn same_seed_bit_identical_params() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(4, 2, 8);
        let cfg = TrainConfig { num_epochs: 2, batch_size: 3, ..Default::default() };
        let a = train(&dataset, &cfg, &dcfg, &schedule).unwrap();
        let b = train(&dataset, &cfg, &dcfg, &schedule).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn lambda_sensitivity_changes_checkpoint() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(3, 2, 8);
        let base = TrainConfig { num_epochs: 1, batch_size: 3, ..Default::default() };
        let with = train(&dataset, &TrainConfig { lambda_z0: 0.01, ..base }, &dcfg, &schedule)
            .unwrap();
        let without =
            train(&dataset, &TrainConfig { lambda_z0: 0.0, ..base }, &dcfg, &schedule).unwrap();
        assert_ne!(with.params, without.params);
    }

    #[test]
    fn single_sample_smoke_run_halves_loss() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(1, 2, 8);
        let cfg = TrainConfig {
            batch_size: 1,
            num_epochs: 200,
            base_lr: 3e-3,
            ..Default::default()
        };
        let outcome = train(&dataset, &cfg, &dcfg, &schedule).unwrap();
        let first = outcome.steps.first().unwrap().total;
        let last_mean = outcome.epochs.last().unwrap().mean_loss.total;
        assert!(
            last_mean < 0.5 * first,
            "loss did not halve: first={first} last={last_mean}"
        );
    }

    #[test]
    fn moving_average_loss_trend_is_mostly_nonincreasing() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(8, 2, 8);
        let cfg = TrainConfig {
            batch_size: 8,
            num_epochs: 200,
            base_lr: 1e-2,
            ..Default::default()
        };
        let outcome = train(&dataset, &cfg, &dcfg, &schedule).unwrap();
        let totals: Vec<f64> = outcome.steps.iter().map(|s| s.total).collect();
        let window = 20;
        let means: Vec<f64> = totals
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        // Fresh (t, eps) draws jitter each step; judge the trend against a
        // tolerance of 1% of the total drop.
        let drop = means[0] - means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(drop > 0.0, "loss did not decrease at all");
        let tol = 0.01 * drop;
        let mut nonincreasing = 0usize;
        for i in 1..means.len() {
            if means[i] <= means[i - 1] + tol {
                nonincreasing += 1;
            }
        }
        let frac = nonincreasing as f64 / (means.len() - 1) as f64;
        assert!(frac >= 0.8, "only {frac:.2} of windows non-increasing");
    }

    #[test]
    fn empty_dataset_rejected() {
        let (dcfg, schedule) = tiny_setup();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&[], &cfg, &dcfg, &schedule), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn validation_loss_is_model_comparable() {
        let (dcfg, schedule) = tiny_setup();
        let dataset = tiny_dataset(3, 2, 8);
        let params = denoiser::init_params(&dcfg, 1).unwrap();
        let a = validation_bridge_loss(&params, &dataset, false, &schedule, 5).unwrap();
        let b = validation_bridge_loss(&params, &dataset, false, &schedule, 5).unwrap();
        assert_eq!(a, b);
        let c = validation_bridge_loss(&params, &dataset, false, &schedule, 6).unwrap();
        assert_ne!(a, c);
    }
}
