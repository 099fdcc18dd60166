//! Full-network finite-difference validation of the hand-written backward
//! pass, over every parameter of small configurations.

use vocalbridge_core::denoiser::{
    self, backward, forward, forward_traced, DenoiserConfig, DenoiserParams,
};
use vocalbridge_core::guidance::GuidanceTrack;
use vocalbridge_core::rng::SeedStream;
use vocalbridge_core::tensor::LatentTensor;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-4;

/// Scalar probe loss: sum of (upstream .* output).
fn probe_loss(
    params: &DenoiserParams,
    z: &LatentTensor,
    t: usize,
    guidance: Option<&GuidanceTrack>,
    upstream: &LatentTensor,
) -> f64 {
    let y = forward(params, z, t, guidance).unwrap();
    y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

fn max_relative_error(
    config: &DenoiserConfig,
    frames: usize,
    t: usize,
    with_guidance_track: bool,
    seed: u64,
) -> f64 {
    let params = denoiser::init_params(config, seed).unwrap();
    let mut rng = SeedStream::new(seed ^ 0xfd);
    let z = rng.normal_tensor(config.latent_channels, frames);
    let track = with_guidance_track.then(|| GuidanceTrack {
        values: (0..frames).map(|_| rng.uniform_in(-0.9, 0.9)).collect(),
        gamma: 0.1,
    });
    let upstream = rng.normal_tensor(config.latent_channels, frames);

    let (_, trace) = forward_traced(&params, &z, t, track.as_ref()).unwrap();
    let (grads, _) = backward(&params, &trace, &upstream).unwrap();

    let mut worst = 0.0f64;
    for tensor_idx in 0..params.tensors.len() {
        for value_idx in 0..params.tensors[tensor_idx].data.len() {
            let mut plus = params.clone();
            plus.tensors[tensor_idx].data[value_idx] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors[tensor_idx].data[value_idx] -= FD_STEP;
            let fd = (probe_loss(&plus, &z, t, track.as_ref(), &upstream)
                - probe_loss(&minus, &z, t, track.as_ref(), &upstream))
                / (2.0 * FD_STEP);
            let ad = grads.by_tensor[tensor_idx][value_idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(DENOM_FLOOR);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_two_level() {
    let config = DenoiserConfig::new(2, 4, 2, 8, false).unwrap();
    assert!(denoiser::expected_param_count(&config) <= 5000);
    let worst = max_relative_error(&config, 8, 7, false, 11);
    assert!(worst < REL_TOL, "max relative error {worst:e}");
}

#[test]
fn gradients_match_finite_differences_single_level() {
    let config = DenoiserConfig::new(3, 4, 1, 8, false).unwrap();
    let worst = max_relative_error(&config, 6, 3, false, 12);
    assert!(worst < REL_TOL, "max relative error {worst:e}");
}

#[test]
fn gradients_match_finite_differences_with_guidance() {
    let config = DenoiserConfig::new(2, 4, 2, 8, true).unwrap();
    let worst = max_relative_error(&config, 8, 15, true, 13);
    assert!(worst < REL_TOL, "max relative error {worst:e}");
}

#[test]
fn gradients_match_on_padded_frames() {
    // 7 frames with two levels forces internal padding to 8.
    let config = DenoiserConfig::new(2, 4, 2, 8, false).unwrap();
    let worst = max_relative_error(&config, 7, 5, false, 14);
    assert!(worst < REL_TOL, "max relative error {worst:e}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let config = DenoiserConfig::new(2, 4, 2, 8, false).unwrap();
    let params = denoiser::init_params(&config, 21).unwrap();
    let mut rng = SeedStream::new(22);
    let z = rng.normal_tensor(2, 8);
    let upstream = rng.normal_tensor(2, 8);
    let (_, trace) = forward_traced(&params, &z, 4, None).unwrap();
    let (_, g_input) = backward(&params, &trace, &upstream).unwrap();
    for idx in 0..z.len() {
        let mut zp = z.clone();
        zp.data_mut()[idx] += FD_STEP;
        let mut zm = z.clone();
        zm.data_mut()[idx] -= FD_STEP;
        let fd = (probe_loss(&params, &zp, 4, None, &upstream)
            - probe_loss(&params, &zm, 4, None, &upstream))
            / (2.0 * FD_STEP);
        let ad = g_input.data()[idx];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(DENOM_FLOOR);
        assert!(rel < REL_TOL, "input idx {idx}: {ad} vs {fd}");
    }
}
