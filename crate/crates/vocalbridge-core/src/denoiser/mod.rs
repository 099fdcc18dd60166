//! Time-conditioned 1D U-Net predicting the effective noise.
//!
//! Topology: a stem convolution, `num_levels` encoder levels of two residual
//! TDNN blocks each (dilated kernel-3 convolutions, dilations 1 and 2) with
//! stride-2 downsampling between levels, then a mirrored decoder with
//! nearest-neighbor upsampling, skip concatenation, and FiLM modulation from
//! a sinusoidal time embedding at the bottleneck and every decoder stage.
//! An optional guidance channel is RMS-matched to the input latent and
//! concatenated before the stem; when absent, an all-zero channel takes its
//! place so conditioned and unconditioned calls share one code path.
//!
//! The backward pass is written by hand and returns exact gradients for
//! every parameter, which the trainer and the finite-difference checks rely
//! on. Parameters live in a flat, named, deterministically ordered list;
//! that order is the checkpoint wire order.

pub mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::guidance::{self, GuidanceTrack};
use crate::math;
use crate::rng::SeedStream;
use crate::tensor::{LatentTensor, ShapeMismatch};
use layers::*;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserError {
    BadConfig(&'static str),
    Shape(ShapeMismatch),
    /// Guidance track frames must match the latent frames.
    GuidanceLength { expected: usize, got: usize },
    NonFiniteInput,
    /// Parameter list does not match the configuration's layout.
    ParamLayout,
}

impl fmt::Display for DenoiserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadConfig(msg) => write!(f, "bad denoiser config: {msg}"),
            Self::Shape(e) => e.fmt(f),
            Self::GuidanceLength { expected, got } => {
                write!(f, "guidance has {got} frames, latent has {expected}")
            }
            Self::NonFiniteInput => write!(f, "non-finite value in denoiser input"),
            Self::ParamLayout => write!(f, "parameter list does not match the config"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DenoiserError {}

impl From<ShapeMismatch> for DenoiserError {
    fn from(e: ShapeMismatch) -> Self {
        Self::Shape(e)
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_width: usize,
    pub num_levels: usize,
    pub time_embed_dim: usize,
    pub guidance_enabled: bool,
    /// RMS ratio applied when matching a guidance track to the input latent.
    pub guidance_gamma_milli: u32,
}

impl DenoiserConfig {
    pub fn new(
        latent_channels: usize,
        base_width: usize,
        num_levels: usize,
        time_embed_dim: usize,
        guidance_enabled: bool,
    ) -> Result<Self, DenoiserError> {
        let cfg = Self {
            latent_channels,
            base_width,
            num_levels,
            time_embed_dim,
            guidance_enabled,
            guidance_gamma_milli: 100,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.latent_channels == 0 {
            return Err(DenoiserError::BadConfig("latent_channels must be >= 1"));
        }
        if self.base_width == 0 {
            return Err(DenoiserError::BadConfig("base_width must be >= 1"));
        }
        if self.num_levels == 0 {
            return Err(DenoiserError::BadConfig("num_levels must be >= 1"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(DenoiserError::BadConfig("time_embed_dim must be even and >= 2"));
        }
        Ok(())
    }

    /// Channels entering the stem: the latent plus one guidance channel.
    pub fn in_channels(&self) -> usize {
        self.latent_channels + usize::from(self.guidance_enabled)
    }

    /// Width of encoder level `i`.
    fn level_width(&self, i: usize) -> usize {
        self.base_width << i
    }

    /// Frame counts must be padded to a multiple of this.
    pub fn frame_multiple(&self) -> usize {
        1 << (self.num_levels - 1)
    }

    pub fn guidance_gamma(&self) -> f64 {
        self.guidance_gamma_milli as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    /// Fan-in scaled uniform init.
    Weight { fan_in: usize },
    /// Zero init.
    Zero,
    /// FiLM head: scale rows get fan-in init, shift rows start at zero.
    FilmWeight { fan_in: usize, channels: usize },
}

#[derive(Debug, Clone)]
struct ParamDef {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

impl ParamDef {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All learnable parameters, in a deterministic enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub tensors: Vec<NamedTensor>,
}

impl DenoiserParams {
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like_grads(&self) -> Gradients {
        Gradients { by_tensor: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }
}

/// Per-parameter gradients, aligned with `DenoiserParams::tensors`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub by_tensor: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.by_tensor.iter_mut().zip(&other.by_tensor) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.by_tensor {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.by_tensor.iter().flatten().map(|g| g * g).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.by_tensor.iter().flatten().all(|g| g.is_finite())
    }
}

// Indices into `DenoiserParams::tensors` for each layer's weight and bias.
#[derive(Debug, Clone, Copy)]
struct Slot {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    spec: ConvSpec,
    slot: Slot,
}

#[derive(Debug, Clone, Copy)]
struct BlockLayer {
    conv1: ConvLayer,
    conv2: ConvLayer,
}

#[derive(Debug, Clone, Copy)]
struct LinearLayer {
    out_dim: usize,
    slot: Slot,
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    blocks: [BlockLayer; 2],
    down: Option<ConvLayer>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvLayer,
    merge: ConvLayer,
    film: LinearLayer,
    blocks: [BlockLayer; 2],
}

#[derive(Debug, Clone)]
struct NetPlan {
    temb_fc1: LinearLayer,
    temb_fc2: LinearLayer,
    stem: ConvLayer,
    encoder: Vec<EncoderLevel>,
    bottom_film: LinearLayer,
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
    defs: Vec<ParamDef>,
}

struct PlanBuilder {
    defs: Vec<ParamDef>,
}

impl PlanBuilder {
    fn conv(&mut self, name: &str, spec: ConvSpec) -> ConvLayer {
        let w = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.weight"),
            shape: vec![spec.out_ch, spec.in_ch, spec.kernel],
            kind: ParamKind::Weight { fan_in: spec.in_ch * spec.kernel },
        });
        let b = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.bias"),
            shape: vec![spec.out_ch],
            kind: ParamKind::Zero,
        });
        ConvLayer { spec, slot: Slot { w, b } }
    }

    fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> LinearLayer {
        let w = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.weight"),
            shape: vec![out_dim, in_dim],
            kind: ParamKind::Weight { fan_in: in_dim },
        });
        let b = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.bias"),
            shape: vec![out_dim],
            kind: ParamKind::Zero,
        });
        LinearLayer { out_dim, slot: Slot { w, b } }
    }

    fn film(&mut self, name: &str, temb_dim: usize, channels: usize) -> LinearLayer {
        let w = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.weight"),
            shape: vec![2 * channels, temb_dim],
            kind: ParamKind::FilmWeight { fan_in: temb_dim, channels },
        });
        let b = self.defs.len();
        self.defs.push(ParamDef {
            name: format!("{name}.bias"),
            shape: vec![2 * channels],
            kind: ParamKind::Zero,
        });
        LinearLayer { out_dim: 2 * channels, slot: Slot { w, b } }
    }

    fn block(&mut self, name: &str, channels: usize, dilation: usize) -> BlockLayer {
        let conv1 = self.conv(&format!("{name}.conv1"), ConvSpec::same(channels, channels, dilation));
        let conv2 = self.conv(&format!("{name}.conv2"), ConvSpec::same(channels, channels, dilation));
        BlockLayer { conv1, conv2 }
    }
}

fn build_plan(config: &DenoiserConfig) -> NetPlan {
    let mut b = PlanBuilder { defs: Vec::new() };
    let d = config.time_embed_dim;
    let temb_fc1 = b.linear("temb.fc1", d, d);
    let temb_fc2 = b.linear("temb.fc2", d, d);
    let stem = b.conv("stem", ConvSpec::same(config.in_channels(), config.base_width, 1));
    let mut encoder = Vec::with_capacity(config.num_levels);
    for i in 0..config.num_levels {
        let ch = config.level_width(i);
        let blocks = [
            b.block(&format!("enc{i}.block0"), ch, 1),
            b.block(&format!("enc{i}.block1"), ch, 2),
        ];
        let down = (i + 1 < config.num_levels)
            .then(|| b.conv(&format!("down{i}"), ConvSpec::down(ch, config.level_width(i + 1))));
        encoder.push(EncoderLevel { blocks, down });
    }
    let bottom_film = b.film("film.bottom", d, config.level_width(config.num_levels - 1));
    let mut decoder = Vec::with_capacity(config.num_levels.saturating_sub(1));
    for i in (0..config.num_levels - 1).rev() {
        let ch = config.level_width(i);
        let up = b.conv(&format!("up{i}"), ConvSpec::same(config.level_width(i + 1), ch, 1));
        let merge = b.conv(&format!("merge{i}"), ConvSpec::same(2 * ch, ch, 1));
        let film = b.film(&format!("film.dec{i}"), d, ch);
        let blocks = [
            b.block(&format!("dec{i}.block0"), ch, 1),
            b.block(&format!("dec{i}.block1"), ch, 2),
        ];
        decoder.push(DecoderStage { up, merge, film, blocks });
    }
    let head = b.conv("head", ConvSpec::pointwise(config.base_width, config.latent_channels));
    NetPlan { temb_fc1, temb_fc2, stem, encoder, bottom_film, decoder, head, defs: b.defs }
}

/// Deterministic fan-in-scaled initialization.
pub fn init_params(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams, DenoiserError> {
    config.validate()?;
    let plan = build_plan(config);
    let mut rng = SeedStream::derived(seed, &[0x696e_6974]);
    let mut tensors = Vec::with_capacity(plan.defs.len());
    for def in &plan.defs {
        let data = match def.kind {
            ParamKind::Zero => vec![0.0; def.len()],
            ParamKind::Weight { fan_in } => {
                let bound = 1.0 / math::sqrt(fan_in as f64);
                (0..def.len()).map(|_| rng.uniform_in(-bound, bound)).collect()
            }
            ParamKind::FilmWeight { fan_in, channels } => {
                let bound = 1.0 / math::sqrt(fan_in as f64);
                let half = channels * fan_in;
                let mut data = vec![0.0; def.len()];
                // Scale rows are live from the start; shift rows stay zero so
                // modulation begins as identity-plus-scale.
                for v in &mut data[..half] {
                    *v = rng.uniform_in(-bound, bound);
                }
                data
            }
        };
        tensors.push(NamedTensor { name: def.name.clone(), shape: def.shape.clone(), data });
    }
    Ok(DenoiserParams { config: *config, tensors })
}

/// Analytic parameter count for a configuration; the ground truth the
/// enumeration is checked against.
pub fn expected_param_count(config: &DenoiserConfig) -> usize {
    build_plan(config).defs.iter().map(ParamDef::len).sum()
}

/// Standard sinusoidal embedding: pairs of (sin, cos) over geometrically
/// spaced frequencies from 1 down to 1/10000.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim >= 2 && dim % 2 == 0);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = math::exp(-math::ln(10_000.0) * i as f64 / half as f64);
        let angle = t as f64 * freq;
        out.push(math::sin(angle));
        out.push(math::cos(angle));
    }
    out
}

// Cached intermediate activations for one forward pass.
#[derive(Debug, Clone)]
struct BlockTrace {
    input: LatentTensor,
    conv1_pre: LatentTensor,
    conv1_act: LatentTensor,
}

#[derive(Debug, Clone)]
struct ConvActTrace {
    input: LatentTensor,
    pre: LatentTensor,
}

#[derive(Debug, Clone)]
struct FilmTrace {
    input: LatentTensor,
    scale: Vec<f64>,
}

#[derive(Debug, Clone)]
struct EncoderTrace {
    blocks: [BlockTrace; 2],
    down: Option<ConvActTrace>,
}

#[derive(Debug, Clone)]
struct DecoderTrace {
    up: ConvActTrace,
    merge: ConvActTrace,
    film: FilmTrace,
    blocks: [BlockTrace; 2],
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    original_frames: usize,
    e0: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    temb: Vec<f64>,
    stem: ConvActTrace,
    encoder: Vec<EncoderTrace>,
    bottom_film: FilmTrace,
    decoder: Vec<DecoderTrace>,
    head_input: LatentTensor,
}

struct Net<'p> {
    plan: NetPlan,
    params: &'p DenoiserParams,
}

impl<'p> Net<'p> {
    fn new(params: &'p DenoiserParams) -> Result<Self, DenoiserError> {
        params.config.validate()?;
        let plan = build_plan(&params.config);
        if plan.defs.len() != params.tensors.len() {
            return Err(DenoiserError::ParamLayout);
        }
        for (def, tensor) in plan.defs.iter().zip(&params.tensors) {
            if def.name != tensor.name || def.len() != tensor.data.len() {
                return Err(DenoiserError::ParamLayout);
            }
        }
        Ok(Self { plan, params })
    }

    fn w(&self, layer: Slot) -> &[f64] {
        &self.params.tensors[layer.w].data
    }

    fn b(&self, layer: Slot) -> &[f64] {
        &self.params.tensors[layer.b].data
    }

    fn conv_act(&self, layer: &ConvLayer, x: &LatentTensor) -> (LatentTensor, ConvActTrace) {
        let pre = conv1d_forward(&layer.spec, x, self.w(layer.slot), self.b(layer.slot));
        let out = silu_forward(&pre);
        (out, ConvActTrace { input: x.clone(), pre })
    }

    fn conv_act_backward(
        &self,
        layer: &ConvLayer,
        trace: &ConvActTrace,
        gy: &LatentTensor,
        grads: &mut Gradients,
    ) -> LatentTensor {
        let g_pre = silu_backward(&trace.pre, gy);
        let (gw, gb) = grads_pair(grads, layer.slot);
        conv1d_backward(&layer.spec, &trace.input, self.w(layer.slot), &g_pre, gw, gb)
    }

    fn block(&self, layer: &BlockLayer, x: &LatentTensor) -> (LatentTensor, BlockTrace) {
        let conv1_pre =
            conv1d_forward(&layer.conv1.spec, x, self.w(layer.conv1.slot), self.b(layer.conv1.slot));
        let conv1_act = silu_forward(&conv1_pre);
        let branch = conv1d_forward(
            &layer.conv2.spec,
            &conv1_act,
            self.w(layer.conv2.slot),
            self.b(layer.conv2.slot),
        );
        let out = x.add(&branch);
        (out, BlockTrace { input: x.clone(), conv1_pre, conv1_act })
    }

    fn block_backward(
        &self,
        layer: &BlockLayer,
        trace: &BlockTrace,
        gy: &LatentTensor,
        grads: &mut Gradients,
    ) -> LatentTensor {
        let (gw2, gb2) = grads_pair(grads, layer.conv2.slot);
        let g_act =
            conv1d_backward(&layer.conv2.spec, &trace.conv1_act, self.w(layer.conv2.slot), gy, gw2, gb2);
        let g_pre = silu_backward(&trace.conv1_pre, &g_act);
        let (gw1, gb1) = grads_pair(grads, layer.conv1.slot);
        let g_branch =
            conv1d_backward(&layer.conv1.spec, &trace.input, self.w(layer.conv1.slot), &g_pre, gw1, gb1);
        gy.add(&g_branch)
    }

    fn film_apply(
        &self,
        layer: &LinearLayer,
        temb: &[f64],
        x: &LatentTensor,
    ) -> (LatentTensor, FilmTrace) {
        let modulation = linear_forward(self.w(layer.slot), self.b(layer.slot), temb, layer.out_dim);
        let channels = layer.out_dim / 2;
        let scale = modulation[..channels].to_vec();
        let shift = modulation[channels..].to_vec();
        let out = film_forward(x, &scale, &shift);
        (out, FilmTrace { input: x.clone(), scale })
    }

    /// Backward through FiLM; returns the input gradient and accumulates
    /// into the shared time-embedding gradient.
    fn film_backward_step(
        &self,
        layer: &LinearLayer,
        trace: &FilmTrace,
        temb: &[f64],
        gy: &LatentTensor,
        grads: &mut Gradients,
        g_temb: &mut [f64],
    ) -> LatentTensor {
        let (gx, gscale, gshift) = film_backward(&trace.input, &trace.scale, gy);
        let mut g_mod = gscale;
        g_mod.extend_from_slice(&gshift);
        let (gw, gb) = grads_pair(grads, layer.slot);
        let ge = linear_backward(self.w(layer.slot), temb, &g_mod, gw, gb);
        for (acc, g) in g_temb.iter_mut().zip(&ge) {
            *acc += *g;
        }
        gx
    }

    fn forward(
        &self,
        z_in: &LatentTensor,
        t: usize,
        guidance: Option<&GuidanceTrack>,
    ) -> Result<(LatentTensor, ForwardTrace), DenoiserError> {
        let config = &self.params.config;
        if z_in.channels() != config.latent_channels {
            return Err(DenoiserError::Shape(ShapeMismatch {
                expected: (config.latent_channels, z_in.frames()),
                got: z_in.shape(),
            }));
        }
        if !z_in.all_finite() {
            return Err(DenoiserError::NonFiniteInput);
        }
        let frames = z_in.frames();

        // Guidance enters as one extra channel, RMS-matched to the latent;
        // absent guidance degrades to an all-zero channel.
        let x = if config.guidance_enabled {
            let channel = match guidance {
                Some(track) => {
                    if track.frames() != frames {
                        return Err(DenoiserError::GuidanceLength {
                            expected: frames,
                            got: track.frames(),
                        });
                    }
                    guidance::rms_match(&track.values, z_in, track.gamma)
                }
                None => vec![0.0; frames],
            };
            let channel = LatentTensor::from_vec(1, frames, channel).unwrap();
            concat_channels(z_in, &channel)
        } else {
            z_in.clone()
        };

        let multiple = config.frame_multiple();
        let padded = frames.div_ceil(multiple) * multiple;
        let x = pad_frames(&x, padded);

        // Time embedding MLP.
        let e0 = time_embedding(t, config.time_embed_dim);
        let fc1_pre = linear_forward(
            self.w(self.plan.temb_fc1.slot),
            self.b(self.plan.temb_fc1.slot),
            &e0,
            self.plan.temb_fc1.out_dim,
        );
        let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| math::silu(v)).collect();
        let temb = linear_forward(
            self.w(self.plan.temb_fc2.slot),
            self.b(self.plan.temb_fc2.slot),
            &fc1_act,
            self.plan.temb_fc2.out_dim,
        );

        let (mut h, stem_trace) = self.conv_act(&self.plan.stem, &x);

        let mut skips: Vec<LatentTensor> = Vec::new();
        let mut enc_traces = Vec::with_capacity(self.plan.encoder.len());
        for level in &self.plan.encoder {
            let (h0, t0) = self.block(&level.blocks[0], &h);
            let (h1, t1) = self.block(&level.blocks[1], &h0);
            h = h1;
            let down = level.down.as_ref().map(|down| {
                skips.push(h.clone());
                let (next, trace) = self.conv_act(down, &h);
                h = next;
                trace
            });
            enc_traces.push(EncoderTrace { blocks: [t0, t1], down });
        }

        let (h_film, bottom_trace) = self.film_apply(&self.plan.bottom_film, &temb, &h);
        h = h_film;

        let mut dec_traces = Vec::with_capacity(self.plan.decoder.len());
        for (stage_idx, stage) in self.plan.decoder.iter().enumerate() {
            let upsampled = upsample2_forward(&h);
            let (up_out, up_trace) = self.conv_act(&stage.up, &upsampled);
            // Decoder stage k pairs with the skip pushed at encoder level
            // (depth - 2 - k).
            let skip = &skips[self.plan.decoder.len() - 1 - stage_idx];
            let concat_input = concat_channels(&up_out, skip);
            let (merge_out, merge_trace) = self.conv_act(&stage.merge, &concat_input);
            let (film_out, film_trace) = self.film_apply(&stage.film, &temb, &merge_out);
            let (b0_out, b0_trace) = self.block(&stage.blocks[0], &film_out);
            let (b1_out, b1_trace) = self.block(&stage.blocks[1], &b0_out);
            h = b1_out;
            dec_traces.push(DecoderTrace {
                up: up_trace,
                merge: merge_trace,
                film: film_trace,
                blocks: [b0_trace, b1_trace],
            });
        }

        let head_input = h;
        let y_padded = conv1d_forward(
            &self.plan.head.spec,
            &head_input,
            self.w(self.plan.head.slot),
            self.b(self.plan.head.slot),
        );
        let y = crop_frames(&y_padded, frames);

        let trace = ForwardTrace {
            original_frames: frames,
            e0,
            fc1_pre,
            fc1_act,
            temb,
            stem: stem_trace,
            encoder: enc_traces,
            bottom_film: bottom_trace,
            decoder: dec_traces,
            head_input,
        };
        Ok((y, trace))
    }

    fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &LatentTensor,
    ) -> Result<(Gradients, LatentTensor), DenoiserError> {
        let config = &self.params.config;
        let mut grads = self.params.zeros_like_grads();
        let mut g_temb = vec![0.0; config.time_embed_dim];

        let padded = trace.head_input.frames();
        let g_head_out = pad_frames(upstream, padded);
        let (gw, gb) = grads_pair(&mut grads, self.plan.head.slot);
        let mut g = conv1d_backward(
            &self.plan.head.spec,
            &trace.head_input,
            self.w(self.plan.head.slot),
            &g_head_out,
            gw,
            gb,
        );

        let mut g_skips: Vec<Option<LatentTensor>> = vec![None; self.plan.decoder.len()];
        for (stage_idx, stage) in self.plan.decoder.iter().enumerate().rev() {
            let dt = &trace.decoder[stage_idx];
            g = self.block_backward(&stage.blocks[1], &dt.blocks[1], &g, &mut grads);
            g = self.block_backward(&stage.blocks[0], &dt.blocks[0], &g, &mut grads);
            g = self.film_backward_step(&stage.film, &dt.film, &trace.temb, &g, &mut grads, &mut g_temb);
            let g_concat = {
                let g_pre = silu_backward(&dt.merge.pre, &g);
                let (gw, gb) = grads_pair(&mut grads, stage.merge.slot);
                conv1d_backward(&stage.merge.spec, &dt.merge.input, self.w(stage.merge.slot), &g_pre, gw, gb)
            };
            let (g_up_out, g_skip) = split_channels(&g_concat, stage.up.spec.out_ch);
            g_skips[self.plan.decoder.len() - 1 - stage_idx] = Some(g_skip);
            let g_upsampled = self.conv_act_backward(&stage.up, &dt.up, &g_up_out, &mut grads);
            g = upsample2_backward(&g_upsampled);
        }

        g = self.film_backward_step(
            &self.plan.bottom_film,
            &trace.bottom_film,
            &trace.temb,
            &g,
            &mut grads,
            &mut g_temb,
        );

        for (level_idx, level) in self.plan.encoder.iter().enumerate().rev() {
            let et = &trace.encoder[level_idx];
            if let (Some(down), Some(down_trace)) = (&level.down, &et.down) {
                g = self.conv_act_backward(down, down_trace, &g, &mut grads);
                // The skip branch feeds the same activation.
                if let Some(g_skip) = g_skips[level_idx].take() {
                    g = g.add(&g_skip);
                }
            }
            g = self.block_backward(&level.blocks[1], &et.blocks[1], &g, &mut grads);
            g = self.block_backward(&level.blocks[0], &et.blocks[0], &g, &mut grads);
        }

        g = self.conv_act_backward(&self.plan.stem, &trace.stem, &g, &mut grads);

        // Time-embedding MLP backward from the accumulated FiLM gradients.
        {
            let (gw2, gb2) = grads_pair(&mut grads, self.plan.temb_fc2.slot);
            let g_fc1_act =
                linear_backward(self.w(self.plan.temb_fc2.slot), &trace.fc1_act, &g_temb, gw2, gb2);
            let g_fc1_pre: Vec<f64> = trace
                .fc1_pre
                .iter()
                .zip(&g_fc1_act)
                .map(|(&p, &gv)| math::silu_prime(p) * gv)
                .collect();
            let (gw1, gb1) = grads_pair(&mut grads, self.plan.temb_fc1.slot);
            let _ = linear_backward(self.w(self.plan.temb_fc1.slot), &trace.e0, &g_fc1_pre, gw1, gb1);
        }

        // Crop the padded columns and the guidance channel off the input
        // gradient; the guidance track is conditioning, not a trained path.
        let g_cropped = crop_frames(&g, trace.original_frames);
        let g_input = if config.guidance_enabled {
            split_channels(&g_cropped, config.latent_channels).0
        } else {
            g_cropped
        };
        Ok((grads, g_input))
    }
}

fn grads_pair(grads: &mut Gradients, slot: Slot) -> (&mut [f64], &mut [f64]) {
    debug_assert!(slot.b == slot.w + 1);
    let (head, tail) = grads.by_tensor.split_at_mut(slot.b);
    (&mut head[slot.w], &mut tail[0])
}

/// Runs the network, returning the predicted effective noise.
pub fn forward(
    params: &DenoiserParams,
    z_in: &LatentTensor,
    t: usize,
    guidance: Option<&GuidanceTrack>,
) -> Result<LatentTensor, DenoiserError> {
    let net = Net::new(params)?;
    Ok(net.forward(z_in, t, guidance)?.0)
}

/// Runs the network and keeps the activation trace for [`backward`].
pub fn forward_traced(
    params: &DenoiserParams,
    z_in: &LatentTensor,
    t: usize,
    guidance: Option<&GuidanceTrack>,
) -> Result<(LatentTensor, ForwardTrace), DenoiserError> {
    Net::new(params)?.forward(z_in, t, guidance)
}

/// Exact reverse-mode gradients for every parameter, plus the gradient with
/// respect to the latent input. The guidance channel is treated as a
/// constant conditioning signal.
pub fn backward(
    params: &DenoiserParams,
    trace: &ForwardTrace,
    upstream: &LatentTensor,
) -> Result<(Gradients, LatentTensor), DenoiserError> {
    Net::new(params)?.backward(trace, upstream)
}

/// Anything that can predict the effective noise for a latent at a step;
/// implemented by trained parameters and by analytic test oracles.
pub trait NoisePredictor {
    fn predict(
        &self,
        z: &LatentTensor,
        t: usize,
        guidance: Option<&GuidanceTrack>,
    ) -> Result<LatentTensor, DenoiserError>;
}

impl NoisePredictor for DenoiserParams {
    fn predict(
        &self,
        z: &LatentTensor,
        t: usize,
        guidance: Option<&GuidanceTrack>,
    ) -> Result<LatentTensor, DenoiserError> {
        forward(self, z, t, guidance)
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&LatentTensor, usize) -> LatentTensor,
{
    fn predict(
        &self,
        z: &LatentTensor,
        t: usize,
        _guidance: Option<&GuidanceTrack>,
    ) -> Result<LatentTensor, DenoiserError> {
        Ok(self(z, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn tiny_config() -> DenoiserConfig {
        DenoiserConfig::new(2, 4, 2, 8, false).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 9).unwrap();
        let b = init_params(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_hand_formula() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 1).unwrap();
        // Hand count: temb 2*(8*8+8); stem 4*2*3+4; enc0 blocks 4*(4*4*3+4);
        // down0 8*4*3+8; enc1 blocks 4*(8*8*3+8); film.bottom 16*8+16;
        // up0 4*8*3+4; merge0 4*8*3+4; film.dec0 8*8+8;
        // dec0 blocks 4*(4*4*3+4); head 2*4+2.
        let want = 2 * (8 * 8 + 8)
            + (4 * 2 * 3 + 4)
            + 4 * (4 * 4 * 3 + 4)
            + (8 * 4 * 3 + 8)
            + 4 * (8 * 8 * 3 + 8)
            + (16 * 8 + 16)
            + (4 * 8 * 3 + 4)
            + (4 * 8 * 3 + 4)
            + (8 * 8 + 8)
            + 4 * (4 * 4 * 3 + 4)
            + (2 * 4 + 2);
        assert_eq!(params.total_len(), want);
        assert_eq!(expected_param_count(&cfg), want);
    }

    #[test]
    fn zero_input_forward_is_finite() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 2).unwrap();
        let z = LatentTensor::zeros(2, 12);
        let y = forward(&params, &z, 3, None).unwrap();
        assert!(y.all_finite());
    }

    #[test]
    fn output_shape_matches_input_latent_shape() {
        for (levels, frames) in [(1usize, 5usize), (2, 9), (3, 13)] {
            let cfg = DenoiserConfig::new(3, 4, levels, 8, false).unwrap();
            let params = init_params(&cfg, 3).unwrap();
            let mut rng = SeedStream::new(4);
            let z = rng.normal_tensor(3, frames);
            let y = forward(&params, &z, 1, None).unwrap();
            assert_eq!(y.shape(), (3, frames), "levels={levels} frames={frames}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 5).unwrap();
        let mut rng = SeedStream::new(6);
        let z = rng.normal_tensor(2, 10);
        let a = forward(&params, &z, 4, None).unwrap();
        let b = forward(&params, &z, 4, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn time_step_changes_output() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 7).unwrap();
        let mut rng = SeedStream::new(8);
        let z = rng.normal_tensor(2, 8);
        let a = forward(&params, &z, 1, None).unwrap();
        let b = forward(&params, &z, 37, None).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-9);
    }

    #[test]
    fn guidance_absent_equals_zero_track() {
        let cfg = DenoiserConfig::new(2, 4, 2, 8, true).unwrap();
        let params = init_params(&cfg, 9).unwrap();
        let mut rng = SeedStream::new(10);
        let z = rng.normal_tensor(2, 8);
        let absent = forward(&params, &z, 2, None).unwrap();
        let zero_track = GuidanceTrack { values: alloc::vec![0.0; 8], gamma: 0.1 };
        let explicit = forward(&params, &z, 2, Some(&zero_track)).unwrap();
        assert!(absent.max_abs_diff(&explicit) < 1e-15);
    }

    #[test]
    fn guidance_wrong_length_rejected() {
        let cfg = DenoiserConfig::new(2, 4, 1, 8, true).unwrap();
        let params = init_params(&cfg, 11).unwrap();
        let z = LatentTensor::zeros(2, 8);
        let track = GuidanceTrack { values: alloc::vec![0.5; 9], gamma: 0.1 };
        assert!(matches!(
            forward(&params, &z, 1, Some(&track)),
            Err(DenoiserError::GuidanceLength { expected: 8, got: 9 })
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 12).unwrap();
        let mut z = LatentTensor::zeros(2, 8);
        z.set(1, 3, f64::NAN);
        assert!(matches!(forward(&params, &z, 1, None), Err(DenoiserError::NonFiniteInput)));
    }

    #[test]
    fn time_embedding_basics() {
        let e = time_embedding(0, 8);
        for i in 0..4 {
            assert_eq!(e[2 * i], 0.0);
            assert_eq!(e[2 * i + 1], 1.0);
        }
        for t in [1usize, 7, 100, 12345] {
            let e = time_embedding(t, 16);
            let norm = math::l2_norm(&e);
            assert!(norm <= (16f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn time_embedding_known_values() {
        // Independent scalar evaluation for t = 7, dim = 8.
        let e = time_embedding(7, 8);
        for i in 0..4usize {
            let freq = (10_000f64).powf(-(i as f64) / 4.0);
            assert!((e[2 * i] - (7.0 * freq).sin()).abs() < 1e-12);
            assert!((e[2 * i + 1] - (7.0 * freq).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 13).unwrap();
        let mut rng = SeedStream::new(14);
        let z = rng.normal_tensor(2, 8);
        let (_, trace) = forward_traced(&params, &z, 3, None).unwrap();
        let (grads, g_in) = backward(&params, &trace, &LatentTensor::zeros(2, 8)).unwrap();
        assert!(grads.by_tensor.iter().flatten().all(|&g| g == 0.0));
        assert!(g_in.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_guidance_channel_weights_get_zero_grad() {
        // With guidance enabled but absent, the guidance input channel is
        // all zeros, so the stem weights reading it provably cannot affect
        // the output and must receive zero gradient.
        let cfg = DenoiserConfig::new(2, 4, 1, 8, true).unwrap();
        let params = init_params(&cfg, 15).unwrap();
        let mut rng = SeedStream::new(16);
        let z = rng.normal_tensor(2, 8);
        let (_, trace) = forward_traced(&params, &z, 2, None).unwrap();
        let upstream = rng.normal_tensor(2, 8);
        let (grads, _) = backward(&params, &trace, &upstream).unwrap();
        let stem_idx =
            params.tensors.iter().position(|t| t.name == "stem.weight").unwrap();
        let in_ch = cfg.in_channels();
        let guidance_channel = in_ch - 1;
        let gw = &grads.by_tensor[stem_idx];
        for o in 0..cfg.base_width {
            for k in 0..3 {
                let idx = (o * in_ch + guidance_channel) * 3 + k;
                assert_eq!(gw[idx], 0.0, "o={o} k={k}");
            }
        }
        // Latent-channel weights do get gradient.
        assert!(gw.iter().any(|&g| g != 0.0));
    }
}
