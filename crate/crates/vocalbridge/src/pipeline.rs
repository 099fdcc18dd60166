//! The five pipelines behind the CLI subcommands: gen, train, purify,
//! eval, and selfcheck.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use vocalbridge_core::codec::CodecSpec;
use vocalbridge_core::denoiser::{self, DenoiserParams};
use vocalbridge_core::metrics::{
    self, cosine_score, Embedder, EmbedderSpec, EmbeddingVector, SpeakerCentroid, TrialRecord,
};
use vocalbridge_core::purifier;
use vocalbridge_core::rng::derive_seed;
use vocalbridge_core::schedule::NoiseSchedule;
use vocalbridge_core::synth::{self, PerturbationKind};
use vocalbridge_core::tensor::LatentTensor;
use vocalbridge_core::trainer;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::{self, build_dataset, guidance_for, load_paired_samples, GeneratedDataset};
use crate::error::{CliError, Result};
use crate::files::{
    self, read_calibration_file, read_embedding_file, read_latent_file, write_calibration_file,
    write_latent_file, Calibration,
};
use crate::manifest::{
    manifest_exists, read_dataset_manifest, read_trial_manifest, utt_key, write_trial_manifest,
    TrialRow,
};
use crate::report::{write_train_log, MetricsReport};
use crate::wav::write_wav;

const SALT_PURIFY_ROW: u64 = 0x7075_7269;
const SALT_VAL: u64 = 0x7661_6c73;

/// Embedder tuned to the codec's passband.
pub fn embedder_for(codec: &CodecSpec) -> Embedder {
    let nyquist = codec.sample_rate() as f64 / 2.0;
    let spec = EmbedderSpec { f_max: (0.99 * nyquist).min(4000.0), ..EmbedderSpec::default() };
    Embedder::new(spec, codec.sample_rate())
}

pub fn run_gen(config: &ExperimentConfig, config_path: &Path, out: Option<&Path>) -> Result<GeneratedDataset> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.dataset_dir(config_path));
    build_dataset(config, &dir)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub report_path: PathBuf,
    pub final_total: f64,
    pub val_bridge_loss: f64,
    pub wall_clock_secs: f64,
}

pub fn run_train(config: &ExperimentConfig, config_path: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let started = Instant::now();
    let codec = config.build_codec()?;
    let schedule = config.build_schedule()?;
    let ds_dir = config.dataset_dir(config_path);
    let (train_manifest, _, dev_manifest, _) = dataset::manifest_paths(&ds_dir);
    let records = read_dataset_manifest(&train_manifest)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "training manifest {} is empty; run `gen` first",
            train_manifest.display()
        )));
    }
    let with_guidance = config.train.guidance_enabled;
    let samples = load_paired_samples(&records, &codec, with_guidance, config.guidance.gamma)?;
    let train_config = config.build_train_config();
    let denoiser_config = config.build_denoiser_config(with_guidance)?;
    let outcome = trainer::train(&samples, &train_config, &denoiser_config, &schedule)
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    // Validation bridge loss over the held-out dev split, on fixed draws.
    let dev_records = read_dataset_manifest(&dev_manifest)?;
    let val_bridge_loss = if dev_records.is_empty() {
        f64::NAN
    } else {
        let dev_samples =
            load_paired_samples(&dev_records, &codec, with_guidance, config.guidance.gamma)?;
        trainer::validation_bridge_loss(
            &outcome.params,
            &dev_samples,
            with_guidance,
            &schedule,
            derive_seed(config.seed, &[SALT_VAL]),
        )
        .map_err(|e| CliError::Numeric(e.to_string()))?
    };

    let checkpoint_path = out_dir.join("checkpoint.bin");
    let log_path = out_dir.join("train_log.tsv");
    let report_path = out_dir.join("train_report.txt");
    write_checkpoint(&checkpoint_path, &outcome.params)?;
    write_train_log(&log_path, &outcome.steps)?;
    let final_total = outcome.epochs.last().map(|e| e.mean_loss.total).unwrap_or(f64::NAN);
    let wall_clock_secs = started.elapsed().as_secs_f64();
    let report = format!(
        "epochs={}\nsteps={}\nfinal_total={:.9e}\nval_bridge_loss={:.9e}\nwall_clock_secs={:.3}\n",
        outcome.epochs.len(),
        outcome.steps.len(),
        final_total,
        val_bridge_loss,
        wall_clock_secs,
    );
    files::atomic_write(&report_path, report.as_bytes())?;
    Ok(TrainSummary {
        checkpoint_path,
        log_path,
        report_path,
        final_total,
        val_bridge_loss,
        wall_clock_secs,
    })
}

#[derive(Debug, Clone)]
pub struct PurifySummary {
    pub trial_manifest: PathBuf,
    pub num_utterances: usize,
}

pub fn run_purify(
    config: &ExperimentConfig,
    manifest_path: &Path,
    checkpoint_path: &Path,
    out_dir: &Path,
    write_wavs: bool,
) -> Result<PurifySummary> {
    let codec = config.build_codec()?;
    let schedule = config.build_schedule()?;
    let params = read_checkpoint(checkpoint_path)?;
    let records = read_dataset_manifest(manifest_path)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "input manifest {} is empty",
            manifest_path.display()
        )));
    }
    let purify_config = config.build_purify_config();
    let use_guidance = params.config.guidance_enabled;
    let gamma = config.guidance.gamma;
    let purified_dir = out_dir.join("purified");
    std::fs::create_dir_all(&purified_dir).map_err(|e| CliError::from_io(&purified_dir, e))?;

    // Per-utterance work is independent; results are committed in manifest
    // order so the run is deterministic regardless of thread scheduling.
    let num_threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut outputs: Vec<Option<Result<TrialRow>>> = (0..records.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let outputs_mutex = std::sync::Mutex::new(&mut outputs);
    std::thread::scope(|scope| {
        for _ in 0..num_threads.min(records.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= records.len() {
                    break;
                }
                let result = purify_one(
                    &records[idx],
                    idx,
                    &codec,
                    &schedule,
                    &params,
                    &purify_config,
                    use_guidance,
                    gamma,
                    &purified_dir,
                    write_wavs,
                );
                let mut guard = outputs_mutex.lock().unwrap();
                guard[idx] = Some(result);
            });
        }
    });

    let mut rows = Vec::with_capacity(records.len());
    for slot in outputs {
        rows.push(slot.expect("every index visited")?);
    }
    let trial_manifest = out_dir.join("trials.tsv");
    write_trial_manifest(&trial_manifest, &rows)?;
    Ok(PurifySummary { trial_manifest, num_utterances: rows.len() })
}

#[allow(clippy::too_many_arguments)]
fn purify_one(
    record: &crate::manifest::DatasetRecord,
    index: usize,
    codec: &CodecSpec,
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    purify_config: &vocalbridge_core::purifier::PurifyConfig,
    use_guidance: bool,
    gamma: f64,
    purified_dir: &Path,
    write_wavs: bool,
) -> Result<TrialRow> {
    let protected = read_latent_file(&record.protected_path)?;
    // Inference-side guidance comes from the protected input itself.
    let guidance = if use_guidance {
        Some(guidance_for(codec, &protected, &record.alignment_path, gamma)?)
    } else {
        None
    };
    let per_utt = vocalbridge_core::purifier::PurifyConfig {
        seed: derive_seed(purify_config.seed, &[SALT_PURIFY_ROW, index as u64]),
        ..*purify_config
    };
    let purified = purifier::purify(&protected, params, &per_utt, schedule, guidance.as_ref())
        .map_err(|e| CliError::Numeric(format!("{}: {e}", record.utt_id)))?;
    let stem = format!("{}_{}", record.speaker_id, record.utt_id);
    let purified_path = purified_dir.join(format!("{stem}.pur.vblt"));
    write_latent_file(&purified_path, &purified)?;
    if write_wavs {
        let wave = codec.decode(&purified).map_err(|e| CliError::Numeric(e.to_string()))?;
        write_wav(&purified_dir.join(format!("{stem}.pur.wav")), &wave)?;
    }
    Ok(TrialRow {
        speaker_id: record.speaker_id.clone(),
        protected_path: record.protected_path.clone(),
        purified_path,
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricsReport,
    pub metrics_path: PathBuf,
    pub calibration_path: PathBuf,
    /// True when an existing calibration file was reused.
    pub calibration_frozen: bool,
}

/// Reads an embedding either directly (embedding file) or by decoding a
/// latent and embedding the waveform. The latent is also returned when
/// available for the latent-distance metrics.
fn embed_path(
    path: &Path,
    codec: &CodecSpec,
    embedder: &Embedder,
) -> Result<(EmbeddingVector, Option<LatentTensor>)> {
    if files::is_embedding_file(path)? {
        return Ok((read_embedding_file(path)?, None));
    }
    let latent = read_latent_file(path)?;
    let wave = codec.decode(&latent).map_err(|e| CliError::Numeric(e.to_string()))?;
    let embedding = embedder.embed(&wave).map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok((embedding, Some(latent)))
}

pub fn run_eval(
    config: &ExperimentConfig,
    config_path: &Path,
    trials_path: &Path,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let codec = config.build_codec()?;
    let embedder = embedder_for(&codec);
    let ds_dir = config.dataset_dir(config_path);
    let (_, enroll_manifest, dev_manifest, ds_trial_manifest) = dataset::manifest_paths(&ds_dir);

    let trial_rows = read_trial_manifest(trials_path)?;
    if trial_rows.is_empty() {
        return Err(CliError::Usage(format!("trial manifest {} is empty", trials_path.display())));
    }
    let enroll = read_dataset_manifest(&enroll_manifest)?;
    let dev = read_dataset_manifest(&dev_manifest)?;
    if enroll.is_empty() || dev.is_empty() {
        return Err(CliError::Usage("enroll/dev manifests are empty; run `gen` first".into()));
    }

    // The calibration (dev) utterances must be disjoint from the trials.
    let dev_keys: BTreeSet<String> =
        dev.iter().map(|r| format!("{}/{}", r.speaker_id, r.utt_id)).collect();
    for row in &trial_rows {
        let key = utt_key(&row.protected_path);
        if dev_keys.contains(&key) {
            return Err(CliError::Check(format!(
                "trial utterance {key} overlaps the calibration dev set"
            )));
        }
    }

    // Enrollment centroids.
    let mut by_speaker: BTreeMap<String, Vec<EmbeddingVector>> = BTreeMap::new();
    for r in &enroll {
        let (embedding, _) = embed_path(&r.clean_path, &codec, &embedder)?;
        by_speaker.entry(r.speaker_id.clone()).or_default().push(embedding);
    }
    let mut centroids: BTreeMap<String, SpeakerCentroid> = BTreeMap::new();
    for (speaker, embeddings) in &by_speaker {
        centroids.insert(
            speaker.clone(),
            SpeakerCentroid::from_embeddings(speaker.clone(), embeddings)
                .map_err(|e| CliError::Numeric(e.to_string()))?,
        );
    }

    // Calibration: computed from dev genuine/impostor scores, or reused
    // frozen from a previous run.
    let calibration_path = out_dir.join("calibration.txt");
    let (calibration, calibration_frozen) = if calibration_path.exists() {
        (read_calibration_file(&calibration_path)?, true)
    } else {
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for r in &dev {
            let (embedding, _) = embed_path(&r.clean_path, &codec, &embedder)?;
            for (speaker, centroid) in &centroids {
                let score = cosine_score(&embedding, centroid);
                if *speaker == r.speaker_id {
                    genuine.push(score);
                } else {
                    impostor.push(score);
                }
            }
        }
        let eer = metrics::compute_eer(&genuine, &impostor)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let calibration = Calibration { eer: eer.eer, tau: eer.tau };
        write_calibration_file(&calibration_path, &calibration)?;
        (calibration, false)
    };

    // Clean-latent lookup for the latent-distance metrics.
    let clean_by_key: BTreeMap<String, PathBuf> = if manifest_exists(&ds_trial_manifest) {
        read_dataset_manifest(&ds_trial_manifest)?
            .into_iter()
            .map(|r| (utt_key(&r.protected_path), r.clean_path))
            .collect()
    } else {
        BTreeMap::new()
    };

    let mut trial_records = Vec::with_capacity(trial_rows.len());
    let mut l2_protected = Vec::new();
    let mut l2_purified = Vec::new();
    for row in &trial_rows {
        let centroid = centroids.get(&row.speaker_id).ok_or_else(|| {
            CliError::Check(format!("no enrollment centroid for speaker {}", row.speaker_id))
        })?;
        let (e_prot, latent_prot) = embed_path(&row.protected_path, &codec, &embedder)?;
        let (e_pur, latent_pur) = embed_path(&row.purified_path, &codec, &embedder)?;
        trial_records.push(TrialRecord {
            speaker_id: row.speaker_id.clone(),
            s_prot: cosine_score(&e_prot, centroid),
            s_pur: cosine_score(&e_pur, centroid),
        });
        if let (Some(zp), Some(zr)) = (latent_prot, latent_pur) {
            if let Some(clean_path) = clean_by_key.get(&utt_key(&row.protected_path)) {
                let clean = read_latent_file(clean_path)?;
                l2_protected.push(zp.sub(&clean).l2_norm());
                l2_purified.push(zr.sub(&clean).l2_norm());
            }
        }
    }

    let arr = metrics::compute_arr(&trial_records, calibration.tau)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let rejected = trial_records.iter().filter(|r| r.s_prot < calibration.tau).count();
    let restored = trial_records
        .iter()
        .filter(|r| r.s_prot < calibration.tau && r.s_pur >= calibration.tau)
        .count();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let report = MetricsReport {
        trials: trial_records.len(),
        rejected_protected: rejected,
        restored,
        eer: calibration.eer,
        tau: calibration.tau,
        arr,
        mean_latent_l2_protected: mean(&l2_protected),
        mean_latent_l2_purified: mean(&l2_purified),
    };
    let metrics_path = out_dir.join("metrics.txt");
    report.write(&metrics_path)?;
    Ok(EvalSummary { report, metrics_path, calibration_path, calibration_frozen })
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Invariant suites runnable from the CLI: schedule identities, codec and
/// file-format round trips, a full finite-difference gradient check on a
/// tiny network, the EER sweep against a brute-force oracle, and the
/// synthetic-data preconditions (speaker separability, protection
/// effectiveness at strength 0.5).
pub fn run_selfcheck(config: &ExperimentConfig, scratch_dir: &Path) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        results.push(CheckResult { name, passed, detail });
    };

    // Schedule identities.
    {
        let schedule = config.build_schedule()?;
        let mut worst: f64 = 0.0;
        for t in 1..=schedule.num_steps() {
            let c_in = schedule.c_in(t).map_err(|e| CliError::Numeric(e.to_string()))?;
            let coeff = schedule
                .reconstruction_residual_coeff(t)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            worst = worst.max(coeff.abs() / c_in.abs().max(f64::MIN_POSITIVE));
        }
        let terminal = schedule.terminal_alpha_bar();
        let endpoint_err = (schedule.c_in(schedule.num_steps()).unwrap() - terminal.sqrt()).abs();
        let passed = worst < 1e-12 && endpoint_err < 1e-9;
        push(
            "schedule_identities",
            passed,
            format!("max coeff residual {worst:.2e}, endpoint err {endpoint_err:.2e}"),
        );
    }

    // Codec round trip in lossless mode plus the configured basis.
    {
        let lossless = CodecSpec::new(config.codec.frame_size, config.codec.frame_size, config.codec.sample_rate)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let mut rng = vocalbridge_core::rng::SeedStream::new(config.seed ^ 0xc0dec);
        let wave = vocalbridge_core::codec::Waveform {
            sample_rate: config.codec.sample_rate,
            samples: (0..config.codec.frame_size * 5).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        };
        let round = lossless
            .decode(&lossless.encode(&wave).map_err(|e| CliError::Numeric(e.to_string()))?)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let err = wave
            .samples
            .iter()
            .zip(&round.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        push("codec_round_trip", err <= 1e-6, format!("max abs err {err:.2e}"));
    }

    // Latent and embedding file round trips.
    {
        let mut rng = vocalbridge_core::rng::SeedStream::new(config.seed ^ 0xf11e);
        let latent = rng.normal_tensor(3, 5);
        let lp = scratch_dir.join("selfcheck.vblt");
        write_latent_file(&lp, &latent)?;
        let first = std::fs::read(&lp).map_err(|e| CliError::from_io(&lp, e))?;
        write_latent_file(&lp, &read_latent_file(&lp)?)?;
        let second = std::fs::read(&lp).map_err(|e| CliError::from_io(&lp, e))?;
        let latent_ok = first == second;
        let e = EmbeddingVector::from_raw((0..8).map(|_| rng.standard_normal()).collect());
        let ep = scratch_dir.join("selfcheck.vbem");
        files::write_embedding_file(&ep, &e)?;
        let e_first = std::fs::read(&ep).map_err(|err| CliError::from_io(&ep, err))?;
        files::write_embedding_file(&ep, &read_embedding_file(&ep)?)?;
        let e_second = std::fs::read(&ep).map_err(|err| CliError::from_io(&ep, err))?;
        push("file_round_trip", latent_ok && e_first == e_second, "bit-exact".into());
    }

    // Gradient check on a tiny network.
    {
        let tiny = denoiser::DenoiserConfig::new(2, 4, 2, 8, false)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let params = denoiser::init_params(&tiny, config.seed ^ 0x9d)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let mut rng = vocalbridge_core::rng::SeedStream::new(config.seed ^ 0x9e);
        let z = rng.normal_tensor(2, 8);
        let upstream = rng.normal_tensor(2, 8);
        let (_, trace) = denoiser::forward_traced(&params, &z, 5, None)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let (grads, _) = denoiser::backward(&params, &trace, &upstream)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for ti in 0..params.tensors.len() {
            for vi in 0..params.tensors[ti].data.len() {
                let mut plus = params.clone();
                plus.tensors[ti].data[vi] += h;
                let mut minus = params.clone();
                minus.tensors[ti].data[vi] -= h;
                let lp: f64 = denoiser::forward(&plus, &z, 5, None)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let lm: f64 = denoiser::forward(&minus, &z, 5, None)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let fd = (lp - lm) / (2.0 * h);
                let ad = grads.by_tensor[ti][vi];
                worst = worst.max((ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-4));
            }
        }
        push("gradient_check", worst < 1e-4, format!("max rel err {worst:.2e}"));
    }

    // EER against a brute-force sweep.
    {
        let mut rng = vocalbridge_core::rng::SeedStream::new(config.seed ^ 0xee5);
        let mut all_match = true;
        for _ in 0..100 {
            let genuine: Vec<f64> = (0..5 + rng.below(20)).map(|_| rng.uniform()).collect();
            let impostor: Vec<f64> =
                (0..5 + rng.below(20)).map(|_| rng.uniform() * 0.9).collect();
            let got = metrics::compute_eer(&genuine, &impostor)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let want = brute_force_eer(&genuine, &impostor);
            if got.eer != want.0 || got.tau != want.1 {
                all_match = false;
                break;
            }
        }
        push("eer_oracle", all_match, "exhaustive sweep agreement".into());
    }

    // Synthetic-data preconditions on a miniature set.
    {
        let (gap, below_frac) = synthetic_preconditions(config)?;
        push(
            "speaker_separability",
            gap >= 0.1,
            format!("genuine-impostor cosine gap {gap:.3}"),
        );
        push(
            "protection_effectiveness",
            below_frac >= 0.7,
            format!("{:.0}% of protected utterances below tau", below_frac * 100.0),
        );
    }

    Ok(results)
}

fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut all = Vec::new();
    for (i, &c) in candidates.iter().enumerate() {
        all.push(c);
        if i + 1 < candidates.len() {
            all.push(0.5 * (c + candidates[i + 1]));
        }
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for tau in all {
        let far = impostor.iter().filter(|&&s| s >= tau).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < tau).count() as f64 / genuine.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, tau, 0.5 * (far + frr));
        }
    }
    (best.2, best.1)
}

/// Generates a miniature in-memory dataset and measures (a) the mean
/// genuine minus mean impostor cosine gap on clean utterances and (b) the
/// fraction of protected utterances scoring below the EER threshold at
/// protection strength 0.5.
fn synthetic_preconditions(config: &ExperimentConfig) -> Result<(f64, f64)> {
    let codec = config.build_codec()?;
    let embedder = embedder_for(&codec);
    let speakers = synth::gen_speakers(6, config.seed ^ 0x5e1f, codec.sample_rate());
    let utts_per_speaker = 8usize;
    let enroll_n = 3usize;
    let kind = PerturbationKind::parse(&config.dataset.perturbation).expect("validated");

    let mut centroids = Vec::new();
    let mut clean_embeddings: Vec<Vec<EmbeddingVector>> = Vec::new();
    let mut protected_embeddings: Vec<Vec<EmbeddingVector>> = Vec::new();
    for (si, speaker) in speakers.iter().enumerate() {
        let mut enroll = Vec::new();
        let mut clean_rest = Vec::new();
        let mut protected_rest = Vec::new();
        for ui in 0..utts_per_speaker {
            let seed = derive_seed(config.seed ^ 0x5e1f, &[si as u64, ui as u64]);
            let wave = synth::gen_utterance(speaker, config.dataset.duration_secs.max(0.4), codec.sample_rate(), seed);
            let z_c = codec.encode(&wave).map_err(|e| CliError::Numeric(e.to_string()))?;
            let clean_wave = codec.decode(&z_c).map_err(|e| CliError::Numeric(e.to_string()))?;
            let embedding =
                embedder.embed(&clean_wave).map_err(|e| CliError::Numeric(e.to_string()))?;
            if ui < enroll_n {
                enroll.push(embedding);
            } else {
                clean_rest.push(embedding);
                let spec = synth::PerturbationSpec { kind, strength: 0.5, seed };
                let (z_a, _) =
                    synth::protect(&z_c, &spec).map_err(|e| CliError::Numeric(e.to_string()))?;
                let prot_wave =
                    codec.decode(&z_a).map_err(|e| CliError::Numeric(e.to_string()))?;
                protected_rest.push(
                    embedder.embed(&prot_wave).map_err(|e| CliError::Numeric(e.to_string()))?,
                );
            }
        }
        centroids.push(
            SpeakerCentroid::from_embeddings(speaker.speaker_id.clone(), &enroll)
                .map_err(|e| CliError::Numeric(e.to_string()))?,
        );
        clean_embeddings.push(clean_rest);
        protected_embeddings.push(protected_rest);
    }

    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (si, embeddings) in clean_embeddings.iter().enumerate() {
        for e in embeddings {
            for (sj, centroid) in centroids.iter().enumerate() {
                let score = cosine_score(e, centroid);
                if si == sj {
                    genuine.push(score);
                } else {
                    impostor.push(score);
                }
            }
        }
    }
    let gap = vocalbridge_core::math::mean(&genuine) - vocalbridge_core::math::mean(&impostor);
    let eer = metrics::compute_eer(&genuine, &impostor)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut below = 0usize;
    let mut total = 0usize;
    for (si, embeddings) in protected_embeddings.iter().enumerate() {
        for e in embeddings {
            total += 1;
            if cosine_score(e, &centroids[si]) < eer.tau {
                below += 1;
            }
        }
    }
    Ok((gap, below as f64 / total as f64))
}
