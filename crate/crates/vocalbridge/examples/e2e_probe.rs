//! Scratch harness for sizing the end-to-end run. Not part of the test
//! suite; invoked manually during bring-up.

use std::path::PathBuf;
use std::time::Instant;

use vocalbridge::config::ExperimentConfig;
use vocalbridge::pipeline;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let root = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/vb_probe"));
    std::fs::remove_dir_all(&root).ok();
    std::fs::create_dir_all(&root).unwrap();
    let config_path = root.join("exp.toml");

    let mut config = ExperimentConfig::default();
    config.seed = 42;
    config.dataset.dir = root.join("data");
    for arg in &args[2..] {
        if let Some((k, v)) = arg.split_once('=') {
            match k {
                "epochs" => config.train.num_epochs = v.parse().unwrap(),
                "width" => config.denoiser.base_width = v.parse().unwrap(),
                "lr" => config.train.base_lr = v.parse().unwrap(),
                "k" => config.purify.num_inference_steps = v.parse().unwrap(),
                "tstar" => config.purify.terminal_step = v.parse().unwrap(),
                "span" => config.schedule.span = v.parse().unwrap(),
                "steps" => config.schedule.num_steps = v.parse().unwrap(),
                "dur" => config.dataset.duration_secs = v.parse().unwrap(),
                "strength" => config.dataset.strength = v.parse().unwrap(),
                "guidance" => config.train.guidance_enabled = v.parse().unwrap(),
                "levels" => config.denoiser.num_levels = v.parse().unwrap(),
                "batch" => config.train.batch_size = v.parse().unwrap(),
                "wd" => config.train.weight_decay = v.parse().unwrap(),
                "gain" => config.codec.latent_gain = v.parse().unwrap(),
                other => panic!("unknown knob {other}"),
            }
        }
    }
    std::fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();

    let t0 = Instant::now();
    let generated = pipeline::run_gen(&config, &config_path, None).unwrap();
    println!("gen: {:.1}s", t0.elapsed().as_secs_f64());

    let out = root.join("out");
    std::fs::create_dir_all(&out).unwrap();
    let t1 = Instant::now();
    let train = pipeline::run_train(&config, &config_path, &out).unwrap();
    println!(
        "train: {:.1}s final={:.5} val={:.5}",
        t1.elapsed().as_secs_f64(),
        train.final_total,
        train.val_bridge_loss
    );

    let t2 = Instant::now();
    let purify = pipeline::run_purify(
        &config,
        &generated.trial_manifest,
        &train.checkpoint_path,
        &out,
        false,
    )
    .unwrap();
    println!("purify: {:.1}s ({} utts)", t2.elapsed().as_secs_f64(), purify.num_utterances);

    let t3 = Instant::now();
    let eval = pipeline::run_eval(&config, &config_path, &purify.trial_manifest, &out).unwrap();
    println!("eval: {:.1}s", t3.elapsed().as_secs_f64());
    println!("{}", eval.report.summary());
}
