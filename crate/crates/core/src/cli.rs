//! Command-line entry points.
//!
//! Subcommands: `synth`, `dedup`, `mine`, `train`, `eval`, `gradcheck`.
//! Every run writes a config echo (the resolved flags plus seed) next to its
//! outputs, so identical flags and seed reproduce identical artifacts byte
//! for byte. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::synth::{ComponentSignal, SynthConfig};
use crate::data::{checkpoint, load_dataset};
use crate::error::{Error, Result};
use crate::params::{AvFusion, ModelConfig, TextFusion};
use crate::pipeline::{self, BandThresholds, Combine};
use crate::trainer::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "avtr",
    about = "Composed audio-video-text retrieval over precomputed embeddings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic embedding dataset with planted retrieval structure.
    Synth(SynthArgs),
    /// Remove near-duplicate clip records from a manifest.
    Dedup(DedupArgs),
    /// Mine candidate clip pairs inside the two similarity bands.
    Mine(MineArgs),
    /// Train the fusion parameters on a dataset of triplets.
    Train(TrainArgs),
    /// Evaluate a checkpoint: full-gallery ranking with R@K and mean rank.
    Eval(EvalArgs),
    /// Verify analytic gradients of every trainable block against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    triplets: usize,
    /// Held-out triplets; non-zero writes train/ and test/ subdirectories.
    #[arg(long, default_value_t = 0)]
    test_triplets: usize,
    /// Fresh-latent gallery distractors.
    #[arg(long, default_value_t = 100)]
    gallery_extra: usize,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 768)]
    audio_dim: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    audio_len: usize,
    /// Per-entry Gaussian noise sigma.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Clip records for the dedup / mining pipeline.
    #[arg(long, default_value_t = 0)]
    clips: usize,
    /// Signal strength multipliers per text component.
    #[arg(long, default_value_t = 1.0)]
    signal_object: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_action: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_attribute: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_audio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DedupArgs {
    /// Clip manifest to deduplicate.
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest (retained records, input order).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = pipeline::DEDUP_THETA_V)]
    theta_video: f64,
    #[arg(long, default_value_t = pipeline::DEDUP_THETA_A)]
    theta_audio: f64,
}

#[derive(Args, Debug)]
struct MineArgs {
    /// Clip manifest (deduplicated) to mine.
    #[arg(long)]
    manifest: PathBuf,
    /// Output pair list (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.92)]
    band1_video_min: f64,
    #[arg(long, default_value_t = 0.96)]
    band1_video_max: f64,
    #[arg(long, default_value_t = 0.0)]
    band1_audio_min: f64,
    #[arg(long, default_value_t = 0.85)]
    band1_audio_max: f64,
    #[arg(long, default_value_t = 0.85)]
    band2_video_min: f64,
    #[arg(long, default_value_t = 0.88)]
    band2_video_max: f64,
    #[arg(long, default_value_t = 0.95)]
    band2_audio_min: f64,
    #[arg(long, default_value_t = 1.0)]
    band2_audio_max: f64,
    /// How each band combines its video and audio conditions.
    #[arg(long, value_parser = ["and", "or"], default_value = "and")]
    combine: String,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    audio_tokens: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    mlp_hidden: usize,
    /// Audio-video fusion strategy.
    #[arg(long, value_parser = ["gated", "mean", "video-only"], default_value = "gated")]
    av_fusion: String,
    /// Text fusion strategy.
    #[arg(long, value_parser = ["weighted", "mean", "none"], default_value = "weighted")]
    text_fusion: String,
}

impl ModelArgs {
    fn to_config(&self, dim: usize, audio_dim: usize) -> ModelConfig {
        ModelConfig {
            dim,
            audio_dim,
            audio_tokens: self.audio_tokens,
            layers: self.layers,
            mlp_hidden: self.mlp_hidden,
            av_fusion: match self.av_fusion.as_str() {
                "mean" => AvFusion::Mean,
                "video-only" => AvFusion::VideoOnly,
                _ => AvFusion::Gated,
            },
            text_fusion: match self.text_fusion.as_str() {
                "mean" => TextFusion::Mean,
                "none" => TextFusion::None,
                _ => TextFusion::Weighted,
            },
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, training log, and config echo.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate every k epochs on --eval-data (0 = never).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Held-out dataset directory for --eval-every.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Global gradient-norm clip (absent = no clipping).
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Freeze the audio resampler parameters.
    #[arg(long, default_value_t = false)]
    freeze_resampler: bool,
    /// Worker cap; 1 is the fully serial reference mode.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// Output directory for metrics.json and config echo.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random seeds per check.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

fn write_config_echo<T: serde::Serialize>(dir: &Path, config: &T) -> Result<()> {
    let path = dir.join("config.json");
    let body = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_triplets: args.triplets,
        test_triplets: args.test_triplets,
        gallery_extra: args.gallery_extra,
        dim: args.dim,
        audio_dim: args.audio_dim,
        n_frames: args.frames,
        audio_len: args.audio_len,
        noise: args.noise,
        component_signal: ComponentSignal {
            object: args.signal_object,
            action: args.signal_action,
            attribute: args.signal_attribute,
            audio: args.signal_audio,
        },
        n_clips: args.clips,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    crate::data::synth::generate(&cfg, args.seed, &args.out)?;
    write_config_echo(&args.out, &serde_json::json!({"synth": cfg, "seed": args.seed}))?;
    println!(
        "wrote {} triplets{} under {}",
        args.triplets,
        if args.test_triplets > 0 {
            format!(" (+{} test)", args.test_triplets)
        } else {
            String::new()
        },
        args.out.display()
    );
    Ok(())
}

fn run_dedup(args: &DedupArgs) -> Result<()> {
    let clips = pipeline::load_clips(&args.manifest)?;
    let kept = pipeline::dedup_indices(&clips, args.theta_video, args.theta_audio)?;
    let kept_ids: std::collections::HashSet<&str> =
        kept.iter().map(|&i| clips[i].id.as_str()).collect();

    // retained records keep their original manifest lines and order
    let records = crate::data::manifest::read_manifest(&args.manifest)?;
    let retained: Vec<crate::data::manifest::ManifestRecord> = records
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| match r {
            crate::data::manifest::ManifestRecord::Clip(c) => kept_ids.contains(c.id.as_str()),
            _ => false,
        })
        .collect();
    crate::data::manifest::write_manifest(&args.out, &retained)?;
    let echo_dir = args.out.parent().unwrap_or(Path::new("."));
    write_config_echo(
        echo_dir,
        &serde_json::json!({
            "dedup": {
                "manifest": args.manifest.display().to_string(),
                "out": args.out.display().to_string(),
                "theta_video": args.theta_video,
                "theta_audio": args.theta_audio,
            }
        }),
    )?;
    println!("retained {} of {} clip records", retained.len(), clips.len());
    Ok(())
}

fn run_mine(args: &MineArgs) -> Result<()> {
    let clips = pipeline::load_clips(&args.manifest)?;
    let thresholds = BandThresholds {
        band1_v: (args.band1_video_min, args.band1_video_max),
        band1_a: (args.band1_audio_min, args.band1_audio_max),
        band2_v: (args.band2_video_min, args.band2_video_max),
        band2_a: (args.band2_audio_min, args.band2_audio_max),
        combine: if args.combine == "or" {
            Combine::Or
        } else {
            Combine::And
        },
    };
    let pairs = pipeline::mine_pairs(&clips, &thresholds)?;
    pipeline::write_pairs(&args.out, &pairs)?;
    let echo_dir = args.out.parent().unwrap_or(Path::new("."));
    write_config_echo(
        echo_dir,
        &serde_json::json!({
            "mine": {
                "manifest": args.manifest.display().to_string(),
                "out": args.out.display().to_string(),
                "thresholds": thresholds,
            }
        }),
    )?;
    println!(
        "mined {} candidate pairs from {} clips",
        pairs.len(),
        clips.len()
    );
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data.join("manifest.jsonl"))?;
    let eval_data = match &args.eval_data {
        Some(dir) => Some(load_dataset(&dir.join("manifest.jsonl"))?),
        None => None,
    };
    let model_cfg = args
        .model
        .to_config(dataset.dims.dim, dataset.dims.audio_dim);
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        eval_every: args.eval_every,
        clip_norm: args.clip_norm,
        train_resampler: !args.freeze_resampler,
        threads: args.threads,
        ..TrainConfig::default()
    };

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let outcome = train(&dataset, &model_cfg, &train_cfg, eval_data.as_ref())?;

    let ckpt_path = args.out.join("checkpoint.avck");
    checkpoint::save(&ckpt_path, &model_cfg, outcome.steps, &outcome.params)?;
    outcome.log.write(&args.out.join("trainlog.jsonl"))?;
    write_config_echo(
        &args.out,
        &serde_json::json!({
            "train": train_cfg,
            "model": model_cfg,
            "data": args.data.display().to_string(),
        }),
    )?;
    let first = outcome.log.steps.first().map(|s| s.loss).unwrap_or(f64::NAN);
    let last = outcome.log.steps.last().map(|s| s.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps (loss {:.4} -> {:.4}); checkpoint at {}",
        outcome.steps,
        first,
        last,
        ckpt_path.display()
    );
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.data.join("manifest.jsonl"))?;
    let ckpt = checkpoint::load(&args.ckpt)?;
    for (field, expected, actual) in [
        ("dim", ckpt.config.dim, dataset.dims.dim),
        ("audio_dim", ckpt.config.audio_dim, dataset.dims.audio_dim),
    ] {
        if expected != actual {
            return Err(Error::ConfigMismatch {
                field: if field == "dim" { "dim" } else { "audio_dim" },
                expected,
                actual,
            });
        }
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let (metrics, _) = crate::eval::evaluate(
        &dataset.triplets,
        &dataset.gallery,
        &ckpt.params,
        &ckpt.config,
        args.threads,
    )?;
    crate::eval::write_metrics(&args.out.join("metrics.json"), &metrics)?;
    write_config_echo(
        &args.out,
        &serde_json::json!({
            "eval": {
                "data": args.data.display().to_string(),
                "ckpt": args.ckpt.display().to_string(),
                "threads": args.threads,
            },
            "model": ckpt.config,
        }),
    )?;
    println!("{}", metrics);
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let seeds: Vec<u64> = (1..=args.seeds).collect();
    let reports = crate::gradcheck::run_suite(&seeds)?;
    let mut all_pass = true;
    for r in &reports {
        println!("{}", r);
        all_pass &= r.passed();
    }
    if !all_pass {
        return Err(Error::NonFinite {
            op: "gradient check".into(),
        });
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

/// Parse and dispatch. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders usage/help itself; keep its exit semantics
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Dedup(a) => run_dedup(a),
        Command::Mine(a) => run_mine(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    }
}
