//! `aedd` — diarization pipeline driver: dataset simulation, training,
//! iterative-decoding inference, and scoring.
//!
//! Exit codes: 0 success, 2 usage, 3 numeric failure, 4 I/O.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aedd", version, about = "attention encoder-decoder diarization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat TOML config file (flags and AEDD_* env vars override it)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-utterance parallelism
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (shards + JSON-lines manifest)
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        speakers: Option<usize>,
        /// Number of mixtures to generate
        #[arg(long)]
        num: Option<usize>,
        /// Frames per mixture (100 ms per frame)
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        overlap_bias: Option<f64>,
        #[arg(long)]
        mean_utt: Option<f64>,
        #[arg(long)]
        mean_gap: Option<f64>,
        #[arg(long)]
        noise_spread: Option<f64>,
        #[arg(long)]
        within_spread: Option<f64>,
    },
    /// Train a model on a simulated dataset
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset manifest (JSON lines)
        #[arg(long)]
        data: PathBuf,
        /// Output run directory (checkpoints + training log)
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        enc_layers: Option<usize>,
        #[arg(long)]
        dec_layers: Option<usize>,
        #[arg(long)]
        ffn_dim: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        zero_drop: Option<f64>,
        #[arg(long)]
        l_enroll_min: Option<usize>,
        #[arg(long)]
        l_enroll_max: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        lr_scale: Option<f64>,
        #[arg(long)]
        grad_clip: Option<f64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Decode utterances into RTTM plus per-recording JSON reports
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest to decode (labels enable gt strategy and ref.rttm)
        #[arg(long, conflicts_with = "wav")]
        data: Option<PathBuf>,
        /// Single WAV file to decode (16-bit PCM mono)
        #[arg(long)]
        wav: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Enrollment strategy: gt | init | rand | sc
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        l_enroll: Option<usize>,
        #[arg(long)]
        l_stop: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Use the known speaker count instead of the stop criterion
        #[arg(long)]
        oracle_speakers: Option<usize>,
        #[arg(long)]
        max_speakers: Option<usize>,
        #[arg(long)]
        median_window: Option<usize>,
    },
    /// Score hypothesis RTTM against reference RTTM (and optionally
    /// speech-type predictions against a labeled dataset)
    Score {
        #[command(flatten)]
        common: CommonArgs,
        /// Reference RTTM
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis RTTM
        #[arg(long)]
        hyp: PathBuf,
        /// Write the JSON report here (defaults to stdout table only)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        collar: Option<f64>,
        /// Exclude reference overlap regions from scoring
        #[arg(long)]
        no_score_overlap: bool,
        /// Labeled dataset manifest for speech-type scoring
        #[arg(long)]
        ref_manifest: Option<PathBuf>,
        /// Directory of decode reports (from `aedd infer`) for type scoring
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Unstarred FA denominator: ref_class | complement
        #[arg(long)]
        fa_denominator: Option<String>,
    },
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
}

/// Usage errors exit 2, numeric failures 3, I/O and format trouble 4.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<aedd_core::Error>() {
        match core {
            aedd_core::Error::Input(_) => 2,
            aedd_core::Error::Numeric(_)
            | aedd_core::Error::Shape(_)
            | aedd_core::Error::Contract(_)
            | aedd_core::Error::Domain(_) => 3,
            aedd_core::Error::Io(_) | aedd_core::Error::Format(_) => 4,
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            ref common,
            ref out,
            speakers,
            num,
            frames,
            feature_dim,
            overlap_bias,
            mean_utt,
            mean_gap,
            noise_spread,
            within_spread,
        } => RunConfig::resolve(common.config.as_deref(), &|cfg: &mut RunConfig| {
            apply_common(cfg, common);
            if let Some(v) = speakers {
                cfg.speakers = v;
            }
            if let Some(v) = num {
                cfg.num_mixtures = v;
            }
            if let Some(v) = frames {
                cfg.frames = v;
            }
            if let Some(v) = feature_dim {
                cfg.feature_dim = v;
            }
            if let Some(v) = overlap_bias {
                cfg.overlap_bias = v;
            }
            if let Some(v) = mean_utt {
                cfg.mean_utt_frames = v;
            }
            if let Some(v) = mean_gap {
                cfg.mean_gap_frames = v;
            }
            if let Some(v) = noise_spread {
                cfg.noise_spread = v;
            }
            if let Some(v) = within_spread {
                cfg.within_spread = v;
            }
        })
        .and_then(|cfg| commands::simulate::run(&cfg, out)),

        Command::Train {
            ref common,
            ref data,
            ref out,
            ref resume,
            epochs,
            batch_size,
            d_model,
            heads,
            enc_layers,
            dec_layers,
            ffn_dim,
            dropout,
            zero_drop,
            l_enroll_min,
            l_enroll_max,
            warmup,
            lr_scale,
            grad_clip,
            checkpoint_every,
        } => RunConfig::resolve(common.config.as_deref(), &|cfg: &mut RunConfig| {
            apply_common(cfg, common);
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = d_model {
                cfg.d_model = v;
            }
            if let Some(v) = heads {
                cfg.n_heads = v;
            }
            if let Some(v) = enc_layers {
                cfg.enc_layers = v;
            }
            if let Some(v) = dec_layers {
                cfg.dec_layers = v;
            }
            if let Some(v) = ffn_dim {
                cfg.ffn_dim = v;
            }
            if let Some(v) = dropout {
                cfg.dropout = v;
            }
            if let Some(v) = zero_drop {
                cfg.zero_drop_p = v;
            }
            if let Some(v) = l_enroll_min {
                cfg.l_enroll_min = v;
            }
            if let Some(v) = l_enroll_max {
                cfg.l_enroll_max = v;
            }
            if let Some(v) = warmup {
                cfg.warmup_steps = v;
            }
            if let Some(v) = lr_scale {
                cfg.peak_lr_scale = v;
            }
            if let Some(v) = grad_clip {
                cfg.grad_clip = v;
            }
            if let Some(v) = checkpoint_every {
                cfg.checkpoint_every = v;
            }
        })
        .and_then(|cfg| commands::train::run(&cfg, data, out, resume.as_deref())),

        Command::Infer {
            ref common,
            ref model,
            ref data,
            ref wav,
            ref out,
            ref strategy,
            l_enroll,
            l_stop,
            threshold,
            oracle_speakers,
            max_speakers,
            median_window,
        } => RunConfig::resolve(common.config.as_deref(), &|cfg: &mut RunConfig| {
            apply_common(cfg, common);
            if let Some(v) = strategy {
                cfg.strategy = v.clone();
            }
            if let Some(v) = l_enroll {
                cfg.l_enroll = v;
            }
            if let Some(v) = l_stop {
                cfg.l_stop = v;
            }
            if let Some(v) = threshold {
                cfg.threshold = v;
            }
            if oracle_speakers.is_some() {
                cfg.oracle_speakers = oracle_speakers;
            }
            if let Some(v) = max_speakers {
                cfg.max_speakers = v;
            }
            if let Some(v) = median_window {
                cfg.median_window = v;
            }
        })
        .and_then(|cfg| commands::infer::run(&cfg, model, data.as_deref(), wav.as_deref(), out)),

        Command::Score {
            ref common,
            ref reference,
            ref hyp,
            ref out,
            collar,
            no_score_overlap,
            ref ref_manifest,
            ref reports,
            ref fa_denominator,
        } => RunConfig::resolve(common.config.as_deref(), &|cfg: &mut RunConfig| {
            apply_common(cfg, common);
            if let Some(v) = collar {
                cfg.collar = v;
            }
            if no_score_overlap {
                cfg.score_overlap = false;
            }
            if let Some(v) = fa_denominator {
                cfg.fa_denominator = v.clone();
            }
        })
        .and_then(|cfg| {
            commands::score::run(
                &cfg,
                reference,
                hyp,
                out.as_deref(),
                ref_manifest.as_deref(),
                reports.as_deref(),
            )
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
