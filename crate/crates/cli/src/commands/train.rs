use crate::config::RunConfig;
use aedd_core::simulate::load_dataset;
use aedd_core::train::{Checkpoint, TrainLogRecord, Trainer};
use anyhow::{bail, Context, Result};
use std::io::Write;
use std::path::Path;

pub fn run(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(data).context("loading dataset")?;
    if dataset.is_empty() {
        bail!(aedd_core::Error::input("dataset manifest is empty"));
    }
    let f_in = dataset[0].features.f;
    let n_speakers = dataset[0].n_speakers;
    for mix in &dataset {
        if mix.features.f != f_in {
            bail!(aedd_core::Error::input("mixtures disagree on feature dimension"));
        }
    }

    // The input width always comes from the data.
    let mut cfg = cfg.clone();
    cfg.f_in = f_in;
    cfg.echo(out, "train")?;

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path).context("loading resume checkpoint")?;
            if ck.model_cfg != cfg.model_config() {
                bail!(aedd_core::Error::input(
                    "checkpoint model configuration differs from the requested one"
                ));
            }
            eprintln!("resuming from epoch {}", ck.epoch);
            ck.into_trainer()
        }
        None => Trainer::new(cfg.model_config(), cfg.train_config())?,
    };

    let log_path = out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?,
    );

    let total_epochs = cfg.epochs;
    let mut last_ckpt = None;
    while trainer.epoch < total_epochs {
        let epoch = trainer.epoch + 1;
        let epoch_result = {
            let log = &mut log;
            trainer.run_epoch(&dataset, |s| {
                let record = TrainLogRecord {
                    step: s.step,
                    epoch,
                    loss: s.loss,
                    lr: s.lr,
                    grad_norm: s.grad_norm,
                };
                if let Ok(line) = serde_json::to_string(&record) {
                    let _ = writeln!(log, "{line}");
                }
            })
        };
        let stats = match epoch_result {
            Ok(stats) => stats,
            Err(err) => {
                // Numeric aborts leave a diagnostic dump next to the log.
                let diag = serde_json::json!({
                    "error": err.to_string(),
                    "epoch": trainer.epoch + 1,
                    "opt_step": trainer.opt.step,
                    "n_speakers": n_speakers,
                });
                std::fs::write(
                    out.join("abort_diagnostic.json"),
                    serde_json::to_string_pretty(&diag)?,
                )?;
                bail!(err);
            }
        };
        eprintln!(
            "epoch {}/{total_epochs}: loss {:.4} (lr {:.2e})",
            stats.epoch, stats.mean_loss, stats.last_lr
        );
        if trainer.epoch % cfg.checkpoint_every.max(1) == 0 || trainer.epoch == total_epochs {
            let path = out.join(format!("ckpt_e{:04}.aedd", trainer.epoch));
            Checkpoint::from_trainer(&trainer).save(&path)?;
            last_ckpt = Some(path);
        }
    }
    log.flush()?;

    let final_path = out.join("ckpt_final.aedd");
    Checkpoint::from_trainer(&trainer).save(&final_path)?;
    if let Some(p) = last_ckpt {
        eprintln!("checkpoints: {} and {}", p.display(), final_path.display());
    }
    println!(
        "trained {} epochs on {} mixtures; final loss {:.4}; model {}",
        trainer.epoch,
        dataset.len(),
        trainer.running_loss,
        final_path.display()
    );
    Ok(())
}
