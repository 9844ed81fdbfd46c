//! `hnpm train`: run the full training loop and persist artifacts.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use hnpm_core::config::TrainConfig;
use hnpm_core::metrics::{write_metrics, MetricsRecord};
use hnpm_core::trainer::Trainer;
use hnpm_core::{Error, Result};

use super::{ensure_dir, resolve_config, unix_now, RunPaths};

#[derive(Args)]
pub struct TrainArgs {
    /// TOML config file (mutually exclusive with --preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset: `paper` (published recipe) or `desk` (default).
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, metrics and the manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Print one line per epoch.
    #[arg(long)]
    pub quiet: bool,
}

/// Everything needed to reproduce a completed run.
#[derive(Serialize)]
struct RunManifest<'a> {
    toolkit_version: &'static str,
    seed: u64,
    config: &'a TrainConfig,
    checkpoint: String,
    metrics: String,
    started_unix: f64,
    finished_unix: f64,
    epochs_run: usize,
}

pub fn run(args: TrainArgs) -> Result<i32> {
    let cfg = resolve_config(args.config.as_deref(), args.preset.as_deref(), args.seed)?;
    ensure_dir(&args.out)?;
    let paths = RunPaths::new(&args.out);
    let started_unix = unix_now();

    cfg.save(&paths.config)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut records: Vec<MetricsRecord> = Vec::with_capacity(cfg.epochs);
    let quiet = args.quiet;
    let every = cfg.checkpoint_every;
    let out_dir = paths.dir.clone();
    let run_records = trainer.train_with(|state, record| {
        if !quiet {
            println!(
                "epoch {:>4}  loss {:>10.6}  pos {:>10.6}  neg {:>10.6}  lr {:>9.6}  sets {:>5.1}  empty {}",
                record.epoch,
                record.loss_total,
                record.loss_pos,
                record.loss_neg,
                record.lr,
                record.mean_hard_set_size,
                record.empty_set_count
            );
        }
        if every > 0 && (record.epoch + 1) % every == 0 {
            let path = out_dir.join(format!("checkpoint_epoch{:04}.hnpm", record.epoch));
            state.checkpoint().save(&path)?;
        }
        Ok(())
    })?;
    records.extend(run_records);

    write_metrics(&paths.metrics, &records)?;
    trainer.checkpoint().save(&paths.checkpoint)?;

    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: &cfg,
        checkpoint: paths.checkpoint.display().to_string(),
        metrics: paths.metrics.display().to_string(),
        started_unix,
        finished_unix: unix_now(),
        epochs_run: records.len(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
    std::fs::write(&paths.manifest, text + "\n")?;

    if !quiet {
        println!("wrote {}", paths.checkpoint.display());
        println!("wrote {}", paths.metrics.display());
    }
    Ok(0)
}
