//! `hnpm ablate`: sweep one axis (tau, hard negative mining, or student
//! gradient blocking) and compare final loss and linear-probe accuracy.

use std::path::PathBuf;

use clap::Args;

use hnpm_core::config::TrainConfig;
use hnpm_core::eval::{extract_representations, linear_probe, ProbeHyper};
use hnpm_core::metrics::write_metrics;
use hnpm_core::trainer::Trainer;
use hnpm_core::{Error, Result};

use super::{ensure_dir, resolve_config};

#[derive(Args)]
pub struct AblateArgs {
    /// TOML config file for the base run (mutually exclusive with --preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset for the base run.
    #[arg(long)]
    pub preset: Option<String>,
    /// Shared seed across all runs.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sweep axis.
    #[arg(long, value_parser = ["tau", "hnpm", "blockgrad"])]
    pub axis: String,
    /// Comma-separated values: floats for tau, on/off otherwise.
    #[arg(long)]
    pub values: String,
    /// Output directory (one subdirectory per value).
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

enum AxisValue {
    Tau(f64),
    Switch(bool),
}

fn parse_values(axis: &str, values: &str) -> Result<Vec<(String, AxisValue)>> {
    values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|raw| {
            let v = raw.trim();
            match axis {
                "tau" => {
                    let tau: f64 = v
                        .parse()
                        .map_err(|_| Error::config(format!("tau value '{v}' is not a number")))?;
                    Ok((format!("tau_{v}"), AxisValue::Tau(tau)))
                }
                _ => match v {
                    "on" => Ok((format!("{axis}_on"), AxisValue::Switch(true))),
                    "off" => Ok((format!("{axis}_off"), AxisValue::Switch(false))),
                    other => Err(Error::config(format!(
                        "{axis} value '{other}' must be on or off"
                    ))),
                },
            }
        })
        .collect()
}

fn apply(cfg: &mut TrainConfig, axis: &str, value: &AxisValue) {
    match (axis, value) {
        ("tau", AxisValue::Tau(tau)) => cfg.tau = *tau,
        ("hnpm", AxisValue::Switch(on)) => cfg.hnpm_enabled = *on,
        ("blockgrad", AxisValue::Switch(on)) => cfg.block_student_grad = *on,
        _ => unreachable!("axis/value parsed together"),
    }
}

struct RunOutcome {
    label: String,
    final_loss: f64,
    last10_variance: f64,
    top1: f64,
}

fn run_one(base: &TrainConfig, label: &str, out_dir: &PathBuf) -> Result<RunOutcome> {
    let run_dir = out_dir.join(label);
    ensure_dir(&run_dir)?;
    base.save(&run_dir.join("config.toml"))?;

    let mut trainer = Trainer::new(base.clone())?;
    let records = trainer.train()?;
    write_metrics(&run_dir.join("metrics.jsonl"), &records)?;
    trainer.checkpoint().save(&run_dir.join("checkpoint.hnpm"))?;

    let (reps, labels) = extract_representations(
        &base.encoder,
        trainer.student_teacher().teacher(),
        trainer.dataset(),
        &base.augmentation,
    )?;
    let labels = labels.ok_or_else(|| Error::contract("ablation dataset has no labels"))?;
    let (_, report) = linear_probe(&reps, &labels, ProbeHyper::default())?;

    let last10: Vec<f64> = records.iter().rev().take(10).map(|r| r.loss_total).collect();
    let mean = last10.iter().sum::<f64>() / last10.len().max(1) as f64;
    let variance =
        last10.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / last10.len().max(1) as f64;

    Ok(RunOutcome {
        label: label.to_string(),
        final_loss: records.last().map(|r| r.loss_total).unwrap_or(f64::NAN),
        last10_variance: variance,
        top1: report.top1,
    })
}

pub fn run(args: AblateArgs) -> Result<i32> {
    let base = resolve_config(args.config.as_deref(), args.preset.as_deref(), args.seed)?;
    let values = parse_values(&args.axis, &args.values)?;
    if values.is_empty() {
        return Err(Error::config("--values is empty"));
    }
    ensure_dir(&args.out)?;

    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    for (label, value) in &values {
        let mut cfg = base.clone();
        apply(&mut cfg, &args.axis, value);
        match run_one(&cfg, label, &args.out) {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                eprintln!("run {label} failed: {e}");
                failed += 1;
            }
        }
    }

    println!(
        "{:<16} {:>12} {:>16} {:>8}",
        "value", "final loss", "last10 var", "top1"
    );
    for o in &outcomes {
        println!(
            "{:<16} {:>12.6} {:>16.3e} {:>8.3}",
            o.label, o.final_loss, o.last10_variance, o.top1
        );
    }
    Ok(if failed > 0 { 1 } else { 0 })
}
