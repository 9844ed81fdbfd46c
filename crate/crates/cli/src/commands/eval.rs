//! `hnpm eval`: probe a frozen checkpoint.

use std::path::PathBuf;

use clap::Args;

use hnpm_core::checkpoint::Checkpoint;
use hnpm_core::config::DatasetSpec;
use hnpm_core::eval::{extract_representations, knn_probe, linear_probe, EvalReport, ProbeHyper};
use hnpm_core::{Error, Result};

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Probe kind.
    #[arg(long, value_parser = ["linear", "knn"], default_value = "linear")]
    pub mode: String,
    /// Dataset override, e.g. `synthetic:k=5,dim=32,n_per_class=500,seed=1`
    /// or `cifar:/path/batch.bin`. Defaults to the checkpoint's dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Where to write the report (default: next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Neighbor count for knn mode.
    #[arg(long, default_value_t = 5)]
    pub k_neighbors: usize,
}

pub fn run(args: EvalArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset_spec = match &args.dataset {
        Some(inline) => DatasetSpec::parse_inline(inline)?,
        None => ckpt.config.dataset.clone(),
    };
    let dataset = dataset_spec.load()?;
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::contract("evaluation dataset has no labels"))?
        .to_vec();

    let (reps, _) = extract_representations(
        &ckpt.config.encoder,
        &ckpt.teacher,
        &dataset,
        &ckpt.config.augmentation,
    )?;

    let report: EvalReport = match args.mode.as_str() {
        "linear" => linear_probe(&reps, &labels, ProbeHyper::default())?.1,
        "knn" => knn_probe(&reps, &labels, args.k_neighbors)?,
        other => return Err(Error::config(format!("unknown eval mode '{other}'"))),
    };

    let out = args.out.unwrap_or_else(|| {
        args.checkpoint
            .with_file_name(format!("report_{}.json", args.mode))
    });
    report.write(&out)?;

    println!("top1 {:.3}", report.top1);
    println!("top5 {:.3}", report.top5);
    println!("wrote {}", out.display());
    Ok(0)
}
