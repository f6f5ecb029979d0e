//! `pimforce train`: fit a model on a preprocessed dataset.
//!
//! Model architecture comes from --model JSON or a named preset; training
//! hyperparameters from --config JSON with flag overrides on top. The
//! checkpoint embeds both configs, the dataset's pipeline settings and
//! pose scaler, and the per-epoch loss history, so downstream commands
//! need nothing but the checkpoint and new data.

use anyhow::{bail, Context, Result};
use clap::Args;
use pimforce_core::io::{save_checkpoint, Dataset};
use pimforce_core::nn::{train, ModelConfig, TrainConfig};
use std::path::PathBuf;

use crate::config::{load_or_default, to_json_pretty};

#[derive(Args)]
pub struct TrainArgs {
    /// Preprocessed dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Model architecture JSON.
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    /// Named architecture: "full" (publication scale) or "desk" (CPU scale).
    #[arg(long, value_parser = ["full", "desk"])]
    preset: Option<String>,
    /// Training hyperparameter JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate (overrides config).
    #[arg(long)]
    lr: Option<f64>,
    /// Regression loss weight (overrides config).
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight init and shuffle seed (overrides config).
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let model_cfg: ModelConfig = match (&args.model, args.preset.as_deref()) {
        (Some(path), None) => load_or_default(Some(path.as_path()))?,
        (None, Some("full")) => ModelConfig::full(),
        (None, Some("desk")) | (None, None) => ModelConfig::desk(),
        (None, Some(other)) => bail!("unknown preset {other:?}"),
        (Some(_), Some(_)) => unreachable!("clap rejects --model with --preset"),
    };

    let mut tc: TrainConfig = load_or_default(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(lr) = args.lr {
        tc.adam.lr = lr;
    }
    if let Some(l) = args.lambda {
        tc.lambda = l;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }

    let dataset = Dataset::load(&args.data)?;
    let training = dataset.to_training_set(model_cfg.hand_input_pool)?;

    println!("effective model config:\n{}", to_json_pretty(&model_cfg)?);
    println!("effective train config:\n{}", to_json_pretty(&tc)?);
    println!(
        "training on {} samples (grid {}, pool {})",
        training.len(),
        training.grid(),
        training.pool()
    );

    let (mut model, history) = train(&model_cfg, &training, &tc)?;
    for h in &history {
        println!(
            "epoch {:>3}  loss {:.6}  contact {:.6}  force {:.6}",
            h.epoch, h.loss, h.l_c, h.l_r
        );
    }

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    save_checkpoint(
        &args.out,
        &mut model,
        &tc,
        &dataset.manifest.pipeline,
        &dataset.manifest.scaler,
        &history,
    )?;
    println!(
        "train: wrote {} ({} parameters)",
        args.out.display(),
        model.param_count()
    );
    Ok(())
}
