use std::path::Path;

use serde_json::json;

use gsdm_core::scorenet::checkpoint;
use gsdm_core::training;

use super::{create, ensure_dir, load_graphs};
use crate::config::Settings;
use crate::error::CliResult;
use crate::manifest;

pub fn train(settings: &Settings, resume: Option<&Path>) -> CliResult<()> {
    let data = load_graphs(&settings.train_path(), "training")?;
    let mut cfg = settings.train_config(data[0].d())?;
    ensure_dir(settings.out())?;
    if cfg.checkpoint_every > 0 {
        let dir = settings.out().join("checkpoints");
        ensure_dir(&dir)?;
        cfg.checkpoint_dir = Some(dir);
    }
    log::info!(
        "training {} model on {} graphs for {} steps",
        cfg.arch.variant,
        data.len(),
        cfg.total_steps(data.len())
    );
    let output = match resume {
        Some(path) => training::resume(path, &data, &cfg)?,
        None => training::train(&data, &cfg)?,
    };
    let ckpt_path = settings.checkpoint_path();
    checkpoint::save(&ckpt_path, &output.checkpoint())?;
    let loss_path = settings.out().join("loss.csv");
    training::write_loss_csv(&output.history, create(&loss_path)?)?;
    let means = output.epoch_means();
    if let Some((epoch, loss)) = means.last() {
        log::info!("epoch {epoch}: mean loss {loss:.6}");
    }
    manifest::write(
        settings,
        "train",
        json!({
            "train": cfg,
            "n_graphs": data.len(),
            "steps": output.steps,
            "resumed_from": resume.map(|p| p.display().to_string()),
            "final_epoch_loss": means.last().map(|m| m.1),
        }),
        &[&ckpt_path, &loss_path],
    )
}
