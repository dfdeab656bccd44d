use anyhow::Context;
use serde_json::json;

use gsdm_core::datasets;
use gsdm_core::sampling::{generate_batch, write_timing_csv, EigenBank, Model};
use gsdm_core::scorenet::{checkpoint, NetworkScore};
use gsdm_core::{Graph, ScoreNetParams, Variant};

use super::{create, ensure_dir, load_graphs};
use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::manifest;

/// Generates `count` graphs from `params` with eigenbases and sizes taken
/// from `train`. Returns the graphs and their per-chain times.
pub(super) fn generate(
    params: &ScoreNetParams,
    train: &[Graph],
    config: &gsdm_core::SampleConfig,
    count: usize,
) -> CliResult<Vec<gsdm_core::sampling::Generated>> {
    let bank = EigenBank::new(train)?;
    if params.arch.feature_dim != bank.feature_dim() {
        return Err(CliError::runtime(format!(
            "checkpoint expects {} node features but the dataset has {}",
            params.arch.feature_dim,
            bank.feature_dim()
        )));
    }
    let net = NetworkScore::new(params, config.sched_x, config.sched_structure);
    let model = match params.arch.variant {
        Variant::Spectral => Model::Spectral(&net),
        Variant::FullRank => Model::FullRank(&net),
    };
    Ok(generate_batch(model, &bank, count, config)?)
}

pub fn sample(settings: &Settings) -> CliResult<()> {
    let ckpt_path = settings.checkpoint_path();
    let ckpt = checkpoint::load(&ckpt_path).with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let variant = ckpt.params.arch.variant;
    if let Some(requested) = settings.get::<Variant>("model.variant")? {
        if requested != variant {
            return Err(CliError::runtime(format!("checkpoint holds a {variant} model but {requested} was requested")));
        }
    }
    let train = load_graphs(&settings.train_path(), "training")?;
    let test_path = settings.test_path();
    let default_count = if test_path.exists() {
        datasets::load_dataset(&test_path)?.len().max(1)
    } else {
        train.len()
    };
    let count = settings.sample_count(default_count)?;
    let cfg = settings.sample_config(variant)?;
    log::info!("sampling {count} graphs with {} ({} steps)", cfg.solver, cfg.steps);
    let generated = generate(&ckpt.params, &train, &cfg, count)?;
    ensure_dir(settings.out())?;
    let out_path = settings.generated_path();
    let graphs: Vec<Graph> = generated.iter().map(|g| g.graph.clone()).collect();
    datasets::save_dataset(&graphs, &out_path)?;
    let timing_path = settings.out().join("timing.csv");
    write_timing_csv(&generated, create(&timing_path)?)?;
    let mean_ms = generated.iter().map(|g| g.millis).sum::<f64>() / generated.len() as f64;
    log::info!("mean chain time {mean_ms:.1} ms");
    manifest::write(
        settings,
        "sample",
        json!({
            "sample": cfg,
            "variant": variant.to_string(),
            "count": count,
            "checkpoint": ckpt_path.display().to_string(),
            "checkpoint_step": ckpt.step,
        }),
        &[&out_path, &timing_path],
    )
}
