use serde_json::json;

use gsdm_core::datasets;

use super::ensure_dir;
use crate::config::Settings;
use crate::error::CliResult;
use crate::manifest;

pub fn gen_data(settings: &Settings) -> CliResult<()> {
    let spec = settings.dataset_spec()?;
    let graphs = datasets::generate(&spec)?;
    let (train, test) = datasets::split(&graphs, spec.train_fraction, spec.seed)?;
    ensure_dir(settings.out())?;
    let (train_path, test_path) = (settings.train_path(), settings.test_path());
    datasets::save_dataset(&train, &train_path)?;
    datasets::save_dataset(&test, &test_path)?;
    log::info!("{}: {} graphs ({} train / {} test)", spec.name, graphs.len(), train.len(), test.len());
    manifest::write(
        settings,
        "gen-data",
        json!({ "dataset": spec, "counts": { "total": graphs.len(), "train": train.len(), "test": test.len() } }),
        &[&train_path, &test_path],
    )
}
