mod ablate;
mod data;
mod eval;
mod sample;
mod train;
mod verify;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use gsdm_core::datasets;
use gsdm_core::Graph;

use crate::error::{CliError, CliResult};

pub use ablate::ablate;
pub use data::gen_data;
pub use eval::eval;
pub use sample::sample;
pub use train::train;
pub use verify::verify;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn load_graphs(path: &Path, what: &str) -> CliResult<Vec<Graph>> {
    let graphs = datasets::load_dataset(path).with_context(|| format!("loading {what} set {}", path.display()))?;
    if graphs.is_empty() {
        return Err(CliError::runtime(format!("{what} set {} is empty", path.display())));
    }
    Ok(graphs)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}
