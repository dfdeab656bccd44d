use std::path::Path;

use serde_json::{json, Value};

use crate::config::Settings;
use crate::error::CliResult;

/// Writes `manifest_<command>.json` under the output directory. Contents
/// depend only on the inputs, so reruns produce identical files.
pub fn write(settings: &Settings, command: &str, resolved: Value, outputs: &[&Path]) -> CliResult<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings.explicit(),
        "resolved": resolved,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = settings.out().join(format!("manifest_{command}.json"));
    let mut text = serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
