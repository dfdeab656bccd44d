use std::io::Write;

use anyhow::Context;
use serde_json::json;

use gsdm_core::metrics::{self, MetricsTable, METRICS_HEADER};

use super::{create, ensure_dir, load_graphs};
use crate::config::Settings;
use crate::error::CliResult;
use crate::{manifest, svg};

pub(super) fn table_bars(table: &MetricsTable) -> Vec<(String, f64)> {
    let mut bars: Vec<(String, f64)> = table.rows.iter().map(|(s, r)| (s.name().to_string(), r.value)).collect();
    bars.push(("avg".into(), table.avg));
    bars
}

pub fn eval(settings: &Settings) -> CliResult<()> {
    let generated = load_graphs(&settings.generated_path(), "generated")?;
    let test = load_graphs(&settings.test_path(), "test")?;
    let stats = settings.statistics()?;
    let bw = settings.bandwidths()?;
    let table = metrics::evaluate(&generated, &test, &stats, &bw)?;
    let dataset = settings.dataset_name()?;
    let method: String = settings.get("eval.method")?.unwrap_or_else(|| "gsdm".into());
    let seed = settings.seed("sample")?;
    ensure_dir(settings.out())?;
    let csv_path = settings.out().join("metrics.csv");
    let mut w = create(&csv_path)?;
    writeln!(w, "{METRICS_HEADER}")?;
    metrics::write_metrics_rows(&table, dataset.name(), &method, seed, &mut w)?;
    w.flush()?;
    let svg_path = settings.out().join("metrics.svg");
    let chart = svg::bar_chart(&format!("{method} on {dataset}"), "MMD", &table_bars(&table));
    std::fs::write(&svg_path, chart).with_context(|| format!("writing {}", svg_path.display()))?;
    for (s, r) in &table.rows {
        println!("{:<12} {:.6}", s.name(), r.value);
    }
    println!("{:<12} {:.6}", "avg", table.avg);
    manifest::write(
        settings,
        "eval",
        json!({
            "dataset": dataset.name(),
            "method": method,
            "statistics": stats.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "bandwidths": bw,
            "n_generated": table.n_generated,
            "n_test": table.n_test,
            "avg": table.avg,
        }),
        &[&csv_path, &svg_path],
    )
}
