//! One-axis sweeps: sampling steps, noise schedule, α-quantile fraction and
//! synthetic eigenvalue distribution. Output is a long-format CSV
//! `axis,value,trial,statistic,mmd` (one `avg` row per run) plus a chart.

use std::io::Write;

use anyhow::Context;
use serde_json::json;

use gsdm_core::datasets::{self, DatasetName};
use gsdm_core::metrics::{self, MetricsTable, Statistic};
use gsdm_core::schedules::ABLATION_FAMILIES;
use gsdm_core::scorenet::checkpoint;
use gsdm_core::{training, Graph, ScoreNetParams, Variant};

use super::sample::generate;
use super::{create, ensure_dir, load_graphs};
use crate::args::Axis;
use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::{manifest, svg};

pub const STEP_VALUES: [usize; 5] = [50, 100, 200, 500, 1000];

fn alpha_values() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

struct Row {
    value: String,
    trial: usize,
    table: MetricsTable,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Self::Steps => "steps",
            Self::Schedule => "schedule",
            Self::Alpha => "alpha",
            Self::Eigdist => "eigdist",
        }
    }
}

/// Train/test split from the data files, or generated in memory when the
/// files are absent.
fn data_split(settings: &Settings) -> CliResult<(Vec<Graph>, Vec<Graph>)> {
    let (train_path, test_path) = (settings.train_path(), settings.test_path());
    if train_path.exists() && test_path.exists() {
        return Ok((load_graphs(&train_path, "training")?, load_graphs(&test_path, "test")?));
    }
    let spec = settings.dataset_spec()?;
    log::info!("no data files under {}; generating {} in memory", settings.out().display(), spec.name);
    Ok(datasets::split(&datasets::generate(&spec)?, spec.train_fraction, spec.seed)?)
}

fn train_params(settings: &Settings, train: &[Graph], trial: usize) -> CliResult<ScoreNetParams> {
    let mut cfg = settings.train_config(train[0].d())?;
    cfg.seed += trial as u64;
    Ok(training::train(train, &cfg)?.params)
}

/// Samples and evaluates one configuration.
fn measure(
    settings: &Settings,
    params: &ScoreNetParams,
    train: &[Graph],
    test: &[Graph],
    trial: usize,
    stats: &[Statistic],
) -> CliResult<MetricsTable> {
    let mut cfg = settings.sample_config(params.arch.variant)?;
    cfg.seed += trial as u64;
    let count = settings.sample_count(test.len())?;
    let graphs: Vec<Graph> = generate(params, train, &cfg, count)?.into_iter().map(|g| g.graph).collect();
    Ok(metrics::evaluate(&graphs, test, stats, &settings.bandwidths()?)?)
}

fn with_key(settings: &Settings, key: &str, value: impl ToString) -> CliResult<Settings> {
    let mut s = settings.clone();
    s.set(key, value.to_string())?;
    Ok(s)
}

fn sweep(settings: &Settings, axis: Axis, train_inline: bool, trials: usize) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    match axis {
        Axis::Steps | Axis::Alpha => {
            let (train, test) = data_split(settings)?;
            let stats = settings.statistics()?;
            let values: Vec<String> = match axis {
                Axis::Steps => STEP_VALUES.iter().map(|v| v.to_string()).collect(),
                _ => alpha_values().iter().map(|v| format!("{v:.1}")).collect(),
            };
            let key = if axis == Axis::Steps { "sample.steps" } else { "sample.alpha" };
            for trial in 0..trials {
                let params = if train_inline {
                    train_params(settings, &train, trial)?
                } else {
                    let path = settings.checkpoint_path();
                    checkpoint::load(&path)
                        .with_context(|| format!("loading checkpoint {} (or pass --train-inline)", path.display()))?
                        .params
                };
                if axis == Axis::Alpha && params.arch.variant != Variant::Spectral {
                    return Err(CliError::usage("the alpha axis needs a spectral model"));
                }
                for v in &values {
                    let s = with_key(settings, key, v)?;
                    log::info!("{}={v} trial {trial}", axis.name());
                    let table = measure(&s, &params, &train, &test, trial, &stats)?;
                    rows.push(Row { value: v.clone(), trial, table });
                }
            }
        }
        Axis::Schedule => {
            require_inline(axis, train_inline)?;
            let (train, test) = data_split(settings)?;
            let stats = settings.statistics()?;
            for family in ABLATION_FAMILIES {
                let s = with_key(settings, "schedule.family", family.name())?;
                for trial in 0..trials {
                    log::info!("schedule={} trial {trial}", family.name());
                    let params = train_params(&s, &train, trial)?;
                    let table = measure(&s, &params, &train, &test, trial, &stats)?;
                    rows.push(Row {
                        value: family.name().into(),
                        trial,
                        table,
                    });
                }
            }
        }
        Axis::Eigdist => {
            require_inline(axis, train_inline)?;
            for (label, name) in [
                ("even", DatasetName::SyntheticEven),
                ("moderate", DatasetName::SyntheticModerate),
                ("skewed", DatasetName::SyntheticSkewed),
            ] {
                let mut s = with_key(settings, "dataset.name", name.name())?;
                if settings.get::<String>("eval.statistics")?.is_none() {
                    s.set("eval.statistics", "adjacency")?;
                }
                let spec = s.dataset_spec()?;
                let (train, test) = datasets::split(&datasets::generate(&spec)?, spec.train_fraction, spec.seed)?;
                let stats = s.statistics()?;
                for trial in 0..trials {
                    log::info!("eigdist={label} trial {trial}");
                    let params = train_params(&s, &train, trial)?;
                    let table = measure(&s, &params, &train, &test, trial, &stats)?;
                    rows.push(Row {
                        value: label.into(),
                        trial,
                        table,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn require_inline(axis: Axis, train_inline: bool) -> CliResult<()> {
    if train_inline {
        Ok(())
    } else {
        Err(CliError::usage(format!("the {} axis trains one model per configuration; pass --train-inline", axis.name())))
    }
}

/// Distinct values in first-seen order.
fn ordered_values(rows: &[Row]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.value) {
            out.push(r.value.clone());
        }
    }
    out
}

fn chart(axis: Axis, rows: &[Row]) -> String {
    let values = ordered_values(rows);
    let avgs = |v: &str| -> Vec<f64> { rows.iter().filter(|r| r.value == v).map(|r| r.table.avg).collect() };
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let title = format!("ablation: {}", axis.name());
    match axis {
        Axis::Steps | Axis::Alpha => {
            let mut series: Vec<(String, Vec<f64>)> = Vec::new();
            if let Some(first) = rows.first() {
                for (stat, _) in &first.table.rows {
                    let ys = values
                        .iter()
                        .map(|v| mean(rows.iter().filter(|r| &r.value == v).filter_map(|r| r.table.get(*stat)).collect()))
                        .collect();
                    series.push((stat.name().into(), ys));
                }
            }
            series.push(("avg".into(), values.iter().map(|v| mean(avgs(v))).collect()));
            svg::line_chart(&title, "MMD", &values, &series)
        }
        Axis::Schedule => svg::box_plot(&title, "avg MMD", &values.iter().map(|v| (v.clone(), avgs(v))).collect::<Vec<_>>()),
        Axis::Eigdist => svg::bar_chart(&title, "avg MMD", &values.iter().map(|v| (v.clone(), mean(avgs(v)))).collect::<Vec<_>>()),
    }
}

pub fn ablate(settings: &Settings, axis: Axis, train_inline: bool) -> CliResult<()> {
    let default_trials = if axis == Axis::Schedule { 5 } else { 1 };
    let trials: usize = settings.get("ablate.trials")?.unwrap_or(default_trials);
    if trials == 0 {
        return Err(CliError::usage("ablate.trials must be at least 1"));
    }
    let rows = sweep(settings, axis, train_inline, trials)?;
    ensure_dir(settings.out())?;
    let csv_path = settings.out().join(format!("ablation_{}.csv", axis.name()));
    let mut w = create(&csv_path)?;
    writeln!(w, "axis,value,trial,statistic,mmd")?;
    for r in &rows {
        for (stat, m) in &r.table.rows {
            writeln!(w, "{},{},{},{},{}", axis.name(), r.value, r.trial, stat.name(), m.value)?;
        }
        writeln!(w, "{},{},{},avg,{}", axis.name(), r.value, r.trial, r.table.avg)?;
    }
    w.flush()?;
    let svg_path = settings.out().join(format!("ablation_{}.svg", axis.name()));
    std::fs::write(&svg_path, chart(axis, &rows)).with_context(|| format!("writing {}", svg_path.display()))?;
    for v in ordered_values(&rows) {
        let avgs: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.table.avg).collect();
        println!("{:<10} avg {:.6}", v, avgs.iter().sum::<f64>() / avgs.len() as f64);
    }
    manifest::write(
        settings,
        "ablate",
        json!({
            "axis": axis.name(),
            "values": ordered_values(&rows),
            "trials": trials,
            "train_inline": train_inline,
        }),
        &[&csv_path, &svg_path],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values() {
        assert_eq!(STEP_VALUES, [50, 100, 200, 500, 1000]);
        let a = alpha_values();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.1);
        assert_eq!(a[9], 1.0);
    }
}
