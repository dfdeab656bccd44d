//! Flat `key=value` settings with dotted sections (`schedule.family=cosine`).
//!
//! Values come from an optional file, then positional overrides, then
//! dedicated flags; later sources win. Unknown keys are rejected so typos
//! cannot silently fall back to defaults. Keys left unset resolve to the
//! library defaults, and the resolved structs are what manifests record.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gsdm_core::datasets::{DatasetName, DatasetSpec};
use gsdm_core::metrics::{Bandwidths, Statistic, DEFAULT_STATISTICS};
use gsdm_core::oracles::VerifyOptions;
use gsdm_core::schedules::{ScheduleFamily, ScheduleKind};
use gsdm_core::scorenet::Arch;
use gsdm_core::training::Optimizer;
use gsdm_core::{NoiseSchedule, SampleConfig, Solver, TrainConfig, Variant};

use crate::error::{CliError, CliResult};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "dataset.name",
    "dataset.count",
    "dataset.n_min",
    "dataset.n_max",
    "dataset.n_fixed",
    "dataset.p_intra",
    "dataset.inter_rate",
    "dataset.d_max",
    "dataset.ego_host_nodes",
    "dataset.skew_factor",
    "dataset.train_fraction",
    "dataset.seed",
    "data.train",
    "data.test",
    "model.variant",
    "model.hidden",
    "model.time_dim",
    "model.eigvec_features",
    "model.checkpoint",
    "schedule.kind",
    "schedule.family",
    "schedule.beta_min",
    "schedule.beta_max",
    "schedule.sigma_min",
    "schedule.sigma_max",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.optimizer",
    "train.t_eps",
    "train.max_steps",
    "train.checkpoint_every",
    "train.seed",
    "sample.steps",
    "sample.snr",
    "sample.eps_s",
    "sample.langevin_step",
    "sample.alpha",
    "sample.solver",
    "sample.count",
    "sample.threshold",
    "sample.seed",
    "data.generated",
    "eval.method",
    "eval.statistics",
    "eval.bw_degree",
    "eval.bw_clustering",
    "eval.bw_orbit",
    "eval.bw_adjacency",
    "ablate.trials",
    "verify.cov_samples",
    "verify.chains",
    "verify.sampler_steps",
    "verify.em_paths",
    "verify.em_steps",
];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    out: PathBuf,
}

/// Splits `key=value`, trimming both sides.
fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then_some((k, v))
}

impl Settings {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            values: BTreeMap::new(),
            out: out.into(),
        }
    }

    /// Parses config text; `#` starts a comment line.
    pub fn parse_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| CliError::usage(format!("{origin}:{}: expected key=value, got `{line}`", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        self.parse_text(&text, &path.display().to_string())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| CliError::usage(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn explicit(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::usage(format!("bad value `{v}` for {key}: {e}"))))
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Global seed, then a per-section override.
    pub fn seed(&self, section: &str) -> CliResult<u64> {
        let base = self.get_or("seed", 0u64)?;
        self.get_or(&format!("{section}.seed"), base)
    }

    fn path_or(&self, key: &str, file: &str) -> PathBuf {
        self.values.get(key).map(PathBuf::from).unwrap_or_else(|| self.out.join(file))
    }

    pub fn train_path(&self) -> PathBuf {
        self.path_or("data.train", "train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.path_or("data.test", "test.jsonl")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path_or("model.checkpoint", "model.ckpt")
    }

    pub fn generated_path(&self) -> PathBuf {
        self.path_or("data.generated", "generated.jsonl")
    }

    pub fn dataset_name(&self) -> CliResult<DatasetName> {
        self.get_or("dataset.name", DatasetName::CommunitySmall)
    }

    pub fn dataset_spec(&self) -> CliResult<DatasetSpec> {
        let d = DatasetSpec::default_for(self.dataset_name()?);
        let spec = DatasetSpec {
            count: self.get_or("dataset.count", d.count)?,
            n_min: self.get_or("dataset.n_min", d.n_min)?,
            n_max: self.get_or("dataset.n_max", d.n_max)?,
            n_fixed: self.get_or("dataset.n_fixed", d.n_fixed)?,
            p_intra: self.get_or("dataset.p_intra", d.p_intra)?,
            inter_rate: self.get_or("dataset.inter_rate", d.inter_rate)?,
            d_max: self.get_or("dataset.d_max", d.d_max)?,
            ego_host_nodes: self.get_or("dataset.ego_host_nodes", d.ego_host_nodes)?,
            skew_factor: self.get_or("dataset.skew_factor", d.skew_factor)?,
            train_fraction: self.get_or("dataset.train_fraction", d.train_fraction)?,
            seed: self.seed("dataset")?,
            ..d
        };
        spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        let family = self.get_or("schedule.family", ScheduleFamily::Linear)?;
        let base = match self.get_or("schedule.kind", ScheduleKind::Vp)? {
            ScheduleKind::Vp => NoiseSchedule::vp(family),
            ScheduleKind::Ve => NoiseSchedule::ve(family),
        };
        let s = NoiseSchedule {
            beta_min: self.get_or("schedule.beta_min", base.beta_min)?,
            beta_max: self.get_or("schedule.beta_max", base.beta_max)?,
            sigma_min: self.get_or("schedule.sigma_min", base.sigma_min)?,
            sigma_max: self.get_or("schedule.sigma_max", base.sigma_max)?,
            ..base
        };
        s.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(s)
    }

    pub fn variant(&self) -> CliResult<Variant> {
        self.get_or("model.variant", Variant::Spectral)
    }

    pub fn arch(&self, feature_dim: usize) -> CliResult<Arch> {
        let mut arch = Arch::new(self.variant()?, feature_dim, self.get_or("model.hidden", 32)?, self.get_or("model.time_dim", 16)?);
        arch.eigvec_features = self.get_or("model.eigvec_features", true)?;
        arch.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(arch)
    }

    pub fn train_config(&self, feature_dim: usize) -> CliResult<TrainConfig> {
        let d = TrainConfig::new(self.arch(feature_dim)?);
        let sched = self.schedule()?;
        let cfg = TrainConfig {
            epochs: self.get_or("train.epochs", d.epochs)?,
            batch_size: self.get_or("train.batch_size", d.batch_size)?,
            lr: self.get_or("train.lr", d.lr)?,
            optimizer: self.get_or("train.optimizer", Optimizer::Adam)?,
            t_eps: self.get_or("train.t_eps", d.t_eps)?,
            max_steps: self.get("train.max_steps")?,
            checkpoint_every: self.get_or("train.checkpoint_every", 0)?,
            checkpoint_dir: None,
            seed: self.seed("train")?,
            sched_x: sched,
            sched_structure: sched,
            ..d
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Sampling settings; the full-rank variant always uses its own solver.
    pub fn sample_config(&self, variant: Variant) -> CliResult<SampleConfig> {
        let d = SampleConfig::default();
        let sched = self.schedule()?;
        let solver = match variant {
            Variant::FullRank => Solver::FullrankPc,
            Variant::Spectral => match self.get_or("sample.solver", Solver::Pc)? {
                Solver::FullrankPc => return Err(CliError::usage("solver fullrank-pc needs a full-rank model")),
                s => s,
            },
        };
        let cfg = SampleConfig {
            steps: self.get_or("sample.steps", d.steps)?,
            snr: self.get_or("sample.snr", d.snr)?,
            eps_s: self.get_or("sample.eps_s", d.eps_s)?,
            langevin_step: self.get("sample.langevin_step")?,
            alpha: self.get_or("sample.alpha", d.alpha)?,
            solver,
            sched_x: sched,
            sched_structure: sched,
            seed: self.seed("sample")?,
            threshold: self.get_or("sample.threshold", d.threshold)?,
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sample_count(&self, default: usize) -> CliResult<usize> {
        let n = self.get_or("sample.count", default)?;
        if n == 0 {
            return Err(CliError::usage("sample.count must be at least 1"));
        }
        Ok(n)
    }

    pub fn bandwidths(&self) -> CliResult<Bandwidths> {
        let d = Bandwidths::default();
        let bw = Bandwidths {
            degree: self.get_or("eval.bw_degree", d.degree)?,
            clustering: self.get_or("eval.bw_clustering", d.clustering)?,
            orbit: self.get_or("eval.bw_orbit", d.orbit)?,
            adjacency: self.get_or("eval.bw_adjacency", d.adjacency)?,
        };
        if [bw.degree, bw.clustering, bw.orbit, bw.adjacency].iter().any(|b| !(*b > 0.0)) {
            return Err(CliError::usage("bandwidths must be positive"));
        }
        Ok(bw)
    }

    /// Comma-separated statistic names.
    pub fn statistics(&self) -> CliResult<Vec<Statistic>> {
        match self.values.get("eval.statistics") {
            None => Ok(DEFAULT_STATISTICS.to_vec()),
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<Statistic>().map_err(|e| CliError::usage(e.to_string())))
                .collect(),
        }
    }

    pub fn verify_options(&self) -> CliResult<VerifyOptions> {
        let d = VerifyOptions::default();
        Ok(VerifyOptions {
            seed: self.get_or("seed", d.seed)?,
            cov_samples: self.get_or("verify.cov_samples", d.cov_samples)?,
            chains: self.get_or("verify.chains", d.chains)?,
            sampler_steps: self.get_or("verify.sampler_steps", d.sampler_steps)?,
            em_paths: self.get_or("verify.em_paths", d.em_paths)?,
            em_steps: self.get_or("verify.em_steps", d.em_steps)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::new("o");
        s.parse_text("# comment\nschedule.family = cosine\n\ntrain.epochs=3\n", "cfg").unwrap();
        s.apply_overrides(&["train.epochs=7".into()]).unwrap();
        assert_eq!(s.get::<usize>("train.epochs").unwrap(), Some(7));
        assert_eq!(s.schedule().unwrap().family, ScheduleFamily::Cosine);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let mut s = Settings::new("o");
        assert!(matches!(s.parse_text("train.epoch=3", "cfg"), Err(CliError::Usage(_))));
        let err = s.parse_text("seed=1\nnot a pair", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:2"), "{err}");
        assert!(s.apply_overrides(&["=3".into()]).is_err());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut s = Settings::new("o");
        s.set("dataset.name", "community-large").unwrap();
        assert!(matches!(s.dataset_spec(), Err(CliError::Usage(_))));
        let mut s = Settings::new("o");
        s.set("sample.alpha", "1.5").unwrap();
        assert!(matches!(s.sample_config(Variant::Spectral), Err(CliError::Usage(_))));
    }

    #[test]
    fn section_seed_overrides_global() {
        let mut s = Settings::new("o");
        s.set("seed", "4").unwrap();
        s.set("train.seed", "9").unwrap();
        assert_eq!(s.seed("train").unwrap(), 9);
        assert_eq!(s.seed("sample").unwrap(), 4);
        assert_eq!(s.dataset_spec().unwrap().seed, 4);
    }

    #[test]
    fn fullrank_forces_its_solver() {
        let mut s = Settings::new("o");
        s.set("sample.solver", "splitting").unwrap();
        assert_eq!(s.sample_config(Variant::FullRank).unwrap().solver, Solver::FullrankPc);
        assert_eq!(s.sample_config(Variant::Spectral).unwrap().solver, Solver::Splitting);
    }

    #[test]
    fn default_paths_live_under_out() {
        let s = Settings::new("runs/a");
        assert_eq!(s.train_path(), PathBuf::from("runs/a/train.jsonl"));
        assert_eq!(s.checkpoint_path(), PathBuf::from("runs/a/model.ckpt"));
    }
}
