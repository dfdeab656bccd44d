//! Denoising score-matching training loop.
//!
//! Graphs are decomposed once up front. Each optimizer step draws a batch
//! from a seeded per-epoch permutation, samples one `t ~ U[t_eps, 1]` and
//! fresh noise per element from a per-step stream, and applies one Adam or
//! SGD update. Because every stream is keyed by `(seed, epoch)` or
//! `(seed, step)`, a run resumed from a checkpoint continues bit-identically.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::T_EPS;
use crate::error::{precondition, Error, Result};
use crate::graphs::{eig_decompose, Graph};
use crate::rng;
use crate::schedules::{NoiseSchedule, ScheduleFamily};
use crate::scorenet::checkpoint::{self, Checkpoint};
use crate::scorenet::{loss_and_grads, Arch, NoisyExample, OptimizerState, ScoreNetParams, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(precondition(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub t_eps: f64,
    pub sched_x: NoiseSchedule,
    pub sched_structure: NoiseSchedule,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Caps the total number of optimizer steps (across resumes).
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            epochs: 100,
            batch_size: 16,
            lr: 2e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            t_eps: T_EPS,
            sched_x: NoiseSchedule::vp(ScheduleFamily::Linear),
            sched_structure: NoiseSchedule::vp(ScheduleFamily::Linear),
            checkpoint_every: 0,
            checkpoint_dir: None,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(precondition("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(precondition(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(precondition(format!("t_eps {} not in (0,1)", self.t_eps)));
        }
        self.sched_x.validate()?;
        self.sched_structure.validate()
    }

    fn steps_per_epoch(&self, n_graphs: usize) -> u64 {
        n_graphs.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_graphs: usize) -> u64 {
        let full = self.epochs as u64 * self.steps_per_epoch(n_graphs);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// A training graph in the form the chosen variant consumes.
#[derive(Clone, Debug)]
pub enum Prepared {
    Spectral {
        x: Array2<f64>,
        u: Array2<f64>,
        lambda: Array1<f64>,
    },
    Full { x: Array2<f64>, a: Array2<f64> },
}

/// Decomposes every graph once.
pub fn prepare(dataset: &[Graph], variant: Variant) -> Result<Vec<Prepared>> {
    dataset
        .iter()
        .map(|g| match variant {
            Variant::Spectral => {
                let s = eig_decompose(&g.a)?;
                Ok(Prepared::Spectral {
                    x: g.x.clone(),
                    u: s.u,
                    lambda: s.lambda,
                })
            }
            Variant::FullRank => Ok(Prepared::Full {
                x: g.x.clone(),
                a: g.a.clone(),
            }),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: u64,
    pub step: u64,
    pub loss_x: f64,
    pub loss_structure: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ScoreNetParams,
    pub optimizer: OptimizerState,
    pub steps: u64,
    pub history: Vec<LossRecord>,
    pub last_checkpoint: Option<PathBuf>,
}

impl TrainOutput {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            step: self.steps,
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Mean total loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for r in &self.history {
            let l = r.loss_x + r.loss_structure;
            match out.last_mut() {
                Some((e, s, c)) if *e == r.epoch => {
                    *s += l;
                    *c += 1;
                }
                _ => out.push((r.epoch, l, 1)),
            }
        }
        out.into_iter().map(|(e, s, c)| (e, s / c as f64)).collect()
    }
}

/// Builds the noisy batch for global step `step`.
pub fn make_batch(data: &[Prepared], indices: &[usize], config: &TrainConfig, step: u64) -> Result<Vec<NoisyExample>> {
    let mut r = rng::substream(config.seed, 11, step);
    indices
        .iter()
        .map(|&i| {
            let t = r.random_range(config.t_eps..=1.0);
            match &data[i] {
                Prepared::Spectral { x, u, lambda } => {
                    NoisyExample::spectral(x, u, lambda, t, &config.sched_x, &config.sched_structure, &mut r)
                }
                Prepared::Full { x, a } => NoisyExample::full(x, a, t, &config.sched_x, &config.sched_structure, &mut r),
            }
        })
        .collect()
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, 10, epoch));
    idx
}

/// Trains from freshly initialized parameters.
pub fn train(dataset: &[Graph], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let params = ScoreNetParams::init(config.arch, &mut rng::substream(config.seed, 12, 0))?;
    let opt = OptimizerState::new(&params);
    run(dataset, config, params, opt, 0)
}

/// Continues training from a checkpoint up to the configured step budget.
pub fn resume(path: &Path, dataset: &[Graph], config: &TrainConfig) -> Result<TrainOutput> {
    let ckpt = checkpoint::load(path)?;
    resume_from(ckpt, dataset, config)
}

pub fn resume_from(ckpt: Checkpoint, dataset: &[Graph], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if ckpt.params.arch != config.arch {
        return Err(Error::Checkpoint(format!(
            "checkpoint architecture {:?} differs from configured {:?}",
            ckpt.params.arch, config.arch
        )));
    }
    let opt = ckpt.optimizer.unwrap_or_else(|| OptimizerState::new(&ckpt.params));
    run(dataset, config, ckpt.params, opt, ckpt.step)
}

fn run(dataset: &[Graph], config: &TrainConfig, mut params: ScoreNetParams, mut opt: OptimizerState, start: u64) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(precondition("training set is empty"));
    }
    let d = dataset[0].d();
    if dataset.iter().any(|g| g.d() != d) || d != config.arch.feature_dim {
        return Err(Error::Shape(format!(
            "dataset feature dims do not all equal the network's {}",
            config.arch.feature_dim
        )));
    }
    let data = prepare(dataset, config.arch.variant)?;
    let per_epoch = config.steps_per_epoch(data.len());
    let total = config.total_steps(data.len());
    let mut history = Vec::new();
    let mut last_checkpoint = None;
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    for step in start..total {
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(data.len(), config.seed, epoch);
            order_epoch = epoch;
        }
        let b = (step % per_epoch) as usize * config.batch_size;
        let indices = &order[b..(b + config.batch_size).min(order.len())];
        let batch = make_batch(&data, indices, config, step)?;
        let abort = |what: &str, last: &Option<PathBuf>| Error::NonFinite {
            step: step as usize,
            what: match last {
                Some(p) => format!("{what}; last good checkpoint {}", p.display()),
                None => format!("{what}; no checkpoint written"),
            },
        };
        let lg = match loss_and_grads(&params, &batch) {
            Ok(lg) => lg,
            Err(Error::NonFinite { .. }) => return Err(abort("loss", &last_checkpoint)),
            Err(e) => return Err(e),
        };
        match config.optimizer {
            Optimizer::Adam => opt.adam_step(&mut params, &lg.grads, config.lr),
            Optimizer::Sgd => opt.sgd_step(&mut params, &lg.grads, config.lr),
        }
        if !params.all_finite() {
            return Err(abort("parameters", &last_checkpoint));
        }
        history.push(LossRecord {
            epoch,
            step: step + 1,
            loss_x: lg.loss_x,
            loss_structure: lg.loss_structure,
        });
        let done = step + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                let path = dir.join(format!("step{done:08}.ckpt"));
                checkpoint::save(
                    &path,
                    &Checkpoint {
                        params: params.clone(),
                        step: done,
                        optimizer: Some(opt.clone()),
                    },
                )?;
                last_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainOutput {
        params,
        optimizer: opt,
        steps: total.max(start),
        history,
        last_checkpoint,
    })
}

/// CSV with columns `epoch,step,loss_x,loss_lambda`.
pub fn write_loss_csv<W: Write>(history: &[LossRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,step,loss_x,loss_lambda")?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.epoch, r.step, r.loss_x, r.loss_structure)?;
    }
    w.flush()?;
    Ok(())
}
