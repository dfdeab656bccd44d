//! Reverse-time generation.
//!
//! Spectral chains fix an eigenbasis `U` drawn from a training graph of the
//! requested size and integrate the reverse SDE on `(X, Λ)` only; the
//! adjacency is `U diag(Λ₀) Uᵀ`. Two solvers are provided:
//!
//! - predictor-corrector (VP only): ancestral predictor
//!   `x ← (2 − √(1−β))x + βS + √β z` at `t`, rescoring at `t − T/2M`, then one
//!   Langevin corrector `x ← x + εS + √(2ε) z`;
//! - symmetric splitting: Langevin correction `x ← x + (α/2)S + ε_s√α z`,
//!   half-step of the reverse linear (transition) part, score drift
//!   `x ← x + g²Sδt`, second half-step.
//!
//! The full-rank baseline runs the same predictor-corrector scheme on `X`
//! and the strict upper triangle of `A`.
//!
//! Chains of a batch advance in lockstep so that the adaptive corrector
//! step can be shared; each chain keeps its own random stream.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::graphs::{binarize, eig_decompose, recompose_parts, retained_count, Graph, Spectrum};
use crate::rng::{self, normal};
use crate::schedules::{NoiseSchedule, ScheduleFamily, ScheduleKind};
use crate::scorenet::{FullRankScore, SpectralScore};

/// Upper bound on the discrete per-step `β`, keeping `√(1−β)` real.
const BETA_CAP: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Pc,
    Splitting,
    FullrankPc,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pc" => Ok(Self::Pc),
            "splitting" => Ok(Self::Splitting),
            "fullrank-pc" => Ok(Self::FullrankPc),
            other => Err(precondition(format!("unknown solver `{other}`"))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pc => "pc",
            Self::Splitting => "splitting",
            Self::FullrankPc => "fullrank-pc",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Number of reverse steps `M`.
    pub steps: usize,
    /// Target signal-to-noise ratio of the adaptive Langevin step.
    pub snr: f64,
    /// Noise scaling of the splitting solver's correction step.
    pub eps_s: f64,
    /// Fixed Langevin step (`ε` for PC, `α` for splitting); `None` uses the
    /// adaptive rule `ε = 2(snr·‖z‖/‖S‖)²`, `α = 2ε`, where both norms are
    /// per-chain norms averaged over the batch.
    pub langevin_step: Option<f64>,
    /// Fraction of eigenvalues (largest magnitude) that are diffused.
    pub alpha: f64,
    pub solver: Solver,
    pub sched_x: NoiseSchedule,
    pub sched_structure: NoiseSchedule,
    pub seed: u64,
    /// Binarization threshold for binary datasets.
    pub threshold: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            snr: 0.16,
            eps_s: 1.0,
            langevin_step: None,
            alpha: 1.0,
            solver: Solver::Pc,
            sched_x: NoiseSchedule::vp(ScheduleFamily::Linear),
            sched_structure: NoiseSchedule::vp(ScheduleFamily::Linear),
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(precondition("at least one sampling step is required"));
        }
        if !(self.snr > 0.0) {
            return Err(precondition(format!("snr {} must be positive", self.snr)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(precondition(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if let Some(s) = self.langevin_step {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(precondition(format!("Langevin step {s} must be non-negative")));
            }
        }
        if self.eps_s < 0.0 {
            return Err(precondition("eps_s must be non-negative"));
        }
        self.sched_x.validate()?;
        self.sched_structure.validate()?;
        let vp = |s: &NoiseSchedule| s.kind == ScheduleKind::Vp;
        if self.solver != Solver::Splitting && !(vp(&self.sched_x) && vp(&self.sched_structure)) {
            return Err(precondition("predictor-corrector sampling requires VP schedules"));
        }
        Ok(())
    }
}

/// Training eigenbases grouped by node count, plus the size distribution.
#[derive(Clone, Debug)]
pub struct EigenBank {
    spectra: Vec<Spectrum>,
    feature_dim: usize,
    weighted: bool,
}

impl EigenBank {
    /// Decomposes every graph once.
    pub fn new(dataset: &[Graph]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(precondition("eigenbasis bank needs at least one graph"));
        }
        let d = dataset[0].d();
        if dataset.iter().any(|g| g.d() != d) {
            return Err(Error::Shape("graphs have differing feature dimensions".into()));
        }
        Ok(Self {
            spectra: dataset.iter().map(|g| eig_decompose(&g.a)).collect::<Result<_>>()?,
            feature_dim: d,
            weighted: dataset.iter().any(|g| g.weighted),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weighted(&self) -> bool {
        self.weighted
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.spectra.iter().map(|s| s.n()).collect()
    }

    /// Node count of a uniformly drawn training graph.
    pub fn draw_size<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.spectra[rng.random_range(0..self.spectra.len())].n()
    }
}

/// Uniform draw among training graphs with exactly `n` nodes.
pub fn draw_eigvectors<'a, R: Rng + ?Sized>(bank: &'a EigenBank, n: usize, rng: &mut R) -> Result<&'a Spectrum> {
    let matches: Vec<&Spectrum> = bank.spectra.iter().filter(|s| s.n() == n).collect();
    if matches.is_empty() {
        return Err(precondition(format!("no training graph has {n} nodes")));
    }
    Ok(matches[rng.random_range(0..matches.len())])
}

/// Output of one spectral chain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSample {
    pub x: Array2<f64>,
    pub lambda: Array1<f64>,
    pub u: Array2<f64>,
    /// Continuous adjacency `U diag(Λ₀) Uᵀ`.
    pub a: Array2<f64>,
    /// `(step, Λ)` pairs captured at the requested steps.
    pub trace: Vec<(usize, Array1<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullSample {
    pub x: Array2<f64>,
    pub a: Array2<f64>,
}

fn gaussian<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| normal(rng))
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| normal(rng))
}

fn prior_std(s: &NoiseSchedule) -> f64 {
    match s.kind {
        ScheduleKind::Vp => 1.0,
        ScheduleKind::Ve => s.marginal_unchecked(1.0).std,
    }
}

fn sq_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum()
}

/// Adaptive Langevin step `2(snr·‖z‖/‖S‖)²`; zero when the score vanishes.
fn adaptive_step(snr: f64, z_norm: f64, s_norm: f64) -> f64 {
    if s_norm == 0.0 {
        0.0
    } else {
        2.0 * (snr * z_norm / s_norm).powi(2)
    }
}

/// Discrete `β_{m+1} = β(t)·T/M`, capped below one.
fn discrete_beta(s: &NoiseSchedule, t: f64, steps: usize) -> f64 {
    (s.diffusion_sq(t) / steps as f64).min(BETA_CAP)
}

fn check_state<'a>(vals: impl IntoIterator<Item = &'a f64>, step: usize, what: &str) -> Result<()> {
    if vals.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

fn apply_mask(lambda: &mut Array1<f64>, keep: usize) {
    lambda.iter_mut().skip(keep).for_each(|v| *v = 0.0);
}

/// Runs one spectral chain on a fixed eigenbasis. Coordinates beyond
/// `retained_count(n, alpha)` are pinned to zero; all noise is drawn at
/// full dimension so `alpha = 1` matches the unrestricted path exactly.
pub fn sample_spectral_chain<S: SpectralScore + ?Sized, R: Rng + Send + ?Sized>(
    score: &S,
    u: &Array2<f64>,
    feature_dim: usize,
    config: &SampleConfig,
    trace_steps: &[usize],
    rng: &mut R,
) -> Result<SpectralSample> {
    let mut out = run_spectral(score, vec![(u, rng)], feature_dim, config, trace_steps)?;
    Ok(out.remove(0).0)
}

/// Runs one spectral chain per `(U, rng)` pair in lockstep. The adaptive
/// Langevin step is shared across the batch and uses per-chain norms
/// averaged over all chains.
pub fn sample_spectral_batch<S: SpectralScore + ?Sized, R: Rng + Send>(
    score: &S,
    chains: Vec<(&Array2<f64>, R)>,
    feature_dim: usize,
    config: &SampleConfig,
    trace_steps: &[usize],
) -> Result<Vec<SpectralSample>> {
    Ok(run_spectral(score, chains, feature_dim, config, trace_steps)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Scores and corrector noise `(S_x, S_λ, z_x, z_λ)` carried from the
/// prepare half of a step to the finish half.
type SpectralPending = (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>);

struct SpectralState<'a, R> {
    u: &'a Array2<f64>,
    keep: usize,
    x: Array2<f64>,
    lambda: Array1<f64>,
    trace: Vec<(usize, Array1<f64>)>,
    rng: R,
    busy: Duration,
    pending: Option<SpectralPending>,
}

fn run_spectral<S: SpectralScore + ?Sized, R: Rng + Send>(
    score: &S,
    chains: Vec<(&Array2<f64>, R)>,
    feature_dim: usize,
    config: &SampleConfig,
    trace_steps: &[usize],
) -> Result<Vec<(SpectralSample, Duration)>> {
    config.validate()?;
    if config.solver == Solver::FullrankPc {
        return Err(precondition("spectral chain requested with the full-rank solver"));
    }
    if chains.is_empty() {
        return Ok(Vec::new());
    }
    let (sx, sl) = (&config.sched_x, &config.sched_structure);
    let mut states: Vec<SpectralState<'_, R>> = chains
        .into_iter()
        .map(|(u, mut rng)| {
            let start = Instant::now();
            let n = u.nrows();
            let keep = retained_count(n, config.alpha);
            let x = gaussian((n, feature_dim), &mut rng) * prior_std(sx);
            let mut lambda = gaussian_vec(n, &mut rng) * prior_std(sl);
            apply_mask(&mut lambda, keep);
            SpectralState {
                u,
                keep,
                x,
                lambda,
                trace: Vec::new(),
                rng,
                busy: start.elapsed(),
                pending: None,
            }
        })
        .collect();
    let m = config.steps;
    let dt = 1.0 / m as f64;
    for step in 0..m {
        let t = 1.0 - step as f64 * dt;
        let norms: Vec<[f64; 4]> = states
            .par_iter_mut()
            .map(|st| {
                let start = Instant::now();
                let out = spectral_prepare(score, st, config, t, dt);
                st.busy += start.elapsed();
                out
            })
            .collect::<Result<_>>()?;
        let (ex, el) = shared_steps(config, &norms);
        states.par_iter_mut().try_for_each(|st| {
            let start = Instant::now();
            spectral_finish(st, config, ex, el, t, dt, step)?;
            if trace_steps.contains(&step) {
                st.trace.push((step, st.lambda.clone()));
            }
            st.busy += start.elapsed();
            Ok::<_, Error>(())
        })?;
    }
    states
        .into_iter()
        .map(|st| {
            let a = recompose_parts(st.u, &st.lambda)?;
            Ok((
                SpectralSample {
                    x: st.x,
                    lambda: st.lambda,
                    u: st.u.clone(),
                    a,
                    trace: st.trace,
                },
                st.busy,
            ))
        })
        .collect()
}

/// Corrector step sizes for X and the structure from batch-mean norms.
/// The splitting solver's `α` is twice the PC step.
fn shared_steps(config: &SampleConfig, norms: &[[f64; 4]]) -> (f64, f64) {
    let k = norms.len() as f64;
    let mean = |i: usize| norms.iter().map(|v| v[i]).sum::<f64>() / k;
    let scale = if config.solver == Solver::Splitting { 2.0 } else { 1.0 };
    let step = |z: f64, s: f64| config.langevin_step.unwrap_or_else(|| scale * adaptive_step(config.snr, z, s));
    (step(mean(0), mean(1)), step(mean(2), mean(3)))
}

/// Everything up to the Langevin correction: for PC the predictor and the
/// rescoring at `t − δt/2`, for splitting the score at `t`. Returns
/// `[‖z_X‖, ‖S_X‖, ‖z_Λ‖, ‖S_Λ‖]`.
fn spectral_prepare<S: SpectralScore + ?Sized, R: Rng>(
    score: &S,
    st: &mut SpectralState<'_, R>,
    config: &SampleConfig,
    t: f64,
    dt: f64,
) -> Result<[f64; 4]> {
    let (sx, sl) = (&config.sched_x, &config.sched_structure);
    let n = st.u.nrows();
    let (s_x, mut s_l) = score.scores(&st.x, &st.lambda, st.u, t)?;
    apply_mask(&mut s_l, st.keep);
    let (s_x, s_l) = if config.solver == Solver::Pc {
        let bx = discrete_beta(sx, t, config.steps);
        let bl = discrete_beta(sl, t, config.steps);
        let zx = gaussian(st.x.dim(), &mut st.rng);
        let zl = gaussian_vec(n, &mut st.rng);
        st.x = &st.x * (2.0 - (1.0 - bx).sqrt()) + s_x * bx + zx * bx.sqrt();
        st.lambda = &st.lambda * (2.0 - (1.0 - bl).sqrt()) + s_l * bl + zl * bl.sqrt();
        apply_mask(&mut st.lambda, st.keep);
        let (s_x, mut s_l) = score.scores(&st.x, &st.lambda, st.u, t - 0.5 * dt)?;
        apply_mask(&mut s_l, st.keep);
        (s_x, s_l)
    } else {
        (s_x, s_l)
    };
    let zx = gaussian(st.x.dim(), &mut st.rng);
    let mut zl = gaussian_vec(n, &mut st.rng);
    apply_mask(&mut zl, st.keep);
    let norms = [sq_norm(&zx).sqrt(), sq_norm(&s_x).sqrt(), sq_norm(&zl).sqrt(), sq_norm(&s_l).sqrt()];
    st.pending = Some((s_x, s_l, zx, zl));
    Ok(norms)
}

fn spectral_finish<R: Rng>(st: &mut SpectralState<'_, R>, config: &SampleConfig, ex: f64, el: f64, t: f64, dt: f64, step: usize) -> Result<()> {
    let (sx, sl) = (&config.sched_x, &config.sched_structure);
    let (s_x, s_l, zx, zl) = st.pending.take().expect("prepare runs before finish");
    match config.solver {
        Solver::Pc => {
            st.x = &st.x + s_x * ex + zx * (2.0 * ex).sqrt();
            st.lambda = &st.lambda + s_l * el + zl * (2.0 * el).sqrt();
        }
        Solver::Splitting => {
            let mut x = &st.x + &s_x * (0.5 * ex) + zx * (config.eps_s * ex.sqrt());
            let mut lambda = &st.lambda + &s_l * (0.5 * el) + zl * (config.eps_s * el.sqrt());
            let t_mid = t - 0.5 * dt;
            let t_next = (t - dt).max(0.0);
            x = reverse_half_step(x, sx, t_mid, t, &mut st.rng);
            lambda = reverse_half_step(lambda, sl, t_mid, t, &mut st.rng);
            x = x + s_x * (sx.diffusion_sq(t) * dt);
            lambda = lambda + s_l * (sl.diffusion_sq(t) * dt);
            st.x = reverse_half_step(x, sx, t_next, t_mid, &mut st.rng);
            st.lambda = reverse_half_step(lambda, sl, t_next, t_mid, &mut st.rng);
        }
        Solver::FullrankPc => unreachable!(),
    }
    apply_mask(&mut st.lambda, st.keep);
    check_state(st.x.iter().chain(st.lambda.iter()), step, "sampler state")
}

/// Exact draw of the reverse linear part from `t_hi` down to `t_lo`:
/// `(x + std·z) / mean_coef` with the forward transition's statistics.
fn reverse_half_step<D: ndarray::Dimension, R: Rng + ?Sized>(
    x: ndarray::Array<f64, D>,
    s: &NoiseSchedule,
    t_lo: f64,
    t_hi: f64,
    rng: &mut R,
) -> ndarray::Array<f64, D> {
    let tr = s.transition_unchecked(t_lo, t_hi);
    let mut out = x;
    out.iter_mut().for_each(|v| *v = (*v + tr.std * normal(rng)) / tr.mean_coef);
    out
}

/// Predictor-corrector spectral sampling with an eigenbasis drawn from the bank.
pub fn sample_pc<S: SpectralScore + ?Sized>(score: &S, bank: &EigenBank, n: usize, config: &SampleConfig) -> Result<SpectralSample> {
    if config.solver != Solver::Pc {
        return Err(precondition("sample_pc requires solver = pc"));
    }
    let mut r = rng::substream(config.seed, 20, 0);
    let u = draw_eigvectors(bank, n, &mut r)?.u.clone();
    sample_spectral_chain(score, &u, bank.feature_dim(), config, &[], &mut r)
}

/// Splitting-solver spectral sampling with an eigenbasis drawn from the bank.
pub fn sample_splitting<S: SpectralScore + ?Sized>(score: &S, bank: &EigenBank, n: usize, config: &SampleConfig) -> Result<SpectralSample> {
    if config.solver != Solver::Splitting {
        return Err(precondition("sample_splitting requires solver = splitting"));
    }
    let mut r = rng::substream(config.seed, 20, 0);
    let u = draw_eigvectors(bank, n, &mut r)?.u.clone();
    sample_spectral_chain(score, &u, bank.feature_dim(), config, &[], &mut r)
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

/// One full-rank predictor-corrector chain on `(X, upper(A))`.
pub fn sample_fullrank_chain<S: FullRankScore + ?Sized, R: Rng + Send + ?Sized>(
    score: &S,
    n: usize,
    feature_dim: usize,
    config: &SampleConfig,
    rng: &mut R,
) -> Result<FullSample> {
    let mut out = run_fullrank(score, vec![(n, rng)], feature_dim, config)?;
    Ok(out.remove(0).0)
}

/// Full-rank chains in lockstep with a batch-shared adaptive step.
pub fn sample_fullrank_batch<S: FullRankScore + ?Sized, R: Rng + Send>(
    score: &S,
    chains: Vec<(usize, R)>,
    feature_dim: usize,
    config: &SampleConfig,
) -> Result<Vec<FullSample>> {
    Ok(run_fullrank(score, chains, feature_dim, config)?.into_iter().map(|(s, _)| s).collect())
}

/// Same as [`SpectralPending`] with the adjacency parts as upper-triangle vectors.
type FullPending = (Array2<f64>, Vec<f64>, Array2<f64>, Vec<f64>);

struct FullState<R> {
    pairs: Vec<(usize, usize)>,
    x: Array2<f64>,
    a: Array2<f64>,
    rng: R,
    busy: Duration,
    pending: Option<FullPending>,
}

impl<R> FullState<R> {
    fn upper(&self, m: &Array2<f64>) -> Vec<f64> {
        self.pairs.iter().map(|&(i, j)| m[[i, j]]).collect()
    }

    fn fill(&mut self, vals: &[f64]) {
        for (&(i, j), &v) in self.pairs.iter().zip(vals) {
            self.a[[i, j]] = v;
            self.a[[j, i]] = v;
        }
    }
}

fn run_fullrank<S: FullRankScore + ?Sized, R: Rng + Send>(
    score: &S,
    chains: Vec<(usize, R)>,
    feature_dim: usize,
    config: &SampleConfig,
) -> Result<Vec<(FullSample, Duration)>> {
    config.validate()?;
    if config.solver != Solver::FullrankPc {
        return Err(precondition("full-rank chain requires solver = fullrank-pc"));
    }
    if chains.is_empty() {
        return Ok(Vec::new());
    }
    let (sx, sa) = (&config.sched_x, &config.sched_structure);
    let mut states: Vec<FullState<R>> = chains
        .into_iter()
        .map(|(n, mut rng)| {
            let start = Instant::now();
            let pairs = upper_pairs(n);
            let x = gaussian((n, feature_dim), &mut rng) * prior_std(sx);
            let init: Vec<f64> = (0..pairs.len()).map(|_| normal(&mut rng) * prior_std(sa)).collect();
            let mut st = FullState {
                pairs,
                x,
                a: Array2::zeros((n, n)),
                rng,
                busy: Duration::ZERO,
                pending: None,
            };
            st.fill(&init);
            st.busy = start.elapsed();
            st
        })
        .collect();
    let m = config.steps;
    let dt = 1.0 / m as f64;
    for step in 0..m {
        let t = 1.0 - step as f64 * dt;
        let norms: Vec<[f64; 4]> = states
            .par_iter_mut()
            .map(|st| {
                let start = Instant::now();
                let out = fullrank_prepare(score, st, config, t, dt);
                st.busy += start.elapsed();
                out
            })
            .collect::<Result<_>>()?;
        let (ex, ea) = shared_steps(config, &norms);
        states.par_iter_mut().try_for_each(|st| {
            let start = Instant::now();
            let (s_x, sv, zx, za) = st.pending.take().expect("prepare runs before finish");
            st.x = &st.x + s_x * ex + zx * (2.0 * ex).sqrt();
            let next: Vec<f64> = st
                .upper(&st.a)
                .iter()
                .zip(&sv)
                .zip(&za)
                .map(|((v, s), z)| v + s * ea + z * (2.0 * ea).sqrt())
                .collect();
            st.fill(&next);
            st.busy += start.elapsed();
            check_state(st.x.iter().chain(st.a.iter()), step, "sampler state")
        })?;
    }
    Ok(states.into_iter().map(|st| (FullSample { x: st.x, a: st.a }, st.busy)).collect())
}

fn fullrank_prepare<S: FullRankScore + ?Sized, R: Rng>(score: &S, st: &mut FullState<R>, config: &SampleConfig, t: f64, dt: f64) -> Result<[f64; 4]> {
    let (sx, sa) = (&config.sched_x, &config.sched_structure);
    let (s_x, s_a) = score.scores(&st.x, &st.a, t)?;
    let bx = discrete_beta(sx, t, config.steps);
    let ba = discrete_beta(sa, t, config.steps);
    let zx = gaussian(st.x.dim(), &mut st.rng);
    st.x = &st.x * (2.0 - (1.0 - bx).sqrt()) + s_x * bx + zx * bx.sqrt();
    let (av, sv) = (st.upper(&st.a), st.upper(&s_a));
    let next: Vec<f64> = av
        .iter()
        .zip(&sv)
        .map(|(v, s)| v * (2.0 - (1.0 - ba).sqrt()) + s * ba + normal(&mut st.rng) * ba.sqrt())
        .collect();
    st.fill(&next);
    let (s_x, s_a) = score.scores(&st.x, &st.a, t - 0.5 * dt)?;
    let zx = gaussian(st.x.dim(), &mut st.rng);
    let za: Vec<f64> = (0..st.pairs.len()).map(|_| normal(&mut st.rng)).collect();
    let sv = st.upper(&s_a);
    let norms = [sq_norm(&zx).sqrt(), sq_norm(&s_x).sqrt(), sq_norm(&za).sqrt(), sq_norm(&sv).sqrt()];
    st.pending = Some((s_x, sv, zx, za));
    Ok(norms)
}

/// Full-rank sampling; `n` must occur in the training set.
pub fn sample_fullrank<S: FullRankScore + ?Sized>(score: &S, bank: &EigenBank, n: usize, config: &SampleConfig) -> Result<FullSample> {
    if !bank.sizes().contains(&n) {
        return Err(precondition(format!("no training graph has {n} nodes")));
    }
    let mut r = rng::substream(config.seed, 20, 0);
    sample_fullrank_chain(score, n, bank.feature_dim(), config, &mut r)
}

/// Score model driving `generate_batch`.
#[derive(Clone, Copy)]
pub enum Model<'a> {
    Spectral(&'a dyn SpectralScore),
    FullRank(&'a dyn FullRankScore),
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub graph: Graph,
    /// Wall-clock time of the chain.
    pub millis: f64,
}

/// Generates `count` graphs. Chain `k` uses its own stream and draws its
/// node count from the training size distribution; spectral chains then
/// draw an eigenbasis among training graphs of that size. All chains run
/// as one batch. Binary datasets are binarized at `config.threshold`.
pub fn generate_batch(model: Model<'_>, bank: &EigenBank, count: usize, config: &SampleConfig) -> Result<Vec<Generated>> {
    if count == 0 {
        return Err(precondition("count must be at least 1"));
    }
    config.validate()?;
    match (&model, config.solver) {
        (Model::Spectral(_), Solver::Pc | Solver::Splitting) | (Model::FullRank(_), Solver::FullrankPc) => {}
        _ => return Err(precondition(format!("solver {} does not match the model variant", config.solver))),
    }
    let d = bank.feature_dim();
    let raw: Vec<(Array2<f64>, Array2<f64>, Duration)> = match model {
        Model::Spectral(score) => {
            let mut chains = Vec::with_capacity(count);
            for k in 0..count {
                let mut r = rng::substream(config.seed, 21, k as u64);
                let n = bank.draw_size(&mut r);
                chains.push((&draw_eigvectors(bank, n, &mut r)?.u, r));
            }
            run_spectral(score, chains, d, config, &[])?
                .into_iter()
                .map(|(s, busy)| (s.x, s.a, busy))
                .collect()
        }
        Model::FullRank(score) => {
            let chains = (0..count)
                .map(|k| {
                    let mut r = rng::substream(config.seed, 21, k as u64);
                    (bank.draw_size(&mut r), r)
                })
                .collect();
            run_fullrank(score, chains, d, config)?
                .into_iter()
                .map(|(s, busy)| (s.x, s.a, busy))
                .collect()
        }
    };
    raw.into_par_iter()
        .map(|(x, a, busy)| {
            let start = Instant::now();
            let a = if bank.weighted() { a } else { binarize(&a, config.threshold) };
            let graph = Graph::new(x, a, bank.weighted())?;
            Ok(Generated {
                graph,
                millis: (busy + start.elapsed()).as_secs_f64() * 1e3,
            })
        })
        .collect()
}

/// CSV with columns `chain,n,millis`.
pub fn write_timing_csv<W: std::io::Write>(generated: &[Generated], mut w: W) -> Result<()> {
    writeln!(w, "chain,n,millis")?;
    for (k, g) in generated.iter().enumerate() {
        writeln!(w, "{k},{},{:.3}", g.graph.n(), g.millis)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{self, DatasetName, DatasetSpec};
    use crate::oracles::AnalyticGaussianScore;
    use crate::scorenet::{Arch, NetworkScore, ScoreNetParams, Variant};

    struct ZeroScore;

    impl SpectralScore for ZeroScore {
        fn scores(&self, x: &Array2<f64>, lambda: &Array1<f64>, _: &Array2<f64>, _: f64) -> Result<(Array2<f64>, Array1<f64>)> {
            Ok((Array2::zeros(x.raw_dim()), Array1::zeros(lambda.len())))
        }
    }

    fn bank() -> EigenBank {
        let g = datasets::generate(&DatasetSpec {
            count: 12,
            ..DatasetSpec::default_for(DatasetName::CommunitySmall)
        })
        .unwrap();
        EigenBank::new(&g).unwrap()
    }

    #[test]
    fn draw_eigvectors_singleton_and_missing() {
        let g = datasets::generate(&DatasetSpec {
            count: 1,
            ..DatasetSpec::default_for(DatasetName::CommunitySmall)
        })
        .unwrap();
        let b = EigenBank::new(&g).unwrap();
        let n = g[0].n();
        let s = eig_decompose(&g[0].a).unwrap();
        let mut r = rng::seeded(1);
        for _ in 0..5 {
            assert_eq!(draw_eigvectors(&b, n, &mut r).unwrap().u, s.u);
        }
        assert!(draw_eigvectors(&b, 99, &mut r).is_err());
    }

    #[test]
    fn draw_eigvectors_uniform() {
        let mut graphs = Vec::new();
        for k in 0..5 {
            let mut a = Array2::zeros((6, 6));
            a[[0, k + 1]] = 1.0;
            a[[k + 1, 0]] = 1.0;
            graphs.push(Graph::new(Array2::ones((6, 1)), a, false).unwrap());
        }
        let b = EigenBank::new(&graphs).unwrap();
        let mut counts = [0usize; 5];
        let mut r = rng::seeded(2);
        for _ in 0..10_000 {
            let s = draw_eigvectors(&b, 6, &mut r).unwrap() as *const Spectrum;
            let k = b.spectra.iter().position(|x| std::ptr::eq(x, s)).unwrap();
            counts[k] += 1;
        }
        let sd = (10_000.0 * 0.2 * 0.8f64).sqrt();
        for c in counts {
            assert!((c as f64 - 2000.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn one_step_zero_score_moments() {
        let cfg = SampleConfig {
            steps: 1,
            ..SampleConfig::default()
        };
        let u = Array2::eye(4);
        let mut r = rng::seeded(3);
        let beta = BETA_CAP;
        let var = (2.0 - (1.0 - beta).sqrt()).powi(2) + beta;
        let mut vals = Vec::new();
        for _ in 0..20_000 {
            let s = sample_spectral_chain(&ZeroScore, &u, 1, &cfg, &[], &mut r).unwrap();
            vals.extend(s.lambda.iter().copied());
        }
        let nv = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / nv;
        let v = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nv - 1.0);
        assert!(mean.abs() < 3.0 * (var / nv).sqrt());
        let se_var = var * (2.0 / nv).sqrt();
        assert!((v - var).abs() < 4.0 * se_var, "{v} vs {var}");
    }

    #[test]
    fn deterministic_per_seed() {
        let b = bank();
        let n = b.sizes()[0];
        let score = AnalyticGaussianScore::standard(0.3, 0.4);
        for solver in [Solver::Pc, Solver::Splitting] {
            let cfg = SampleConfig {
                steps: 30,
                solver,
                seed: 5,
                ..SampleConfig::default()
            };
            let f = if solver == Solver::Pc { sample_pc::<AnalyticGaussianScore> } else { sample_splitting::<AnalyticGaussianScore> };
            assert_eq!(f(&score, &b, n, &cfg).unwrap(), f(&score, &b, n, &cfg).unwrap());
        }
    }

    #[test]
    fn splitting_noop_correction() {
        // α = 0 with ε_s = 0 leaves the path identical to a run whose
        // correction noise is scaled away.
        let u = Array2::eye(5);
        let score = AnalyticGaussianScore::standard(1.0, 0.5);
        let cfg0 = SampleConfig {
            steps: 20,
            solver: Solver::Splitting,
            langevin_step: Some(0.0),
            eps_s: 0.0,
            ..SampleConfig::default()
        };
        let cfg1 = SampleConfig { eps_s: 3.0, ..cfg0.clone() };
        let a = sample_spectral_chain(&score, &u, 2, &cfg0, &[], &mut rng::seeded(9)).unwrap();
        let b = sample_spectral_chain(&score, &u, 2, &cfg1, &[], &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_one_identical_and_mask_pins() {
        let b = bank();
        let n = b.sizes()[0];
        let score = AnalyticGaussianScore::standard(0.5, 0.5);
        let base = SampleConfig {
            steps: 25,
            seed: 4,
            ..SampleConfig::default()
        };
        let full = sample_pc(&score, &b, n, &base).unwrap();
        let same = sample_pc(&score, &b, n, &SampleConfig { alpha: 1.0, ..base.clone() }).unwrap();
        assert_eq!(full, same);
        let part = sample_pc(&score, &b, n, &SampleConfig { alpha: 0.5, ..base }).unwrap();
        let k = retained_count(n, 0.5);
        assert!(part.lambda.iter().skip(k).all(|v| *v == 0.0));
    }

    #[test]
    fn fullrank_symmetric_and_distinct() {
        let b = bank();
        let n = b.sizes()[0];
        let score = AnalyticGaussianScore::standard(0.5, 0.5);
        let cfg = SampleConfig {
            steps: 20,
            solver: Solver::FullrankPc,
            ..SampleConfig::default()
        };
        let fr = sample_fullrank(&score, &b, n, &cfg).unwrap();
        for i in 0..n {
            assert_eq!(fr.a[[i, i]], 0.0);
            for j in 0..n {
                assert!((fr.a[[i, j]] - fr.a[[j, i]]).abs() <= 1e-12);
            }
        }
        let sp = sample_pc(&score, &b, n, &SampleConfig { solver: Solver::Pc, ..cfg }).unwrap();
        assert_ne!(sp.a, fr.a);
    }

    #[test]
    fn generate_batch_sizes_and_timing() {
        let b = bank();
        let params = ScoreNetParams::init(Arch::new(Variant::Spectral, b.feature_dim(), 8, 8), &mut rng::seeded(1)).unwrap();
        let net = NetworkScore::new(&params, NoiseSchedule::default(), NoiseSchedule::default());
        let cfg = SampleConfig {
            steps: 5,
            ..SampleConfig::default()
        };
        let out = generate_batch(Model::Spectral(&net), &b, 7, &cfg).unwrap();
        assert_eq!(out.len(), 7);
        let sizes = b.sizes();
        assert!(out.iter().all(|g| sizes.contains(&g.graph.n()) && g.graph.is_binary()));
        let again = generate_batch(Model::Spectral(&net), &b, 7, &cfg).unwrap();
        assert!(out.iter().zip(&again).all(|(a, b)| a.graph == b.graph));
        let mut buf = Vec::new();
        write_timing_csv(&out, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 8);
        let wrong = SampleConfig { solver: Solver::FullrankPc, ..cfg };
        assert!(generate_batch(Model::Spectral(&net), &b, 1, &wrong).is_err());
    }

    #[test]
    fn size_distribution_matches_training() {
        let b = bank();
        let mut r = rng::seeded(8);
        let sizes = b.sizes();
        let mut expected = std::collections::BTreeMap::new();
        for s in &sizes {
            *expected.entry(*s).or_insert(0.0) += 1.0 / sizes.len() as f64;
        }
        let draws = 1000;
        let mut observed = std::collections::BTreeMap::new();
        for _ in 0..draws {
            *observed.entry(b.draw_size(&mut r)).or_insert(0.0) += 1.0;
        }
        let chi2: f64 = expected
            .iter()
            .map(|(k, p)| {
                let e = p * draws as f64;
                (observed.get(k).copied().unwrap_or(0.0) - e).powi(2) / e
            })
            .sum();
        let dof = expected.len() - 1;
        // generous bound: mean + 5 standard deviations of chi-square(dof)
        assert!(chi2 < dof as f64 + 5.0 * (2.0 * dof as f64).sqrt(), "chi2 {chi2} dof {dof}");
    }

    #[test]
    fn invalid_configs() {
        let cfg = SampleConfig { steps: 0, ..SampleConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SampleConfig { alpha: 0.0, ..SampleConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SampleConfig {
            sched_structure: NoiseSchedule::ve(ScheduleFamily::Constant),
            ..SampleConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SampleConfig { solver: Solver::Splitting, ..cfg }.validate().is_ok());
    }
}
