//! Independent reference computations for tests and self-verification.
//!
//! Nothing here reuses the arithmetic of the code it checks: covariances are
//! simulated from raw Brownian increments, MMD is a plain triple loop,
//! graphlets are classified over every 4-subset, and the Gaussian score is
//! the closed-form marginal score of Gaussian data.

use std::fmt;

use ndarray::{Array, Array1, Array2, ArrayBase, Data, Dimension};
use rand::Rng;

use crate::diffusion::KernelIndex;
use crate::error::{precondition, Error, Result};
use crate::metrics::Kernel;
use crate::rng::{self, normal};
use crate::schedules::NoiseSchedule;
use crate::scorenet::{FullRankScore, SpectralScore};

/// Result of one oracle check.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    pub samples: usize,
}

impl OracleReport {
    /// Passes when `measured ≤ threshold`.
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64, samples: usize) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            pass: measured <= threshold,
            samples,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<40} measured {:>12.4e}  threshold {:>10.3e}  samples {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.samples
        )
    }
}

/// Marginal mean and variance at `t` of data `N(mu0, s0²)`.
fn gaussian_marginal(t: f64, mu0: f64, s0: f64, schedule: &NoiseSchedule) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(precondition(format!("time {t} outside [0, 1]")));
    }
    let b = schedule.integral_beta(0.0, t)?;
    let (c, var_noise) = match schedule.kind {
        crate::schedules::ScheduleKind::Vp => ((-0.5 * b).exp(), 1.0 - (-b).exp()),
        crate::schedules::ScheduleKind::Ve => (1.0, b),
    };
    let var = c * c * s0 * s0 + var_noise;
    if var <= 0.0 {
        return Err(precondition("marginal is a point mass (t = 0 with s0 = 0)"));
    }
    Ok((c * mu0, var))
}

/// Exact score `−(x − mean)/var` of the time-`t` marginal of `N(mu0, s0²)` data.
pub fn analytic_gaussian_score<S: Data<Elem = f64>, D: Dimension>(
    x: &ArrayBase<S, D>,
    t: f64,
    mu0: f64,
    s0: f64,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    let (mean, var) = gaussian_marginal(t, mu0, s0, schedule)?;
    Ok(x.mapv(|v| -(v - mean) / var))
}

/// Log density of the time-`t` marginal at scalar `x`.
pub fn gaussian_marginal_log_density(x: f64, t: f64, mu0: f64, s0: f64, schedule: &NoiseSchedule) -> Result<f64> {
    let (mean, var) = gaussian_marginal(t, mu0, s0, schedule)?;
    Ok(-0.5 * (x - mean).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln())
}

/// Exact score for data whose features and structure entries are i.i.d.
/// `N(mu, s²)`; substitutes for the networks in sampler checks.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticGaussianScore {
    pub mu: f64,
    pub s: f64,
    pub sched_x: NoiseSchedule,
    pub sched_structure: NoiseSchedule,
}

impl AnalyticGaussianScore {
    /// Default VP schedule on both components.
    pub fn standard(mu: f64, s: f64) -> Self {
        Self {
            mu,
            s,
            sched_x: NoiseSchedule::default(),
            sched_structure: NoiseSchedule::default(),
        }
    }
}

impl SpectralScore for AnalyticGaussianScore {
    fn scores(&self, x: &Array2<f64>, lambda: &Array1<f64>, _u: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        Ok((
            analytic_gaussian_score(x, t, self.mu, self.s, &self.sched_x)?,
            analytic_gaussian_score(lambda, t, self.mu, self.s, &self.sched_structure)?,
        ))
    }
}

impl FullRankScore for AnalyticGaussianScore {
    fn scores(&self, x: &Array2<f64>, a: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut sa = analytic_gaussian_score(a, t, self.mu, self.s, &self.sched_structure)?;
        for i in 0..a.nrows() {
            sa[[i, i]] = 0.0;
        }
        Ok((analytic_gaussian_score(x, t, self.mu, self.s, &self.sched_x)?, sa))
    }
}

/// Monte-Carlo `Cov(M_s[i,j], M_t[k,l])` for `M_t = U₀ diag(B_t) U₀ᵀ` with
/// `B` a standard Brownian motion, plus its jackknife standard error.
pub fn mc_covariance<R: Rng + ?Sized>(u0: &Array2<f64>, idx: KernelIndex, n_samples: usize, rng: &mut R) -> Result<(f64, f64)> {
    if n_samples < 1000 {
        return Err(precondition("at least 10³ samples are required"));
    }
    let n = u0.nrows();
    if u0.ncols() != n || [idx.i, idx.j, idx.k, idx.l].iter().any(|&v| v >= n) {
        return Err(Error::Shape("kernel index out of range".into()));
    }
    if idx.s < 0.0 || idx.t < 0.0 {
        return Err(precondition("negative time"));
    }
    let wa: Vec<f64> = (0..n).map(|h| u0[[idx.i, h]] * u0[[idx.j, h]]).collect();
    let wb: Vec<f64> = (0..n).map(|h| u0[[idx.k, h]] * u0[[idx.l, h]]).collect();
    let (early, late) = (idx.s.min(idx.t), idx.s.max(idx.t));
    let mut xs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (mut ms, mut mt) = (0.0, 0.0);
        for h in 0..n {
            let b_early = early.sqrt() * normal(rng);
            let b_late = b_early + (late - early).sqrt() * normal(rng);
            let (bs, bt) = if idx.s <= idx.t { (b_early, b_late) } else { (b_late, b_early) };
            ms += wa[h] * bs;
            mt += wb[h] * bt;
        }
        xs.push(ms);
        ys.push(mt);
    }
    let nf = n_samples as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let cov = |sxy: f64, sx: f64, sy: f64, m: f64| sxy / m - (sx / m) * (sy / m);
    let est = cov(sxy, sx, sy, nf);
    let loo: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| cov(sxy - a * b, sx - a, sy - b, nf - 1.0))
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|v| (v - mean_loo).powi(2)).sum::<f64>();
    Ok((est, var.sqrt()))
}

/// Direct biased MMD² by explicit double loops over each pair of sets.
pub fn naive_mmd(set_a: &[Vec<f64>], set_b: &[Vec<f64>], kernel: Kernel, bandwidth: f64) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(precondition("empty set"));
    }
    let k = |x: &Vec<f64>, y: &Vec<f64>| -> f64 {
        let len = x.len().max(y.len());
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for i in 0..len {
            let d = x.get(i).copied().unwrap_or(0.0) - y.get(i).copied().unwrap_or(0.0);
            l1 += d.abs();
            l2 += d * d;
        }
        let dist_sq = match kernel {
            Kernel::GaussianTv => (l1 / 2.0) * (l1 / 2.0),
            Kernel::GaussianRbf => l2,
        };
        (-dist_sq / (2.0 * bandwidth * bandwidth)).exp()
    };
    let mut xx = 0.0;
    for a in set_a {
        for b in set_a {
            xx += k(a, b);
        }
    }
    let mut yy = 0.0;
    for a in set_b {
        for b in set_b {
            yy += k(a, b);
        }
    }
    let mut xy = 0.0;
    for a in set_a {
        for b in set_b {
            xy += k(a, b);
        }
    }
    let (na, nb) = (set_a.len() as f64, set_b.len() as f64);
    Ok((xx / (na * na) + yy / (nb * nb) - 2.0 * xy / (na * nb)).max(0.0))
}

fn induced_edges(a: &Array2<f64>, s: [usize; 4]) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for p in 0..4 {
        for q in (p + 1)..4 {
            if a[[s[p], s[q]]] != 0.0 {
                e.push((p, q));
            }
        }
    }
    e
}

fn connected4(edges: &[(usize, usize)]) -> bool {
    let mut seen = [false; 4];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(p, q) in edges {
            for (x, y) in [(p, q), (q, p)] {
                if x == v && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    seen.iter().all(|s| *s)
}

/// Graphlet type of a connected 4-node edge set by isomorphism testing
/// against the six canonical graphlets under all 24 relabelings.
fn isomorphism_class(edges: &[(usize, usize)]) -> usize {
    const CANON: [&[(usize, usize)]; 6] = [
        &[(0, 1), (1, 2), (2, 3)],
        &[(0, 1), (0, 2), (0, 3)],
        &[(0, 1), (1, 2), (2, 3), (3, 0)],
        &[(0, 1), (1, 2), (2, 0), (2, 3)],
        &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 0)],
        &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
    ];
    let to_mask = |es: &[(usize, usize)], perm: &[usize; 4]| -> u16 {
        es.iter().fold(0u16, |m, &(p, q)| {
            let (x, y) = (perm[p].min(perm[q]), perm[p].max(perm[q]));
            m | 1 << (x * 4 + y)
        })
    };
    let target = to_mask(edges, &[0, 1, 2, 3]);
    let mut perms = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let mut s = p;
                    s.sort_unstable();
                    if s == [0, 1, 2, 3] {
                        perms.push(p);
                    }
                }
            }
        }
    }
    CANON
        .iter()
        .position(|c| c.len() == edges.len() && perms.iter().any(|p| to_mask(c, p) == target))
        .expect("every connected 4-node graph is one of six graphlets")
}

/// Per-node graphlet counts over all `C(n, 4)` node subsets.
pub fn orbit_counts_bruteforce(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, 6));
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                for l in (k + 1)..n {
                    let s = [i, j, k, l];
                    let e = induced_edges(a, s);
                    if e.len() >= 3 && connected4(&e) {
                        let c = isomorphism_class(&e);
                        for v in s {
                            out[[v, c]] += 1.0;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-node K₄ memberships counted from triangles: a K₄ through `v` is a
/// triangle in `N(v)`.
pub fn k4_counts_via_triangles(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let adj = |i: usize, j: usize| a[[i, j]] != 0.0;
    (0..n)
        .map(|v| {
            let nb: Vec<usize> = (0..n).filter(|&u| u != v && adj(v, u)).collect();
            let mut c = 0.0;
            for x in 0..nb.len() {
                for y in (x + 1)..nb.len() {
                    for z in (y + 1)..nb.len() {
                        if adj(nb[x], nb[y]) && adj(nb[y], nb[z]) && adj(nb[x], nb[z]) {
                            c += 1.0;
                        }
                    }
                }
            }
            c
        })
        .collect()
}

/// Per-node induced-P₄ memberships from explicit walks `a–b–c–d` with
/// no chords.
pub fn path_counts_via_walks(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let adj = |i: usize, j: usize| i != j && a[[i, j]] != 0.0;
    let mut out = vec![0.0; n];
    for p in 0..n {
        for q in 0..n {
            if !adj(p, q) {
                continue;
            }
            for r in 0..n {
                if r == p || !adj(q, r) || adj(p, r) {
                    continue;
                }
                for s in 0..n {
                    if s == p || s == q || !adj(r, s) || adj(q, s) || adj(p, s) {
                        continue;
                    }
                    // each path is walked from both ends
                    for v in [p, q, r, s] {
                        out[v] += 0.5;
                    }
                }
            }
        }
    }
    out
}

/// Faulty or correct kernel implementation under verification.
pub type KernelFn<'a> = &'a (dyn Fn(&Array2<f64>, KernelIndex) -> Result<f64> + Sync);

/// Options for the self-verification suite.
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte-Carlo samples per covariance tuple.
    pub cov_samples: usize,
    /// Chains for the analytic-score sampler check.
    pub chains: usize,
    pub sampler_steps: usize,
    /// Trajectories and steps for the Euler–Maruyama check.
    pub em_paths: usize,
    pub em_steps: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2,
            cov_samples: 200_000,
            chains: 10_000,
            sampler_steps: 1000,
            em_paths: 10_000,
            em_steps: 1000,
        }
    }
}

/// Seeded random orthonormal `n × n` matrix (Gram–Schmidt, independent of
/// the dataset generator).
pub fn random_orthonormal_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| cols[j][i])
}

/// Closed-form kernel versus Monte Carlo on `n_bases` random bases (n = 4)
/// and 16 random index/time tuples each. Measured value is the largest
/// |difference| / SE.
pub fn check_covariance_kernel(kernel: KernelFn<'_>, n_bases: usize, samples: usize, seed: u64) -> Result<OracleReport> {
    let mut worst = 0.0_f64;
    let mut r = rng::substream(seed, 30, 0);
    for b in 0..n_bases {
        let u0 = random_orthonormal_matrix(4, &mut r);
        for q in 0..16 {
            let idx = KernelIndex {
                i: r.random_range(0..4),
                j: r.random_range(0..4),
                k: r.random_range(0..4),
                l: r.random_range(0..4),
                s: r.random_range(0.05..1.0),
                t: r.random_range(0.05..1.0),
            };
            let closed = kernel(&u0, idx)?;
            let (est, se) = mc_covariance(&u0, idx, samples, &mut rng::substream(seed, 31, (b * 16 + q) as u64))?;
            worst = worst.max((closed - est).abs() / se);
        }
    }
    Ok(OracleReport::at_most("covariance kernel vs Monte Carlo (|z|)", worst, 3.0, samples))
}

/// Sample mean and standard deviation over every terminal coordinate of
/// `Λ` (and of `X`) from `chains` spectral chains on `U = I_dim`, driven by
/// the exact Gaussian score. All chains form one sampling batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryStats {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

pub fn sampler_recovery(
    solver: crate::sampling::Solver,
    mu: f64,
    s: f64,
    dim: usize,
    chains: usize,
    steps: usize,
    seed: u64,
) -> Result<(RecoveryStats, RecoveryStats)> {
    let score = AnalyticGaussianScore::standard(mu, s);
    let config = crate::sampling::SampleConfig {
        steps,
        solver,
        seed,
        ..Default::default()
    };
    let u = Array2::eye(dim);
    let batch = (0..chains).map(|k| (&u, rng::substream(seed, 32, k as u64))).collect();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = crate::sampling::sample_spectral_batch(&score, batch, 1, &config, &[])?
        .into_iter()
        .map(|out| (out.lambda.to_vec(), out.x.iter().copied().collect()))
        .collect();
    let stats = |v: Vec<f64>| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        RecoveryStats {
            mean,
            std: var.sqrt(),
            samples: v.len(),
        }
    };
    Ok((
        stats(draws.iter().flat_map(|d| d.0.iter().copied()).collect()),
        stats(draws.iter().flat_map(|d| d.1.iter().copied()).collect()),
    ))
}

/// Closed-form forward marginals versus Euler–Maruyama paths from a point
/// mass at 1.5, at `t ∈ {0.25, 0.5, 1}`, for the six VP families and the
/// geometric VE schedule. Measured value is the largest |z| over means and
/// variances.
pub fn check_forward_em(paths: usize, steps: usize, seed: u64) -> Result<OracleReport> {
    use crate::schedules::{ScheduleFamily, ABLATION_FAMILIES};
    use rayon::prelude::*;
    const X0: f64 = 1.5;
    let mut schedules: Vec<NoiseSchedule> = ABLATION_FAMILIES.iter().map(|&f| NoiseSchedule::vp(f)).collect();
    schedules.push(NoiseSchedule::ve(ScheduleFamily::Constant));
    let cases: Vec<(usize, f64)> = (0..schedules.len())
        .flat_map(|s| [0.25, 0.5, 1.0].map(move |t| (s, t)))
        .collect();
    let zs: Vec<f64> = cases
        .par_iter()
        .enumerate()
        .map(|(c, &(s, t))| {
            let sched = &schedules[s];
            let x0 = Array1::from_elem(paths, X0);
            let xt = crate::diffusion::simulate_forward_em_to(&x0, sched, t, steps, &mut rng::substream(seed, 33, c as u64))?;
            let m = sched.marginal(t)?;
            let var = m.std * m.std;
            let nf = paths as f64;
            let mean = xt.sum() / nf;
            let svar = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let z_mean = (mean - m.mean_coef * X0).abs() / (var / nf).sqrt();
            let z_var = (svar - var).abs() / (var * (2.0 / (nf - 1.0)).sqrt());
            Ok(z_mean.max(z_var))
        })
        .collect::<Result<_>>()?;
    let worst = zs.into_iter().fold(0.0, f64::max);
    Ok(OracleReport::at_most("forward closed form vs Euler-Maruyama (|z|)", worst, 4.0, paths))
}

fn random_adjacency<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// Analytic gradients versus central differences on `configs` random tiny
/// architectures of both variants. Measured value is the worst relative
/// error.
pub fn check_gradients(configs: usize, seed: u64) -> Result<OracleReport> {
    use crate::scorenet::{grad_check, Arch, NoisyExample, ScoreNetParams, Variant};
    use rayon::prelude::*;
    let errs: Vec<f64> = (0..configs)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::substream(seed, 34, c as u64);
            let variant = if c % 2 == 0 { Variant::Spectral } else { Variant::FullRank };
            let mut arch = Arch::new(variant, r.random_range(1..4), r.random_range(2..6), 2 * r.random_range(1..4));
            arch.eigvec_features = r.random_bool(0.5);
            let params = ScoreNetParams::random(arch, &mut r)?;
            let sched = NoiseSchedule::vp(crate::schedules::ABLATION_FAMILIES[c % 6]);
            let batch = (0..2)
                .map(|_| {
                    let n = r.random_range(3..7);
                    let a = random_adjacency(n, 0.4, &mut r);
                    let x = Array2::from_shape_fn((n, arch.feature_dim), |_| normal(&mut r));
                    let t = r.random_range(0.05..1.0);
                    match variant {
                        Variant::Spectral => {
                            let s = crate::graphs::eig_decompose(&a)?;
                            NoisyExample::spectral(&x, &s.u, &s.lambda, t, &sched, &sched, &mut r)
                        }
                        Variant::FullRank => NoisyExample::full(&x, &a, t, &sched, &sched, &mut r),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            grad_check(&params, &batch, 1e-5)
        })
        .collect::<Result<_>>()?;
    let worst = errs.into_iter().fold(0.0, f64::max);
    Ok(OracleReport::at_most("score-net gradients vs finite differences", worst, 1e-4, configs))
}

/// Reports for exact-score generation of `N(2, 0.5²)`: per solver the mean
/// error in standard errors and the relative std error, then the relative
/// disagreement of the two solvers' means.
pub fn check_sampler_recovery(chains: usize, steps: usize, seed: u64) -> Result<Vec<OracleReport>> {
    use crate::sampling::Solver;
    const MU: f64 = 2.0;
    const S: f64 = 0.5;
    let mut reports = Vec::new();
    let mut means = Vec::new();
    for solver in [Solver::Pc, Solver::Splitting] {
        let (l, x) = sampler_recovery(solver, MU, S, 1, chains, steps, seed)?;
        let z = |r: &RecoveryStats| (r.mean - MU).abs() / (r.std / (r.samples as f64).sqrt());
        let rel = |r: &RecoveryStats| (r.std - S).abs() / S;
        reports.push(OracleReport::at_most(format!("{solver} exact-score mean (|z|)"), z(&l).max(z(&x)), 3.0, chains));
        reports.push(OracleReport::at_most(format!("{solver} exact-score std (relative)"), rel(&l).max(rel(&x)), 0.05, chains));
        means.push((l.mean, x.mean));
    }
    let agree = ((means[0].0 - means[1].0) / means[1].0).abs().max(((means[0].1 - means[1].1) / means[1].1).abs());
    reports.push(OracleReport::at_most("pc vs splitting means (relative)", agree, 0.02, chains));
    Ok(reports)
}

/// Spectral confinement: at `checks` random steps of runs with both
/// solvers, re-decomposing `U diag(Λ_t) Uᵀ` returns `Λ_t`. Measured value is
/// the largest eigenvalue deviation.
pub fn check_confinement(runs: usize, checks: usize, steps: usize, seed: u64) -> Result<OracleReport> {
    use crate::sampling::{sample_spectral_chain, SampleConfig, Solver};
    let mut worst = 0.0_f64;
    for k in 0..runs {
        let mut r = rng::substream(seed, 35, k as u64);
        let n = r.random_range(4..13);
        let u = random_orthonormal_matrix(n, &mut r);
        let solver = if k % 2 == 0 { Solver::Pc } else { Solver::Splitting };
        let mut trace: Vec<usize> = (0..checks).map(|_| r.random_range(0..steps)).collect();
        trace.sort_unstable();
        trace.dedup();
        let config = SampleConfig {
            steps,
            solver,
            ..Default::default()
        };
        let score = AnalyticGaussianScore::standard(r.random_range(-2.0..2.0), r.random_range(0.2..1.5));
        let out = sample_spectral_chain(&score, &u, 2, &config, &trace, &mut r)?;
        for (_, lambda) in &out.trace {
            let a = crate::graphs::recompose_parts(&u, lambda)?;
            let mut got = crate::graphs::eig_decompose(&a)?.lambda.to_vec();
            let mut want = lambda.to_vec();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    Ok(OracleReport::at_most("spectral confinement (max |Δλ|)", worst, 1e-8, runs * checks))
}

/// Optimized MMD against the triple loop on random sets of mixed lengths,
/// for both kernels, plus `MMD(X, X)`. Measured value is the largest
/// absolute discrepancy.
pub fn check_mmd(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut worst = 0.0_f64;
    let mut r = rng::substream(seed, 36, 0);
    for trial in 0..trials {
        let kernel = if trial % 2 == 0 { Kernel::GaussianTv } else { Kernel::GaussianRbf };
        let mut set = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|_| {
                    let len = r.random_range(1..12);
                    (0..len).map(|_| r.random_range(0.0..3.0)).collect()
                })
                .collect()
        };
        let a = set(1 + trial % 9);
        let b = set(1 + (trial * 7) % 11);
        let bw = [0.1, 1.0, 30.0][trial % 3];
        let fast = crate::metrics::mmd(&a, &b, kernel, bw)?.value;
        worst = worst.max((fast - naive_mmd(&a, &b, kernel, bw)?).abs());
        worst = worst.max(crate::metrics::mmd(&a, &a, kernel, bw)?.value.abs());
    }
    Ok(OracleReport::at_most("MMD vs naive double loop", worst, 1e-12, trials))
}

/// Edge bitmask of an `n ≤ 8` graph: bit `pair_index(i, j)` per edge.
type Code = u32;

fn pair_bit(n: usize, i: usize, j: usize) -> u32 {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    (i * n - i * (i + 1) / 2 + (j - i - 1)) as u32
}

fn has_edge(code: Code, n: usize, i: usize, j: usize) -> bool {
    code >> pair_bit(n, i, j) & 1 == 1
}

/// Canonical code: minimum over relabelings that respect a stable
/// degree-refined colouring.
fn canonical_code(code: Code, n: usize) -> Code {
    let mut colour: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| j != i && has_edge(code, n, i, j)).count()).collect();
    loop {
        let sigs: Vec<(usize, Vec<usize>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<usize> = (0..n).filter(|&j| j != i && has_edge(code, n, i, j)).map(|j| colour[j]).collect();
                nb.sort_unstable();
                (colour[i], nb)
            })
            .collect();
        let mut distinct = sigs.clone();
        distinct.sort();
        distinct.dedup();
        let next: Vec<usize> = sigs.iter().map(|s| distinct.binary_search(s).expect("present")).collect();
        let stable = distinct.len() == colour.iter().collect::<std::collections::BTreeSet<_>>().len();
        colour = next;
        if stable {
            break;
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| colour[i]);
    for &v in &order {
        match classes.last_mut() {
            Some(c) if colour[c[0]] == colour[v] => c.push(v),
            _ => classes.push(vec![v]),
        }
    }
    // position -> vertex, permuted within each class
    let mut best = Code::MAX;
    let mut slots: Vec<usize> = classes.concat();
    let bounds: Vec<(usize, usize)> = classes
        .iter()
        .scan(0, |start, c| {
            let b = (*start, *start + c.len());
            *start += c.len();
            Some(b)
        })
        .collect();
    fn permute(slots: &mut Vec<usize>, bounds: &[(usize, usize)], class: usize, pos: usize, visit: &mut dyn FnMut(&[usize])) {
        if class == bounds.len() {
            visit(slots);
            return;
        }
        let hi = bounds[class].1;
        if pos == hi {
            permute(slots, bounds, class + 1, bounds.get(class + 1).map_or(0, |b| b.0), visit);
            return;
        }
        for k in pos..hi {
            slots.swap(pos, k);
            permute(slots, bounds, class, pos + 1, visit);
            slots.swap(pos, k);
        }
    }
    let start = bounds.first().map_or(0, |b| b.0);
    permute(&mut slots, &bounds, 0, start, &mut |perm| {
        let mut c: Code = 0;
        for p in 0..n {
            for q in (p + 1)..n {
                if has_edge(code, n, perm[p], perm[q]) {
                    c |= 1 << pair_bit(n, p, q);
                }
            }
        }
        best = best.min(c);
    });
    best
}

/// One representative per isomorphism class of simple graphs on `n ≤ 8`
/// nodes, grown vertex by vertex from the classes on `n − 1` nodes.
pub fn nonisomorphic_graphs(n: usize) -> Result<Vec<Array2<f64>>> {
    if n > 8 {
        return Err(precondition("exhaustive graph enumeration supports n ≤ 8"));
    }
    let mut level: Vec<Code> = vec![0];
    for m in 2..=n {
        let mut next = std::collections::BTreeSet::new();
        for &g in &level {
            for mask in 0u32..(1 << (m - 1)) {
                let mut c: Code = 0;
                for i in 0..(m - 1) {
                    for j in (i + 1)..(m - 1) {
                        if has_edge(g, m - 1, i, j) {
                            c |= 1 << pair_bit(m, i, j);
                        }
                    }
                    if mask >> i & 1 == 1 {
                        c |= 1 << pair_bit(m, i, m - 1);
                    }
                }
                next.insert(canonical_code(c, m));
            }
        }
        level = next.into_iter().collect();
    }
    if n == 0 {
        return Ok(vec![Array2::zeros((0, 0))]);
    }
    Ok(level
        .into_iter()
        .map(|c| Array2::from_shape_fn((n, n), |(i, j)| if i != j && has_edge(c, n, i, j) { 1.0 } else { 0.0 }))
        .collect())
}

/// ESU orbit counts against the 4-subset classifier on every graph with
/// `4 ≤ n ≤ max_n` nodes up to isomorphism. Measured value is the number of
/// mismatching graphs.
pub fn check_orbits(max_n: usize) -> Result<OracleReport> {
    use rayon::prelude::*;
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for n in 4..=max_n {
        let graphs = nonisomorphic_graphs(n)?;
        total += graphs.len();
        mismatches += graphs
            .into_par_iter()
            .map(|a| {
                let g = crate::graphs::Graph::new(Array2::ones((n, 1)), a, false)?;
                Ok(usize::from(crate::metrics::orbit_counts(&g) != orbit_counts_bruteforce(&g.a)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
    }
    Ok(OracleReport::at_most("orbit counts vs exhaustive classifier", mismatches as f64, 0.0, total))
}

/// Full self-verification suite with the given kernel implementation.
pub fn run_suite(kernel: KernelFn<'_>, opts: &VerifyOptions) -> Result<Vec<OracleReport>> {
    let mut out = vec![
        check_covariance_kernel(kernel, 5, opts.cov_samples, opts.seed)?,
        check_forward_em(opts.em_paths, opts.em_steps, opts.seed)?,
        check_gradients(20, opts.seed)?,
    ];
    out.extend(check_sampler_recovery(opts.chains, opts.sampler_steps, opts.seed)?);
    out.push(check_confinement(4, 10, 200, opts.seed)?);
    out.push(check_mmd(50, opts.seed)?);
    out.push(check_orbits(8)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::covariance_kernel;
    use crate::schedules::ScheduleFamily;

    #[test]
    fn analytic_score_examples() {
        let s = NoiseSchedule::vp(ScheduleFamily::Linear);
        let t = 0.4;
        let m = s.marginal(t).unwrap();
        let at_mean = Array1::from_elem(3, m.mean_coef * 2.0);
        assert!(analytic_gaussian_score(&at_mean, t, 2.0, 0.5, &s).unwrap().iter().all(|v| v.abs() < 1e-15));
        let x = Array1::from(vec![0.3, -1.2]);
        let x0 = Array1::from(vec![1.5, 1.5]);
        let a = analytic_gaussian_score(&x, t, 1.5, 0.0, &s).unwrap();
        let b = crate::diffusion::conditional_score(&x, &x0, t, &s).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12 * q.abs().max(1.0));
        }
        assert!(analytic_gaussian_score(&x, 0.0, 1.0, 0.0, &s).is_err());
    }

    #[test]
    fn analytic_score_matches_log_density_gradient() {
        for sched in [NoiseSchedule::vp(ScheduleFamily::Cosine), NoiseSchedule::ve(ScheduleFamily::Linear)] {
            for &(x, t) in &[(0.7, 0.2), (-1.5, 0.9), (3.0, 0.55)] {
                let h = 1e-5;
                let fd = (gaussian_marginal_log_density(x + h, t, 2.0, 0.5, &sched).unwrap()
                    - gaussian_marginal_log_density(x - h, t, 2.0, 0.5, &sched).unwrap())
                    / (2.0 * h);
                let an = analytic_gaussian_score(&Array1::from(vec![x]), t, 2.0, 0.5, &sched).unwrap()[0];
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn mc_covariance_identity_cases() {
        let u = Array2::eye(3);
        let idx = KernelIndex { i: 1, j: 1, k: 1, l: 1, s: 0.3, t: 0.8 };
        let (est, se) = mc_covariance(&u, idx, 50_000, &mut rng::seeded(1)).unwrap();
        assert!((est - 0.3).abs() < 3.0 * se, "{est} ± {se}");
        let off = KernelIndex { i: 0, j: 0, k: 0, l: 2, ..idx };
        let (est, se) = mc_covariance(&u, off, 50_000, &mut rng::seeded(2)).unwrap();
        assert!(est.abs() < 3.0 * se.max(1e-300) || est == 0.0);
        assert!(mc_covariance(&u, idx, 10, &mut rng::seeded(2)).is_err());
    }

    #[test]
    fn covariance_check_detects_mutation() {
        let good = |u: &Array2<f64>, i: KernelIndex| covariance_kernel(u, i);
        let bad = |u: &Array2<f64>, i: KernelIndex| crate::diffusion::covariance_kernel_with(u, i, |s, t| s * t);
        assert!(check_covariance_kernel(&good, 1, 20_000, 5).unwrap().pass);
        assert!(!check_covariance_kernel(&bad, 1, 20_000, 5).unwrap().pass);
    }

    #[test]
    fn naive_mmd_hand_expansion() {
        assert_eq!(naive_mmd(&[vec![1.0]], &[vec![1.0]], Kernel::GaussianRbf, 1.0).unwrap(), 0.0);
        // a = {0, 1}, b = {2}: k(d) = exp(−d²/2)
        let k = |d: f64| (-d * d / 2.0).exp();
        let expect = (2.0 + 2.0 * k(1.0)) / 4.0 + 1.0 - 2.0 * (k(2.0) + k(1.0)) / 2.0;
        let got = naive_mmd(&[vec![0.0], vec![1.0]], &[vec![2.0]], Kernel::GaussianRbf, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn bruteforce_classifier_examples() {
        let mut k5 = Array2::ones((5, 5));
        for i in 0..5 {
            k5[[i, i]] = 0.0;
        }
        let c = orbit_counts_bruteforce(&k5);
        assert!(c.column(5).iter().all(|v| *v == 4.0));
        assert_eq!(k4_counts_via_triangles(&k5), vec![4.0; 5]);
        let mut p4 = Array2::zeros((4, 4));
        for (i, j) in [(0, 1), (1, 2), (2, 3)] {
            p4[[i, j]] = 1.0;
            p4[[j, i]] = 1.0;
        }
        assert_eq!(path_counts_via_walks(&p4), vec![1.0; 4]);
        assert!(orbit_counts_bruteforce(&p4).column(0).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn random_orthonormal_is_orthonormal() {
        let u = random_orthonormal_matrix(6, &mut rng::seeded(4));
        assert!(crate::diffusion::orthonormality_error(&u) < 1e-12);
    }

    #[test]
    fn isomorphism_class_counts() {
        // graphs on n unlabeled nodes: 1, 1, 2, 4, 11, 34, 156, 1044
        let counts: Vec<usize> = (0..8).map(|n| nonisomorphic_graphs(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 4, 11, 34, 156, 1044]);
        assert!(nonisomorphic_graphs(9).is_err());
    }

    #[test]
    fn canonical_code_is_label_invariant() {
        let mut r = rng::seeded(12);
        for _ in 0..50 {
            let n = r.random_range(2..8);
            let a = random_adjacency(n, 0.5, &mut r);
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
            let code = |m: &dyn Fn(usize, usize) -> f64| {
                let mut c: Code = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if m(i, j) > 0.0 {
                            c |= 1 << pair_bit(n, i, j);
                        }
                    }
                }
                c
            };
            let c1 = code(&|i, j| a[[i, j]]);
            let c2 = code(&|i, j| a[[perm[i], perm[j]]]);
            assert_eq!(canonical_code(c1, n), canonical_code(c2, n));
        }
    }

    #[test]
    fn small_suite_checks_pass() {
        assert!(check_mmd(20, 3).unwrap().pass);
        assert!(check_orbits(6).unwrap().pass);
        assert!(check_gradients(4, 3).unwrap().pass);
        assert!(check_confinement(2, 5, 50, 3).unwrap().pass);
        assert!(check_forward_em(2000, 200, 3).unwrap().pass);
    }
}
