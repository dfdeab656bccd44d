//! Forward diffusion: closed-form perturbation kernels, conditional scores,
//! an Euler–Maruyama cross-check, and the adjacency noise process induced by
//! diffusing only the spectrum.
//!
//! With the VP drift `f(Λ, t) = −½ β(t) Λ` the spectrum is an
//! Ornstein–Uhlenbeck process with transition
//! `Λ_t | Λ₀ ~ N(e^{−½∫β} Λ₀, (1 − e^{−∫β}) I)`. Writing
//! `A_t = U₀ diag(Λ_t) U₀ᵀ`, the adjacency is driven by the n-dimensional
//! Gaussian process `M_t = U₀ diag(B_t) U₀ᵀ` whose covariance kernel is
//! `K(s,t)_{ijkl} = min(s,t) Σ_h U₀[i,h] U₀[j,h] U₀[k,h] U₀[l,h]`.

use ndarray::{Array, Array1, Array2, ArrayBase, Data, Dimension};
use rand::Rng;

use crate::error::{precondition, Error, Result};
use crate::graphs::recompose_parts;
use crate::rng::normal;
use crate::schedules::NoiseSchedule;

/// Lower end of the training time range; scores are singular at `t = 0`.
pub const T_EPS: f64 = 1e-5;

/// A corrupted `(X_t, Λ_t)` pair at diffusion time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub x: Array2<f64>,
    pub lambda: Array1<f64>,
    pub t: f64,
}

impl DiffusionState {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }
}

/// Index into the covariance kernel `K(s,t)_{ijkl}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub s: f64,
    pub t: f64,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(precondition(format!("time {t} outside [0, 1]")))
    }
}

fn gaussian_like<D: Dimension, R: Rng + ?Sized>(shape: D, rng: &mut R) -> Array<f64, D> {
    let mut out = Array::zeros(shape);
    out.iter_mut().for_each(|v| *v = normal(rng));
    out
}

/// Draws `x_t = mean_coef(t)·x₀ + std(t)·ε` and returns `(x_t, ε)`.
pub fn perturb<S, D, R>(
    x0: &ArrayBase<S, D>,
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Array<f64, D>, Array<f64, D>)>
where
    S: Data<Elem = f64>,
    D: Dimension,
    R: Rng + ?Sized,
{
    let m = schedule.marginal(t)?;
    let eps = gaussian_like(x0.raw_dim(), rng);
    let xt = x0.mapv(|v| v * m.mean_coef) + &eps.mapv(|e| e * m.std);
    Ok((xt, eps))
}

/// `∇ log p_{t|0}(x_t | x₀) = −(x_t − mean_coef·x₀) / std²`.
pub fn conditional_score<S1, S2, D>(
    x_t: &ArrayBase<S1, D>,
    x0: &ArrayBase<S2, D>,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if t <= 0.0 {
        return Err(precondition("conditional score is undefined at t = 0"));
    }
    if x_t.shape() != x0.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x_t.shape(), x0.shape())));
    }
    let m = schedule.marginal(t)?;
    let var = m.std * m.std;
    let mut out = x_t.to_owned();
    out.zip_mut_with(x0, |xt, &x| *xt = -(*xt - m.mean_coef * x) / var);
    Ok(out)
}

/// Euler–Maruyama integration of the forward SDE from 0 to 1.
pub fn simulate_forward_em<S, D, R>(
    x0: &ArrayBase<S, D>,
    schedule: &NoiseSchedule,
    n_steps: usize,
    rng: &mut R,
) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
    R: Rng + ?Sized,
{
    simulate_forward_em_to(x0, schedule, 1.0, n_steps, rng)
}

/// Euler–Maruyama integration of the forward SDE from 0 to `t_end`.
pub fn simulate_forward_em_to<S, D, R>(
    x0: &ArrayBase<S, D>,
    schedule: &NoiseSchedule,
    t_end: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
    R: Rng + ?Sized,
{
    check_time(t_end)?;
    if n_steps == 0 {
        return Err(precondition("n_steps must be positive"));
    }
    let dt = t_end / n_steps as f64;
    let mut x = x0.to_owned();
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let drift = schedule.drift_coef(t) * dt;
        let noise = (schedule.diffusion_sq(t) * dt).sqrt();
        x.iter_mut()
            .for_each(|v| *v += drift * *v + noise * normal(rng));
    }
    Ok(x)
}

/// Maximum entrywise deviation of `UᵀU` from the identity.
pub fn orthonormality_error(u: &Array2<f64>) -> f64 {
    let n = u.ncols();
    let g = u.t().dot(u);
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - target).abs());
        }
    }
    worst
}

fn check_orthonormal(u: &Array2<f64>) -> Result<()> {
    if u.nrows() != u.ncols() {
        return Err(Error::Shape(format!("U is {}x{}", u.nrows(), u.ncols())));
    }
    let err = orthonormality_error(u);
    if err > 1e-8 {
        return Err(precondition(format!("U not orthonormal (max |UᵀU − I| = {err:e})")));
    }
    Ok(())
}

/// Closed-form `K(s,t)_{ijkl}`.
pub fn covariance_kernel(u0: &Array2<f64>, idx: KernelIndex) -> Result<f64> {
    covariance_kernel_with(u0, idx, f64::min)
}

/// Kernel with a replaceable time factor; `covariance_kernel` uses `min`.
/// Exists so self-verification can inject a faulty factor and confirm the
/// Monte-Carlo check catches it.
pub fn covariance_kernel_with(
    u0: &Array2<f64>,
    idx: KernelIndex,
    time_factor: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    check_orthonormal(u0)?;
    let n = u0.nrows();
    if [idx.i, idx.j, idx.k, idx.l].iter().any(|&v| v >= n) {
        return Err(precondition(format!("kernel index out of range for n = {n}")));
    }
    check_time(idx.s)?;
    check_time(idx.t)?;
    let sum: f64 = (0..n)
        .map(|h| u0[[idx.i, h]] * u0[[idx.j, h]] * u0[[idx.k, h]] * u0[[idx.l, h]])
        .sum();
    Ok(time_factor(idx.s, idx.t) * sum)
}

/// One draw of `M_t = U₀ diag(g) U₀ᵀ` with `g ~ N(0, t·I)`.
pub fn sample_m<R: Rng + ?Sized>(u0: &Array2<f64>, t: f64, rng: &mut R) -> Result<Array2<f64>> {
    if t < 0.0 {
        return Err(precondition(format!("time {t} is negative")));
    }
    check_orthonormal(u0)?;
    let sd = t.sqrt();
    let g = Array1::from_shape_fn(u0.ncols(), |_| sd * normal(rng));
    recompose_parts(u0, &g)
}

/// Brownian path of `M` observed at two times `s ≤ t` (shared increments).
pub fn sample_m_pair<R: Rng + ?Sized>(
    u0: &Array2<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    if lo < 0.0 {
        return Err(precondition("negative time"));
    }
    check_orthonormal(u0)?;
    let n = u0.ncols();
    let b_lo = Array1::from_shape_fn(n, |_| lo.sqrt() * normal(rng));
    let b_hi = &b_lo + &Array1::from_shape_fn(n, |_| (hi - lo).sqrt() * normal(rng));
    let m_lo = recompose_parts(u0, &b_lo)?;
    let m_hi = recompose_parts(u0, &b_hi)?;
    Ok(if s <= t { (m_lo, m_hi) } else { (m_hi, m_lo) })
}
