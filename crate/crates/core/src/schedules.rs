//! Noise schedules for variance-preserving (VP) and variance-exploding (VE)
//! diffusion.
//!
//! Every VP family is `β(t) = β_min + c·f(t)` where `f` is the family shape
//! with `f(0) = 0`, and `c` is chosen so that `∫₀¹ β = B_total`. With the
//! defaults (`β_min = 0.1`, `β_max = 20`) this gives `B_total = 10.05`, the
//! integral of the usual linear schedule, so all six families share their
//! initial and final signal-to-noise ratio.
//!
//! VE families reuse the same shapes for the progress of `log σ`:
//! `σ(t) = σ_min (σ_max/σ_min)^{s(t)}` with `s(t) = B(0,t)/B(0,1)` computed
//! from the VP family. The `Constant` family gives the geometric schedule.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{precondition, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Vp,
    Ve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFamily {
    Linear,
    Quadratic,
    Sqrt,
    Cosine,
    Sigmoid,
    TwoLevel,
    /// `β ≡ β_min`; not part of the ablation set. Useful for tests and for
    /// the geometric VE schedule.
    Constant,
}

/// The six matched-endpoint families swept by the schedule ablation.
pub const ABLATION_FAMILIES: [ScheduleFamily; 6] = [
    ScheduleFamily::Linear,
    ScheduleFamily::Quadratic,
    ScheduleFamily::Sqrt,
    ScheduleFamily::Cosine,
    ScheduleFamily::Sigmoid,
    ScheduleFamily::TwoLevel,
];

const SIGMOID_SLOPE: f64 = 10.0;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl ScheduleFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::Sqrt => "sqrt",
            Self::Cosine => "cosine",
            Self::Sigmoid => "sigmoid",
            Self::TwoLevel => "two-level",
            Self::Constant => "constant",
        }
    }

    /// Shape `f(t)`, `f(0) = 0`.
    fn shape(self, t: f64) -> f64 {
        match self {
            Self::Linear => t,
            Self::Quadratic => t * t,
            Self::Sqrt => t.sqrt(),
            Self::Cosine => 0.5 * (1.0 - (PI * t).cos()),
            Self::Sigmoid => {
                logistic(SIGMOID_SLOPE * (t - 0.5)) - logistic(-0.5 * SIGMOID_SLOPE)
            }
            Self::TwoLevel => {
                if t >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Constant => 0.0,
        }
    }

    /// Antiderivative `F(t) = ∫₀ᵗ f`.
    fn shape_integral(self, t: f64) -> f64 {
        match self {
            Self::Linear => 0.5 * t * t,
            Self::Quadratic => t * t * t / 3.0,
            Self::Sqrt => 2.0 / 3.0 * t * t.sqrt(),
            Self::Cosine => 0.5 * t - (PI * t).sin() / (2.0 * PI),
            Self::Sigmoid => {
                let k = SIGMOID_SLOPE;
                (softplus(k * (t - 0.5)) - softplus(-0.5 * k)) / k - t * logistic(-0.5 * k)
            }
            Self::TwoLevel => (t - 0.5).max(0.0),
            Self::Constant => 0.0,
        }
    }
}

impl fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScheduleFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => Self::Linear,
            "quadratic" => Self::Quadratic,
            "sqrt" => Self::Sqrt,
            "cosine" => Self::Cosine,
            "sigmoid" => Self::Sigmoid,
            "two-level" | "twolevel" => Self::TwoLevel,
            "constant" => Self::Constant,
            other => return Err(precondition(format!("unknown schedule family `{other}`"))),
        })
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" | "VP" => Ok(Self::Vp),
            "ve" | "VE" => Ok(Self::Ve),
            other => Err(precondition(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Multiplier on `x₀` and standard deviation of `x_t | x₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalStats {
    pub mean_coef: f64,
    pub std: f64,
}

/// Immutable noise schedule on `t ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub family: ScheduleFamily,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::vp(ScheduleFamily::Linear)
    }
}

impl NoiseSchedule {
    pub fn vp(family: ScheduleFamily) -> Self {
        Self {
            kind: ScheduleKind::Vp,
            family,
            beta_min: 0.1,
            beta_max: 20.0,
            sigma_min: 0.1,
            sigma_max: 10.0,
        }
    }

    pub fn ve(family: ScheduleFamily) -> Self {
        Self {
            kind: ScheduleKind::Ve,
            ..Self::vp(family)
        }
    }

    /// VP schedule with constant `β ≡ beta` (zero allowed, for noiseless tests).
    pub fn vp_constant(beta: f64) -> Self {
        Self {
            beta_min: beta,
            beta_max: beta,
            ..Self::vp(ScheduleFamily::Constant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_min >= 0.0
            && self.beta_max >= self.beta_min
            && self.sigma_min > 0.0
            && self.sigma_max > self.sigma_min
            && self.beta_min.is_finite()
            && self.beta_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(precondition(format!("invalid schedule parameters {self:?}")))
        }
    }

    /// `∫₀¹ β` shared by all VP families.
    pub fn beta_total(&self) -> f64 {
        match self.family {
            ScheduleFamily::Constant => self.beta_min,
            _ => self.beta_min + 0.5 * (self.beta_max - self.beta_min),
        }
    }

    fn amplitude(&self) -> f64 {
        match self.family {
            ScheduleFamily::Constant => 0.0,
            fam => (self.beta_total() - self.beta_min) / fam.shape_integral(1.0),
        }
    }

    fn vp_beta(&self, t: f64) -> f64 {
        self.beta_min + self.amplitude() * self.family.shape(t)
    }

    fn vp_integral(&self, t: f64) -> f64 {
        self.beta_min * t + self.amplitude() * self.family.shape_integral(t)
    }

    /// VE progress of `log σ`, from 0 to 1.
    fn ve_progress(&self, t: f64) -> f64 {
        match self.family {
            ScheduleFamily::Constant => t,
            _ => self.vp_integral(t) / self.vp_integral(1.0),
        }
    }

    fn ve_progress_rate(&self, t: f64) -> f64 {
        match self.family {
            ScheduleFamily::Constant => 1.0,
            _ => self.vp_beta(t) / self.vp_integral(1.0),
        }
    }

    /// `σ(t)` of the VE parameterization (not the marginal std).
    fn ve_sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(self.ve_progress(t))
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(precondition(format!("time {t} outside [0, 1]")))
        }
    }

    /// VP `β(t)`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        if self.kind != ScheduleKind::Vp {
            return Err(precondition("beta(t) is defined for VP schedules"));
        }
        Ok(self.vp_beta(t))
    }

    /// `∫_{t0}^{t1} g(s)² ds`: the β integral for VP, `σ²(t1) − σ²(t0)` for VE.
    pub fn integral_beta(&self, t0: f64, t1: f64) -> Result<f64> {
        Self::check_t(t0)?;
        Self::check_t(t1)?;
        if t0 > t1 {
            return Err(precondition(format!("t0 = {t0} > t1 = {t1}")));
        }
        Ok(self.integral_unchecked(t0, t1))
    }

    pub(crate) fn integral_unchecked(&self, t0: f64, t1: f64) -> f64 {
        if t0 == t1 {
            return 0.0;
        }
        match self.kind {
            ScheduleKind::Vp => self.vp_integral(t1) - self.vp_integral(t0),
            ScheduleKind::Ve => self.ve_sigma(t1).powi(2) - self.ve_sigma(t0).powi(2),
        }
    }

    /// Squared diffusion coefficient `g(t)²` of the forward SDE.
    pub fn diffusion_sq(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Vp => self.vp_beta(t),
            ScheduleKind::Ve => {
                let ln_ratio = (self.sigma_max / self.sigma_min).ln();
                2.0 * self.ve_sigma(t).powi(2) * ln_ratio * self.ve_progress_rate(t)
            }
        }
    }

    /// Linear drift coefficient: the forward drift is `drift_coef(t)·x`.
    pub fn drift_coef(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Vp => -0.5 * self.vp_beta(t),
            ScheduleKind::Ve => 0.0,
        }
    }

    pub fn marginal(&self, t: f64) -> Result<MarginalStats> {
        Self::check_t(t)?;
        Ok(self.marginal_unchecked(t))
    }

    pub(crate) fn marginal_unchecked(&self, t: f64) -> MarginalStats {
        self.transition_unchecked(0.0, t)
    }

    /// Forward transition `x_t | x_s` for `s ≤ t`.
    pub fn transition(&self, s: f64, t: f64) -> Result<MarginalStats> {
        Self::check_t(s)?;
        Self::check_t(t)?;
        if s > t {
            return Err(precondition(format!("s = {s} > t = {t}")));
        }
        Ok(self.transition_unchecked(s, t))
    }

    pub(crate) fn transition_unchecked(&self, s: f64, t: f64) -> MarginalStats {
        let b = self.integral_unchecked(s, t);
        match self.kind {
            ScheduleKind::Vp => MarginalStats {
                mean_coef: (-0.5 * b).exp(),
                std: (-(-b).exp_m1()).max(0.0).sqrt(),
            },
            ScheduleKind::Ve => MarginalStats {
                mean_coef: 1.0,
                std: b.max(0.0).sqrt(),
            },
        }
    }

    /// `mean_coef² / std²`; `+∞` at `t = 0`.
    pub fn snr(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let m = self.marginal_unchecked(t);
        if m.std == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(m.mean_coef * m.mean_coef / (m.std * m.std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite trapezoid on [a, b] with `panels` panels.
    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..panels {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    fn quadrature(sch: &NoiseSchedule, t0: f64, t1: f64) -> f64 {
        let f = |t: f64| sch.beta(t).unwrap();
        // the two-level family jumps at 1/2: integrate each smooth piece
        if sch.family == ScheduleFamily::TwoLevel && t0 < 0.5 && t1 > 0.5 {
            let left = |t: f64| if t < 0.5 { f(t) } else { sch.beta_min };
            trapezoid(left, t0, 0.5, 50_000) + trapezoid(f, 0.5, t1, 50_000)
        } else {
            trapezoid(f, t0, t1, 100_000)
        }
    }

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::vp(ScheduleFamily::Linear);
        assert!((s.beta(0.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.beta(1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((s.integral_beta(0.0, 1.0).unwrap() - 10.05).abs() < 1e-12);
        assert!(s.beta(1.5).is_err());
        assert!(s.beta(-0.1).is_err());
    }

    #[test]
    fn all_families_start_at_beta_min_and_share_integral() {
        for fam in ABLATION_FAMILIES {
            let s = NoiseSchedule::vp(fam);
            assert!((s.beta(0.0).unwrap() - 0.1).abs() < 1e-12, "{fam}");
            let q = quadrature(&s, 0.0, 1.0);
            assert!((q - 10.05).abs() < 1e-6, "{fam}: quadrature {q}");
            let closed = s.integral_beta(0.0, 1.0).unwrap();
            assert!((closed - 10.05).abs() < 1e-12, "{fam}: closed {closed}");
            assert!(s.beta(0.3).unwrap() > 0.0);
        }
    }

    #[test]
    fn closed_form_matches_quadrature_on_subintervals() {
        for fam in ABLATION_FAMILIES {
            let s = NoiseSchedule::vp(fam);
            for (a, b) in [(0.0, 0.25), (0.1, 0.7), (0.55, 1.0)] {
                let q = quadrature(&s, a, b);
                let c = s.integral_beta(a, b).unwrap();
                assert!((q - c).abs() < 1e-6, "{fam} [{a},{b}]: {q} vs {c}");
            }
        }
    }

    #[test]
    fn integral_additive_and_ordered() {
        for fam in ABLATION_FAMILIES {
            let s = NoiseSchedule::vp(fam);
            let ab = s.integral_beta(0.1, 0.4).unwrap();
            let bc = s.integral_beta(0.4, 0.9).unwrap();
            let ac = s.integral_beta(0.1, 0.9).unwrap();
            assert!((ab + bc - ac).abs() < 1e-12);
            assert!(ab >= 0.0);
            assert_eq!(s.integral_beta(0.3, 0.3).unwrap(), 0.0);
        }
        assert!(NoiseSchedule::default().integral_beta(0.5, 0.2).is_err());
    }

    #[test]
    fn marginal_values() {
        let s = NoiseSchedule::vp(ScheduleFamily::Linear);
        let m0 = s.marginal(0.0).unwrap();
        assert_eq!((m0.mean_coef, m0.std), (1.0, 0.0));
        let m1 = s.marginal(1.0).unwrap();
        assert!((m1.mean_coef - (-5.025f64).exp()).abs() < 1e-15);
        assert!((m1.mean_coef - 6.56e-3).abs() < 2e-5);
        for t in [0.01, 0.3, 0.77, 1.0] {
            let m = s.marginal(t).unwrap();
            assert!((m.std * m.std - (1.0 - m.mean_coef * m.mean_coef)).abs() < 1e-12);
        }
        let ve = NoiseSchedule::ve(ScheduleFamily::Constant);
        let m = ve.marginal(1.0).unwrap();
        assert_eq!(m.mean_coef, 1.0);
        assert!((m.std - (100.0f64 - 0.01).sqrt()).abs() < 1e-12);
        assert_eq!(ve.marginal(0.0).unwrap().std, 0.0);
    }

    #[test]
    fn snr_matched_endpoints_and_monotone() {
        for kind in [ScheduleKind::Vp, ScheduleKind::Ve] {
            let make = |f| match kind {
                ScheduleKind::Vp => NoiseSchedule::vp(f),
                ScheduleKind::Ve => NoiseSchedule::ve(f),
            };
            let reference = make(ScheduleFamily::Linear).snr(1.0).unwrap();
            for fam in ABLATION_FAMILIES {
                let s = make(fam);
                let end = s.snr(1.0).unwrap();
                assert!((end - reference).abs() <= 1e-6 * reference.abs().max(1.0), "{fam}");
                let mut prev = f64::INFINITY;
                let mut prev_std = 0.0;
                for i in 1..=1000 {
                    let t = i as f64 / 1000.0;
                    let v = s.snr(t).unwrap();
                    assert!(v < prev, "{kind:?} {fam}: snr not decreasing at {t}");
                    prev = v;
                    let sd = s.marginal(t).unwrap().std;
                    assert!(sd >= prev_std);
                    prev_std = sd;
                }
            }
        }
        assert_eq!(NoiseSchedule::ve(ScheduleFamily::Constant).snr(0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn vp_snr_definition() {
        let s = NoiseSchedule::vp(ScheduleFamily::Cosine);
        let m = s.marginal(0.4).unwrap().mean_coef;
        let expected = m * m / (1.0 - m * m);
        assert!((s.snr(0.4).unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn ve_diffusion_integrates_to_variance() {
        for fam in [ScheduleFamily::Constant, ScheduleFamily::Cosine] {
            let s = NoiseSchedule::ve(fam);
            let q = trapezoid(|t| s.diffusion_sq(t), 0.2, 0.8, 100_000);
            let c = s.integral_beta(0.2, 0.8).unwrap();
            assert!((q - c).abs() < 1e-6 * c, "{fam}: {q} vs {c}");
        }
    }

    #[test]
    fn family_names_round_trip() {
        for fam in ABLATION_FAMILIES {
            assert_eq!(fam.name().parse::<ScheduleFamily>().unwrap(), fam);
        }
        assert!("bogus".parse::<ScheduleFamily>().is_err());
    }
}
