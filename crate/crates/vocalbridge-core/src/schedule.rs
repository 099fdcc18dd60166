//! Cosine noise schedules and the bridge scaling coefficients.
//!
//! The schedule stores the cumulative signal level `alpha_bar[t]` for
//! `t = 0..=T`, where `T` is the terminal step of the bridge. The bridge
//! coefficients `c_in` / `c_tgt` mix the protective perturbation into the
//! diffused latent and the prediction target; both are ratios in
//! `alpha_bar[t]` and `alpha_bar[T]` and are numerically sensitive near
//! `t = 0`, so everything here is kept in double precision.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math;

/// Default squared-cosine offset.
pub const DEFAULT_OFFSET: f64 = 0.008;
/// Default clamp on the implied per-step beta.
pub const DEFAULT_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleError {
    /// `num_steps` must be at least 1.
    ZeroSteps,
    /// `span` must be at least `num_steps`.
    SpanTooShort,
    /// Step index outside `1..=T`.
    StepOutOfRange { t: usize, num_steps: usize },
    /// `alpha_bar[T] = 1` makes the bridge coefficients divide by zero.
    DegenerateTerminal,
    /// Raw `alpha_bar` values violate the schedule invariants.
    InvalidAlphaBar,
    /// |c_in(t) - sqrt(1 - alpha_bar[t]) * c_tgt(t)| exceeded 1e-10 for some t.
    CoefficientIdentity { t: usize },
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroSteps => write!(f, "schedule needs at least one step"),
            Self::SpanTooShort => write!(f, "cosine span must be >= num_steps"),
            Self::StepOutOfRange { t, num_steps } => {
                write!(f, "step {t} outside 1..={num_steps}")
            }
            Self::DegenerateTerminal => {
                write!(f, "terminal alpha_bar equals 1; bridge coefficients undefined")
            }
            Self::InvalidAlphaBar => write!(f, "alpha_bar violates schedule invariants"),
            Self::CoefficientIdentity { t } => {
                write!(f, "bridge coefficient identity broke at step {t}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ScheduleError {}

/// Precomputed `alpha_bar` sequence for a diffusion bridge with terminal step `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Standard squared-cosine schedule over `num_steps` steps.
    ///
    /// `alpha_bar[t] = f(t)/f(0)` with `f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)`,
    /// `s = 0.008`, and the per-step beta clamped at 0.999. The terminal value
    /// lands near zero by construction, which suits plain diffusion; for a
    /// usable bridge terminal see [`NoiseSchedule::truncated_cosine`].
    pub fn cosine(num_steps: usize) -> Result<Self, ScheduleError> {
        Self::truncated_cosine(num_steps, num_steps, DEFAULT_OFFSET, DEFAULT_MAX_BETA)
    }

    /// Cosine schedule evaluated over the first `num_steps` steps of a
    /// notional `span`-step cosine.
    ///
    /// With `num_steps == span` this is the ordinary cosine schedule. With
    /// `num_steps < span` the terminal `alpha_bar[T]` stays well away from
    /// zero, which keeps the bridge coefficients `c_in`/`c_tgt` at a useful
    /// magnitude: a full cosine ends with `alpha_bar[T] ~ 0` and the bridge
    /// terms vanish with it.
    pub fn truncated_cosine(
        num_steps: usize,
        span: usize,
        offset: f64,
        max_beta: f64,
    ) -> Result<Self, ScheduleError> {
        if num_steps == 0 {
            return Err(ScheduleError::ZeroSteps);
        }
        if span < num_steps {
            return Err(ScheduleError::SpanTooShort);
        }
        let f = |t: f64| {
            let x = (t / span as f64 + offset) / (1.0 + offset) * (PI / 2.0);
            let c = math::cos(x);
            c * c
        };
        let f0 = f(0.0);
        let mut alpha_bar = Vec::with_capacity(num_steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=num_steps {
            let raw_ratio = f(t as f64) / f(t as f64 - 1.0);
            // Clamp the implied beta so alpha_bar never collapses to zero.
            let ratio = raw_ratio.clamp(1.0 - max_beta, 1.0);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * ratio);
        }
        // alpha_bar[0] is exactly f(0)/f(0) = 1 by construction; keep the
        // stored head consistent with the closed form for tiny offsets.
        debug_assert!(f0 > 0.0);
        Self::from_alpha_bar(alpha_bar)
    }

    /// Wraps a raw `alpha_bar` sequence (length `T + 1`), validating the
    /// schedule invariants and the bridge coefficient identity.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha_bar.len() < 2 {
            return Err(ScheduleError::ZeroSteps);
        }
        let head = alpha_bar[0];
        if !(head > 0.999 && head <= 1.0) {
            return Err(ScheduleError::InvalidAlphaBar);
        }
        for t in 1..alpha_bar.len() {
            let a = alpha_bar[t];
            if !(a > 0.0 && a < 1.0 && a.is_finite()) || a > alpha_bar[t - 1] {
                return Err(ScheduleError::InvalidAlphaBar);
            }
        }
        let schedule = Self { alpha_bar };
        schedule.check_coefficient_identity()?;
        Ok(schedule)
    }

    /// Terminal step `T`.
    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bar_slice(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().unwrap()
    }

    fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.num_steps() {
            Err(ScheduleError::StepOutOfRange { t, num_steps: self.num_steps() })
        } else {
            Ok(())
        }
    }

    fn check_terminal(&self) -> Result<(), ScheduleError> {
        if 1.0 - self.terminal_alpha_bar() == 0.0 {
            Err(ScheduleError::DegenerateTerminal)
        } else {
            Ok(())
        }
    }

    /// Perturbation mix-in coefficient for the bridged latent:
    /// `alpha_bar[T] * (1 - alpha_bar[t]) / (sqrt(alpha_bar[t]) * (1 - alpha_bar[T]))`.
    pub fn c_in(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check_step(t)?;
        self.check_terminal()?;
        let a_t = self.alpha_bar[t];
        let a_terminal = self.terminal_alpha_bar();
        Ok(a_terminal * (1.0 - a_t) / (math::sqrt(a_t) * (1.0 - a_terminal)))
    }

    /// Perturbation weight in the effective-noise target:
    /// `alpha_bar[T] * sqrt(1 - alpha_bar[t]) / ((1 - alpha_bar[T]) * sqrt(alpha_bar[t]))`.
    pub fn c_tgt(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check_step(t)?;
        self.check_terminal()?;
        let a_t = self.alpha_bar[t];
        let a_terminal = self.terminal_alpha_bar();
        Ok(a_terminal * math::sqrt(1.0 - a_t) / ((1.0 - a_terminal) * math::sqrt(a_t)))
    }

    /// The coefficient of the perturbation in the clean-latent reconstruction,
    /// `c_in(t) - sqrt(1 - alpha_bar[t]) * c_tgt(t)`. Algebraically zero; kept
    /// as an explicit evaluation so the cancellation is checked, not assumed.
    pub fn reconstruction_residual_coeff(&self, t: usize) -> Result<f64, ScheduleError> {
        let c_in = self.c_in(t)?;
        let c_tgt = self.c_tgt(t)?;
        Ok(c_in - math::sqrt(1.0 - self.alpha_bar[t]) * c_tgt)
    }

    fn check_coefficient_identity(&self) -> Result<(), ScheduleError> {
        for t in 1..=self.num_steps() {
            let coeff = self.reconstruction_residual_coeff(t)?;
            if coeff.abs() >= 1e-10 {
                return Err(ScheduleError::CoefficientIdentity { t });
            }
        }
        Ok(())
    }
}
