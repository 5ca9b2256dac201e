//! Forward-noising schedule.
//!
//! Timesteps are 1-indexed: t runs over 1..=T. The cumulative signal fraction
//! is alpha_bar_t = prod_{s<=t} (1 - beta_s), with alpha_bar_0 defined as 1.
//! A clean sample is noised as
//!
//! ```text
//! x_t = sqrt(alpha_bar_t) * x_0 + sigma_t * eps
//! ```
//!
//! and the noise recovered from a known pair as
//! eps = (x_t - sqrt(alpha_bar_t) * x_0) / sigma_t.
//!
//! Two sigma conventions are supported. The default ties sigma to the noising
//! identity, sigma_t = sqrt(1 - alpha_bar_t), which preserves total variance
//! (alpha_bar_t + sigma_t^2 = 1). The alternative uses the one-step ratio
//! sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); note that under it
//! sigma_1 = 0, so noise recovery at t = 1 is degenerate.

use std::fmt;

use thiserror::Error;

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaConvention {
    VariancePreserving,
    PosteriorRatio,
}

impl SigmaConvention {
    pub fn parse(s: &str) -> Option<SigmaConvention> {
        match s {
            "variance-preserving" => Some(SigmaConvention::VariancePreserving),
            "posterior-ratio" => Some(SigmaConvention::PosteriorRatio),
            _ => None,
        }
    }
}

impl fmt::Display for SigmaConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaConvention::VariancePreserving => write!(f, "variance-preserving"),
            SigmaConvention::PosteriorRatio => write!(f, "posterior-ratio"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one timestep")]
    Empty,
    #[error("beta[{index}] = {value} outside the open interval (0, 1)")]
    BetaOutOfDomain { index: usize, value: f64 },
    #[error("timestep {t} outside 1..={t_count}")]
    TimestepOutOfRange { t: usize, t_count: usize },
    #[error("sigma_{t} = 0 under the {convention} convention, noise at t = {t} is undefined")]
    DegenerateTimestep {
        t: usize,
        convention: SigmaConvention,
    },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
}

#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    convention: SigmaConvention,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear beta ramp from `beta_start` at t = 1 to `beta_end` at t = T.
    pub fn linear(
        t_count: usize,
        beta_start: f64,
        beta_end: f64,
        convention: SigmaConvention,
    ) -> Result<Self, ScheduleError> {
        if t_count == 0 {
            return Err(ScheduleError::Empty);
        }
        let beta: Vec<f64> = (0..t_count)
            .map(|i| {
                if t_count == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta, convention)
    }

    pub fn from_betas(beta: Vec<f64>, convention: SigmaConvention) -> Result<Self, ScheduleError> {
        if beta.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for (index, &value) in beta.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(ScheduleError::BetaOutOfDomain { index, value });
            }
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0f64;
        for &b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        let sigma: Vec<f64> = match convention {
            SigmaConvention::VariancePreserving => {
                alpha_bar.iter().map(|&ab| (1.0 - ab).sqrt()).collect()
            }
            SigmaConvention::PosteriorRatio => (0..alpha_bar.len())
                .map(|i| {
                    let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                    ((1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
                })
                .collect(),
        };
        // beta in (0,1) makes the running product strictly decreasing inside
        // (0,1); debug-check rather than re-derive in release builds.
        debug_assert!(alpha_bar.windows(2).all(|w| w[1] < w[0]));
        debug_assert!(alpha_bar.iter().all(|&ab| ab > 0.0 && ab < 1.0));
        Ok(DiffusionSchedule {
            convention,
            beta,
            alpha_bar,
            sigma,
        })
    }

    pub fn t_count(&self) -> usize {
        self.beta.len()
    }

    pub fn convention(&self) -> SigmaConvention {
        self.convention
    }

    pub fn check_t(&self, t: usize) -> Result<(), ScheduleError> {
        if t < 1 || t > self.t_count() {
            return Err(ScheduleError::TimestepOutOfRange {
                t,
                t_count: self.t_count(),
            });
        }
        Ok(())
    }

    /// alpha_bar_t for t in 0..=T, with alpha_bar_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.t_count(), "timestep {t} out of range");
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// sigma_t for t in 1..=T.
    pub fn sigma(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_count(), "timestep {t} out of range");
        self.sigma[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_count(), "timestep {t} out of range");
        self.beta[t - 1]
    }
}

fn check_same_shape(left: &Tensor, right: &Tensor) -> Result<(), ScheduleError> {
    if left.shape() != right.shape() {
        return Err(ScheduleError::ShapeMismatch {
            left: left.shape(),
            right: right.shape(),
        });
    }
    Ok(())
}

/// x_t = sqrt(alpha_bar_t) * x_0 + sigma_t * eps, evaluated in f64 per
/// element and stored as f32.
pub fn forward_noise(
    schedule: &DiffusionSchedule,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor, ScheduleError> {
    schedule.check_t(t)?;
    check_same_shape(x0, eps)?;
    let sab = schedule.sqrt_alpha_bar(t);
    let sigma = schedule.sigma(t);
    let data: Vec<f32> = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (sab * x as f64 + sigma * e as f64) as f32)
        .collect();
    Ok(Tensor::new(x0.shape(), data).expect("finite inputs keep the map finite"))
}

/// eps = (x_t - sqrt(alpha_bar_t) * x_0) / sigma_t.
pub fn true_noise(
    schedule: &DiffusionSchedule,
    x0: &Tensor,
    xt: &Tensor,
    t: usize,
) -> Result<Tensor, ScheduleError> {
    schedule.check_t(t)?;
    check_same_shape(x0, xt)?;
    let sigma = schedule.sigma(t);
    if sigma == 0.0 {
        return Err(ScheduleError::DegenerateTimestep {
            t,
            convention: schedule.convention(),
        });
    }
    let sab = schedule.sqrt_alpha_bar(t);
    let data: Vec<f32> = x0
        .data()
        .iter()
        .zip(xt.data())
        .map(|(&x, &v)| ((v as f64 - sab * x as f64) / sigma) as f32)
        .collect();
    Ok(Tensor::new(x0.shape(), data).expect("finite inputs and sigma > 0 keep the map finite"))
}
