//! Six-dimensional trajectory statistics with optional structural weighting.
//!
//! A trajectory yields per-step maps E_t: either the squared prediction
//! error (predicted − truth)² or the raw predictions (ablation path). With a
//! per-pixel weight map W — `1 − SSIM(x_0, Σ_t ε̂)` or all ones — the score is
//!
//! ```text
//! s_p     = Σ_{c,h,w} ( Σ_t  E_t^p       ) · W      p ∈ {1,2,3}
//! s_{p+3} = Σ_{c,h,w} ( Σ_t Δ_t E_t^p    ) · W
//! ```
//!
//! where Δ_t is the unit-step backward difference along the trajectory index.
//! Weighting happens before the spatial sum; sums of powers carry no p-th
//! root. All accumulation is in f64 with a fixed order, so identical inputs
//! produce bit-identical scores.

use crate::ssim::{ssim_map, SsimError};
use crate::tensor::{ImageTensor, Shape, Tensor};
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("trajectory has {step_count} step(s); the difference terms need at least 2")]
    InsufficientTrajectory { step_count: usize },
    #[error("image shape {image} does not match trajectory sample shape {trajectory}")]
    ShapeMismatch { image: Shape, trajectory: Shape },
    #[error("weight map has {weights} values, expected {expected}")]
    WeightLengthMismatch { weights: usize, expected: usize },
    #[error("trajectory maps are empty")]
    EmptyTrajectory,
    #[error(transparent)]
    Ssim(#[from] SsimError),
}

/// Per-step squared-error maps, f64, shape (C, H, W) each.
#[derive(Debug, Clone)]
pub struct MseTrajectory {
    maps: Vec<Vec<f64>>,
    c: usize,
    h: usize,
    w: usize,
}

impl MseTrajectory {
    pub fn maps(&self) -> &[Vec<f64>] {
        &self.maps
    }

    pub fn channel_shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }
}

/// Elementwise (predicted − truth)² per timestep; no spatial reduction.
pub fn mse_trajectory(rec: &TrajectoryRecord) -> MseTrajectory {
    let shape = rec.sample_shape();
    let maps = rec
        .predicted
        .iter()
        .zip(&rec.truth)
        .map(|(p, t)| {
            p.data()
                .iter()
                .zip(t.data())
                .map(|(&pv, &tv)| {
                    let d = pv as f64 - tv as f64;
                    d * d
                })
                .collect()
        })
        .collect();
    MseTrajectory {
        maps,
        c: shape.c,
        h: shape.h,
        w: shape.w,
    }
}

#[derive(Debug, Clone)]
pub struct ScoreConfig {
    /// Use squared prediction errors as E_t; false uses the raw predictions.
    pub use_error: bool,
    /// Weight pixels by 1 − SSIM(x_0, Σ_t predicted); false uses unit weights.
    pub use_ssim: bool,
    pub ssim_window: usize,
    pub ssim_window_std: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            use_error: true,
            use_ssim: true,
            ssim_window: crate::ssim::DEFAULT_WINDOW,
            ssim_window_std: crate::ssim::DEFAULT_WINDOW_STD,
        }
    }
}

/// The six pooled trajectory statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score6D(pub [f64; 6]);

impl Score6D {
    pub fn as_array(&self) -> [f64; 6] {
        self.0
    }
}

/// Pool per-step maps into the six statistics under an optional weight map.
/// `maps` holds T' flattened (C,H,W) fields; `weights` must match their
/// length when given. Exposed so that weight-degeneracy can be probed
/// directly: a weight map of exact ones is bit-identical to no weights.
pub fn pooled_score(maps: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Score6D, ScoreError> {
    if maps.len() < 2 {
        return Err(ScoreError::InsufficientTrajectory {
            step_count: maps.len(),
        });
    }
    let per = maps[0].len();
    if per == 0 {
        return Err(ScoreError::EmptyTrajectory);
    }
    debug_assert!(maps.iter().all(|m| m.len() == per));
    if let Some(w) = weights {
        if w.len() != per {
            return Err(ScoreError::WeightLengthMismatch {
                weights: w.len(),
                expected: per,
            });
        }
    }

    let mut s = [0.0f64; 6];
    for i in 0..per {
        let weight = weights.map_or(1.0, |w| w[i]);
        let mut sums = [0.0f64; 3];
        let mut diffs = [0.0f64; 3];
        let mut prev = [0.0f64; 3];
        for (ti, map) in maps.iter().enumerate() {
            let e = map[i];
            let powers = [e, e * e, e * e * e];
            for p in 0..3 {
                sums[p] += powers[p];
                if ti > 0 {
                    diffs[p] += powers[p] - prev[p];
                }
            }
            prev = powers;
        }
        for p in 0..3 {
            s[p] += sums[p] * weight;
            s[p + 3] += diffs[p] * weight;
        }
    }
    Ok(Score6D(s))
}

/// Full scoring of one sample's trajectory against its clean image.
pub fn compute_score(
    x0: &ImageTensor,
    rec: &TrajectoryRecord,
    config: &ScoreConfig,
) -> Result<Score6D, ScoreError> {
    if rec.step_count() < 2 {
        return Err(ScoreError::InsufficientTrajectory {
            step_count: rec.step_count(),
        });
    }
    let shape = rec.sample_shape();
    if x0.shape() != shape {
        return Err(ScoreError::ShapeMismatch {
            image: x0.shape(),
            trajectory: shape,
        });
    }

    let maps: Vec<Vec<f64>> = if config.use_error {
        mse_trajectory(rec).maps
    } else {
        rec.predicted
            .iter()
            .map(|p| p.data().iter().map(|&v| v as f64).collect())
            .collect()
    };

    let weights: Option<Vec<f64>> = if config.use_ssim {
        let mut eps_sum = vec![0.0f64; shape.numel()];
        for p in &rec.predicted {
            for (acc, &v) in eps_sum.iter_mut().zip(p.data()) {
                *acc += v as f64;
            }
        }
        let eps_sum = Tensor::new(shape, eps_sum.iter().map(|&v| v as f32).collect())
            .expect("finite prediction sums");
        let map = ssim_map(
            x0.tensor(),
            &eps_sum,
            config.ssim_window,
            config.ssim_window_std,
        )?;
        Some(map.values().iter().map(|&v| 1.0 - v).collect())
    } else {
        None
    };

    pooled_score(&maps, weights.as_deref())
}
