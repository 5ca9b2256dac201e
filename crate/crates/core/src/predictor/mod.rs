//! Pluggable noise predictors.
//!
//! A predictor estimates the noise content of a latent `x_t` at timestep `t`.
//! Four implementations ship here: a closed-form oracle for Gaussian-mixture
//! data ([`AnalyticPredictor`]), a small trainable convolutional net
//! ([`TinyDenoiser`]), a file-backed replay of precomputed predictions
//! ([`ReplayPredictor`]), and trivial baselines ([`ZeroPredictor`],
//! [`SampleOracle`]).

mod analytic;
mod denoiser;
mod replay;

pub use analytic::{AnalyticPredictor, DataComponent, GaussianMixtureDataModel};
pub use denoiser::{evaluate_loss, train_denoiser, DenoiserError, TinyDenoiser, TrainConfig, TrainReport};
pub use replay::{PredictionStore, ReplayPredictor};

use std::path::PathBuf;

use thiserror::Error;

use crate::schedule::ScheduleError;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("input shape {found} does not match the predictor's {expected}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("no stored prediction for sample \"{sample_id}\" at timestep {t}")]
    MissingPrediction { sample_id: String, t: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("{path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
    #[error("prediction is non-finite at flat index {index} (sample \"{sample_id}\", t = {t})")]
    NonFinite {
        sample_id: String,
        t: usize,
        index: usize,
    },
}

/// Noise estimate for a latent at a given timestep.
///
/// `sample_id` identifies the sample a trajectory belongs to; file-backed
/// predictors key their lookup on it, model-backed predictors ignore it.
/// Implementations must return a tensor of the input's shape.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, sample_id: &str, x_t: &Tensor, t: usize) -> Result<Tensor, PredictorError>;

    /// Short name for reports and logs.
    fn name(&self) -> &str;

    /// Tag describing the data distribution the predictor was built for.
    fn train_tag(&self) -> &str;
}

/// Predicts zero noise everywhere. The reference point for "no information":
/// against eps ~ N(0,1) its expected squared error per step is the element
/// count of the sample.
#[derive(Debug, Clone, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, _sample_id: &str, x_t: &Tensor, _t: usize) -> Result<Tensor, PredictorError> {
        Ok(Tensor::zeros(x_t.shape()))
    }

    fn name(&self) -> &str {
        "zero"
    }

    fn train_tag(&self) -> &str {
        "none"
    }
}

/// Oracle that knows the clean sample and returns its exact noise residual,
/// eps = (x_t - sqrt(alpha_bar_t) * x_0) / sigma_t.
///
/// This is the predictor for which deterministic trajectory extraction is
/// exactly self-consistent: the implied clean-image estimate at every step is
/// x_0 itself, so recorded predictions coincide with recorded truths. Used to
/// validate integrators.
#[derive(Debug, Clone)]
pub struct SampleOracle {
    x0: Tensor,
    schedule: crate::schedule::DiffusionSchedule,
}

impl SampleOracle {
    pub fn new(x0: Tensor, schedule: crate::schedule::DiffusionSchedule) -> Self {
        SampleOracle { x0, schedule }
    }
}

impl NoisePredictor for SampleOracle {
    fn predict(&self, _sample_id: &str, x_t: &Tensor, t: usize) -> Result<Tensor, PredictorError> {
        if x_t.shape() != self.x0.shape() {
            return Err(PredictorError::ShapeMismatch {
                expected: self.x0.shape(),
                found: x_t.shape(),
            });
        }
        Ok(crate::schedule::true_noise(&self.schedule, &self.x0, x_t, t)?)
    }

    fn name(&self) -> &str {
        "sample-oracle"
    }

    fn train_tag(&self) -> &str {
        "single-sample"
    }
}
