//! Per-sample denoising trajectories: paired predicted and true noise maps
//! over a reduced set of timesteps.
//!
//! Two extraction modes share one record layout and one downstream scorer:
//!
//! * `ddim_invert` — deterministic: the clean image is treated as the state
//!   at the first selected timestep and pushed forward in time with the DDIM
//!   update, querying the predictor at every visited timestep.
//! * `stochastic_forward` — for each selected timestep independently, draw
//!   noise with a seeded generator, form the noised state, and record the
//!   prediction against the drawn noise.
//!
//! Both are bit-reproducible (the stochastic mode given its seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::predictor::{NoisePredictor, PredictorError};
use crate::schedule::{forward_noise, true_noise, DiffusionSchedule, ScheduleError};
use crate::tensor::{ImageTensor, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMode {
    DdimInversion,
    StochasticForward,
}

impl TrajectoryMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddim-inversion" => Some(TrajectoryMode::DdimInversion),
            "stochastic-forward" => Some(TrajectoryMode::StochasticForward),
            _ => None,
        }
    }
}

impl std::fmt::Display for TrajectoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrajectoryMode::DdimInversion => "ddim-inversion",
            TrajectoryMode::StochasticForward => "stochastic-forward",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub mode: TrajectoryMode,
    /// Number of evaluation timesteps T'.
    pub step_count: usize,
    /// Noise seed; used by the stochastic mode only.
    pub seed: u64,
    /// Keep the intermediate states x_t alongside the noise pairs.
    pub keep_latents: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            mode: TrajectoryMode::DdimInversion,
            step_count: 10,
            seed: 0,
            keep_latents: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("step count {step_count} is outside 1..={t_count}")]
    BadStepCount { step_count: usize, t_count: usize },
    #[error("trajectory extraction works on one sample at a time, got a batch of {n}")]
    SingleSampleRequired { n: usize },
    #[error("config requests mode {found}, but this operation implements {expected}")]
    ModeMismatch {
        expected: TrajectoryMode,
        found: TrajectoryMode,
    },
    #[error("predictor returned shape {found} at t={t}, expected {expected}")]
    BadPredictionShape {
        t: usize,
        expected: Shape,
        found: Shape,
    },
    #[error("state became non-finite while stepping to t={t}")]
    NonFiniteState { t: usize },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// One sample's trajectory: for each selected timestep, the predicted noise
/// and the true noise implied by the state at that timestep.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub sample_id: String,
    /// Strictly increasing selected timesteps, length T'.
    pub timesteps: Vec<usize>,
    /// Predictor outputs, one per selected timestep.
    pub predicted: Vec<Tensor>,
    /// True noise per selected timestep. Under DDIM inversion the first
    /// entry is the zero tensor by definition: the state there is the clean
    /// image itself and carries no noise.
    pub truth: Vec<Tensor>,
    /// The states the predictor saw, one per selected timestep, if kept.
    pub latents: Option<Vec<Tensor>>,
}

impl TrajectoryRecord {
    pub fn step_count(&self) -> usize {
        self.timesteps.len()
    }

    pub fn sample_shape(&self) -> Shape {
        self.predicted[0].shape()
    }
}

/// Uniformly strided timesteps over [1, T], endpoints included:
/// `t_i = 1 + round(i * (T-1) / (T'-1))`. A single step selects t = 1.
pub fn select_timesteps(t_count: usize, step_count: usize) -> Result<Vec<usize>, TrajectoryError> {
    if step_count == 0 || step_count > t_count {
        return Err(TrajectoryError::BadStepCount {
            step_count,
            t_count,
        });
    }
    if step_count == 1 {
        return Ok(vec![1]);
    }
    let ts: Vec<usize> = (0..step_count)
        .map(|i| {
            let pos = i as f64 * (t_count - 1) as f64 / (step_count - 1) as f64;
            1 + pos.round() as usize
        })
        .collect();
    debug_assert!(ts.windows(2).all(|w| w[0] < w[1]), "stride must increase");
    debug_assert_eq!(*ts.last().unwrap(), t_count);
    Ok(ts)
}

fn check_single_sample(x0: &ImageTensor) -> Result<Shape, TrajectoryError> {
    let shape = x0.shape();
    if shape.n != 1 {
        return Err(TrajectoryError::SingleSampleRequired { n: shape.n });
    }
    Ok(shape)
}

fn checked_prediction(
    predictor: &dyn NoisePredictor,
    sample_id: &str,
    x: &Tensor,
    t: usize,
) -> Result<Tensor, TrajectoryError> {
    let pred = predictor.predict(sample_id, x, t)?;
    if pred.shape() != x.shape() {
        return Err(TrajectoryError::BadPredictionShape {
            t,
            expected: x.shape(),
            found: pred.shape(),
        });
    }
    Ok(pred)
}

/// Deterministic forward-in-time DDIM integration. The clean image is the
/// state at the first selected timestep; each consecutive pair (t_i, t_{i+1})
/// advances via
///
/// ```text
/// x_{t_{i+1}} = sqrt(alpha_bar_{t_{i+1}}) * (x_{t_i} - sigma_{t_i} eps_hat) / sqrt(alpha_bar_{t_i})
///             + sigma_{t_{i+1}} * eps_hat
/// ```
///
/// with `eps_hat = predictor(x_{t_i}, t_i)`.
pub fn ddim_invert(
    sample_id: &str,
    x0: &ImageTensor,
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    config: &TrajectoryConfig,
) -> Result<TrajectoryRecord, TrajectoryError> {
    if config.mode != TrajectoryMode::DdimInversion {
        return Err(TrajectoryError::ModeMismatch {
            expected: TrajectoryMode::DdimInversion,
            found: config.mode,
        });
    }
    let shape = check_single_sample(x0)?;
    let timesteps = select_timesteps(schedule.t_count(), config.step_count)?;

    let mut predicted = Vec::with_capacity(timesteps.len());
    let mut truth = Vec::with_capacity(timesteps.len());
    let mut latents = config.keep_latents.then(Vec::new);

    let mut x = x0.tensor().clone();
    for (i, &t) in timesteps.iter().enumerate() {
        if let Some(l) = latents.as_mut() {
            l.push(x.clone());
        }
        let eps_hat = checked_prediction(predictor, sample_id, &x, t)?;
        truth.push(if i == 0 {
            Tensor::zeros(shape)
        } else {
            true_noise(schedule, x0.tensor(), &x, t)?
        });

        if let Some(&t_next) = timesteps.get(i + 1) {
            let sab = schedule.sqrt_alpha_bar(t);
            let sigma = schedule.sigma(t);
            let sab_next = schedule.sqrt_alpha_bar(t_next);
            let sigma_next = schedule.sigma(t_next);
            let data: Vec<f32> = x
                .data()
                .iter()
                .zip(eps_hat.data())
                .map(|(&xv, &ev)| {
                    let x0_hat = (xv as f64 - sigma * ev as f64) / sab;
                    (sab_next * x0_hat + sigma_next * ev as f64) as f32
                })
                .collect();
            x = Tensor::new(shape, data)
                .map_err(|_| TrajectoryError::NonFiniteState { t: t_next })?;
        }
        predicted.push(eps_hat);
    }

    Ok(TrajectoryRecord {
        sample_id: sample_id.to_string(),
        timesteps,
        predicted,
        truth,
        latents,
    })
}

/// Independent forward noising at each selected timestep: draw eps from the
/// seeded generator, form x_t, and record the prediction against that eps.
pub fn stochastic_forward(
    sample_id: &str,
    x0: &ImageTensor,
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    config: &TrajectoryConfig,
) -> Result<TrajectoryRecord, TrajectoryError> {
    if config.mode != TrajectoryMode::StochasticForward {
        return Err(TrajectoryError::ModeMismatch {
            expected: TrajectoryMode::StochasticForward,
            found: config.mode,
        });
    }
    let shape = check_single_sample(x0)?;
    let timesteps = select_timesteps(schedule.t_count(), config.step_count)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let mut predicted = Vec::with_capacity(timesteps.len());
    let mut truth = Vec::with_capacity(timesteps.len());
    let mut latents = config.keep_latents.then(Vec::new);

    for &t in &timesteps {
        let eps_data: Vec<f32> = (0..shape.numel())
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                z as f32
            })
            .collect();
        let eps = Tensor::new(shape, eps_data).expect("finite noise draw");
        let x_t = forward_noise(schedule, x0.tensor(), t, &eps)?;
        let eps_hat = checked_prediction(predictor, sample_id, &x_t, t)?;
        if let Some(l) = latents.as_mut() {
            l.push(x_t);
        }
        predicted.push(eps_hat);
        truth.push(eps);
    }

    Ok(TrajectoryRecord {
        sample_id: sample_id.to_string(),
        timesteps,
        predicted,
        truth,
        latents,
    })
}

/// Summed squared prediction error per step: `sum_elements (predicted - truth)^2`
/// for each selected timestep, accumulated in f64.
pub fn step_squared_errors(rec: &TrajectoryRecord) -> Vec<f64> {
    rec.predicted
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
                .sum()
        })
        .collect()
}
