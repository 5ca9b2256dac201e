//! Benchmark orchestration: run the full pipeline over dataset pairs and
//! report AUROC separation.
//!
//! The flow per run: load and resize the in-distribution validation and test
//! splits plus every out-distribution test split, extract a trajectory and a
//! six-dimensional score per sample, fit a mixture density on the validation
//! scores, score everything by negative log-likelihood, and compute one AUROC
//! per (in, out) dataset pair. Out-distribution is the positive class and
//! higher anomaly score means more anomalous. Every random draw is keyed by
//! dataset name and sample index from the master seed, so adding a dataset
//! never perturbs another dataset's stream and reruns are bit-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{load_split, DatasetError, SplitData};
use crate::gmm::{grid_search, log_likelihood, GmmError, GmmGrid};
use crate::predictor::{
    AnalyticPredictor, DenoiserError, GaussianMixtureDataModel, NoisePredictor, PredictorError,
    ReplayPredictor, TinyDenoiser, ZeroPredictor,
};
use crate::schedule::{DiffusionSchedule, ScheduleError, SigmaConvention};
use crate::score::{compute_score, ScoreConfig, ScoreError};
use crate::splitmix64;
use crate::tensor::{TensorError, ValueRange};
use crate::trajectory::{
    ddim_invert, stochastic_forward, TrajectoryConfig, TrajectoryError, TrajectoryMode,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("score lists must be non-empty")]
    EmptyScores,
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("configuration error: {message}")]
    Config { message: String },
    #[error("report text: {message}")]
    BadReport { message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Area under the ROC curve by mid-rank Mann–Whitney statistic, with
/// out-distribution (`scores_ood`) as the positive class and higher score
/// meaning more anomalous.
///
/// The statistic is accumulated in integers (each tie contributes 1 to the
/// doubled count, each clean win contributes 2) and turned into a float by a
/// single division, so the result is exact: it equals the brute-force
/// pairwise count bit for bit and satisfies auroc(a,b) + auroc(b,a) == 1.0
/// without rounding slack.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64, EvalError> {
    if scores_id.is_empty() || scores_ood.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    for (index, v) in scores_id.iter().chain(scores_ood).enumerate() {
        if !v.is_finite() {
            return Err(EvalError::NonFiniteScore { index });
        }
    }
    // Merge and sort ascending; walk tie groups.
    let mut merged: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|&v| (v, false))
        .chain(scores_ood.iter().map(|&v| (v, true)))
        .collect();
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores are orderable"));

    let mut doubled_u: u64 = 0; // 2 * (wins + ties/2), integer-exact
    let mut id_below: u64 = 0;
    let mut i = 0;
    while i < merged.len() {
        let mut j = i;
        while j < merged.len() && merged[j].0 == merged[i].0 {
            j += 1;
        }
        let group = &merged[i..j];
        let group_ood = group.iter().filter(|(_, is_ood)| *is_ood).count() as u64;
        let group_id = group.len() as u64 - group_ood;
        doubled_u += group_ood * (2 * id_below + group_id);
        id_below += group_id;
        i = j;
    }
    let denom = 2 * scores_id.len() as u64 * scores_ood.len() as u64;
    Ok(doubled_u as f64 / denom as f64)
}

/// A named dataset root containing split subdirectories (`val/`, `test/`).
#[derive(Debug, Clone)]
pub struct DatasetRef {
    pub name: String,
    pub root: PathBuf,
}

/// How the benchmark obtains its noise predictor.
#[derive(Debug, Clone)]
pub enum PredictorSpec {
    Zero,
    /// Closed-form predictor backed by a mixture data-model file.
    Analytic { model: PathBuf },
    /// Trained convolutional denoiser weights file.
    Denoiser { weights: PathBuf },
    /// Directory of recorded predictions.
    Replay { dir: PathBuf },
}

impl std::fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictorSpec::Zero => f.write_str("zero"),
            PredictorSpec::Analytic { model } => {
                write!(f, "analytic:{}", model.to_string_lossy())
            }
            PredictorSpec::Denoiser { weights } => {
                write!(f, "denoiser:{}", weights.to_string_lossy())
            }
            PredictorSpec::Replay { dir } => write!(f, "replay:{}", dir.to_string_lossy()),
        }
    }
}

/// Fully resolved benchmark description. `echo()` renders it in the canonical
/// key=value form that the config parser accepts back.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    /// In-distribution dataset (uses `val/` and `test/` splits).
    pub id: DatasetRef,
    /// Out-distribution datasets (use their `test/` splits).
    pub ood: Vec<DatasetRef>,
    pub predictor: PredictorSpec,
    pub mode: TrajectoryMode,
    pub t_count: usize,
    pub step_count: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub convention: SigmaConvention,
    pub score: ScoreConfig,
    pub gmm_grid: GmmGrid,
    pub holdout: f64,
    pub resize: usize,
    pub data_range: ValueRange,
    pub seed: u64,
    /// Worker threads for per-sample scoring; 0 means auto.
    pub threads: usize,
}

impl BenchmarkSpec {
    /// A spec with the default pipeline settings for the given datasets and
    /// predictor: DDIM inversion, T = 1000 linear schedule, T' = 10, both
    /// score flags on, the default mixture grid, resize 32.
    pub fn with_defaults(id: DatasetRef, ood: Vec<DatasetRef>, predictor: PredictorSpec) -> Self {
        BenchmarkSpec {
            id,
            ood,
            predictor,
            mode: TrajectoryMode::DdimInversion,
            t_count: 1000,
            step_count: 10,
            beta_start: 1e-4,
            beta_end: 0.02,
            convention: SigmaConvention::VariancePreserving,
            score: ScoreConfig::default(),
            gmm_grid: GmmGrid::default(),
            holdout: 0.2,
            resize: 32,
            data_range: ValueRange::Unit,
            seed: 0,
            threads: 1,
        }
    }

    /// Canonical grid rendering: explicit component counts, then covariance
    /// kinds, e.g. `1,2,3:full,diagonal`.
    pub fn grid_text(&self) -> String {
        let ks = self
            .gmm_grid
            .ks
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let covs = self
            .gmm_grid
            .cov_types
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!("{ks}:{covs}")
    }

    /// Canonical key=value rendering. Parsing this text back and re-rendering
    /// reproduces it byte for byte, which is what makes echo-file reruns
    /// bit-reproducible.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let datasets = std::iter::once(&self.id)
            .chain(&self.ood)
            .map(|d| format!("{}={}", d.name, d.root.to_string_lossy()))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "datasets={datasets}").unwrap();
        writeln!(out, "predictor={}", self.predictor).unwrap();
        writeln!(out, "mode={}", self.mode).unwrap();
        writeln!(out, "T={}", self.t_count).unwrap();
        writeln!(out, "T_prime={}", self.step_count).unwrap();
        writeln!(out, "beta_start={}", self.beta_start).unwrap();
        writeln!(out, "beta_end={}", self.beta_end).unwrap();
        writeln!(out, "convention={}", self.convention).unwrap();
        writeln!(out, "use_error={}", self.score.use_error).unwrap();
        writeln!(out, "use_ssim={}", self.score.use_ssim).unwrap();
        writeln!(out, "ssim_window={}", self.score.ssim_window).unwrap();
        writeln!(out, "ssim_window_std={}", self.score.ssim_window_std).unwrap();
        writeln!(out, "gmm_grid={}", self.grid_text()).unwrap();
        writeln!(out, "holdout={}", self.holdout).unwrap();
        writeln!(out, "resize={}", self.resize).unwrap();
        writeln!(out, "data_range={}", self.data_range).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "threads={}", self.threads).unwrap();
        out
    }

    /// Check every invariant a run relies on, with messages that name the
    /// offending config key.
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |message: String| Err(EvalError::Config { message });
        if self.resize != 32 && self.resize != 64 {
            return bad(format!("resize={} is invalid: resize must be 32 or 64", self.resize));
        }
        if self.step_count < 1 || self.step_count > self.t_count {
            return bad(format!(
                "T_prime={} violates the trajectory invariant 1 <= T_prime <= T (T={})",
                self.step_count, self.t_count
            ));
        }
        if self.step_count < 2 {
            return bad(format!(
                "T_prime={} is too short: the score needs at least 2 trajectory steps",
                self.step_count
            ));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad(format!(
                "holdout={} must lie strictly between 0 and 1",
                self.holdout
            ));
        }
        if self.ood.is_empty() {
            return bad("datasets must list at least one out-distribution set".into());
        }
        let mut names = vec![self.id.name.as_str()];
        names.extend(self.ood.iter().map(|d| d.name.as_str()));
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return bad("datasets: dataset names must be non-empty".into());
            }
            if name.contains([',', '=', '/']) {
                return bad(format!(
                    "datasets: name \"{name}\" must not contain ',', '=' or '/'"
                ));
            }
            if names[..i].contains(name) {
                return bad(format!("datasets: duplicate dataset name \"{name}\""));
            }
        }
        if self.gmm_grid.ks.is_empty() || self.gmm_grid.cov_types.is_empty() {
            return bad("gmm_grid must list at least one K and one covariance type".into());
        }
        if self.gmm_grid.ks.contains(&0) {
            return bad("gmm_grid: component counts must be positive".into());
        }
        Ok(())
    }
}

/// One scored sample: its id, the six score components, and the anomaly
/// score (negative mixture log-likelihood).
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub sample_id: String,
    pub score: [f64; 6],
    pub anomaly: f64,
}

#[derive(Debug)]
pub struct BenchmarkResult {
    /// (out-distribution name, AUROC) in spec order.
    pub pairs: Vec<(String, f64)>,
    pub id_name: String,
    /// Per-split score tables, keyed by `<dataset>/<split>`.
    pub tables: BTreeMap<String, Vec<ScoreRow>>,
    /// Fitted density in its text form.
    pub gmm_text: String,
    /// Canonical config echo.
    pub config_echo: String,
    /// Wall-clock phase timings in seconds. Informational only; never part
    /// of the report text, which must be byte-identical across reruns.
    pub timings: Vec<(String, f64)>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the dataset name. Seeding by fixed name (not list position)
/// means adding or reordering datasets never changes another dataset's draws.
pub fn fnv1a64(name: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in name.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn load_predictor(
    spec: &BenchmarkSpec,
    schedule: &DiffusionSchedule,
) -> Result<Box<dyn NoisePredictor>, EvalError> {
    Ok(match &spec.predictor {
        PredictorSpec::Zero => Box::new(ZeroPredictor),
        PredictorSpec::Analytic { model } => {
            let model = GaussianMixtureDataModel::load_file(model)?;
            Box::new(AnalyticPredictor::new(model, schedule.clone()))
        }
        PredictorSpec::Denoiser { weights } => Box::new(TinyDenoiser::load_file(weights)?),
        PredictorSpec::Replay { dir } => Box::new(ReplayPredictor::load(dir)?),
    })
}

/// Score one split: resize every sample, run its trajectory, pool the score.
/// Per-sample seeds come from the split's seed name, so results depend only
/// on (master seed, seed name, sample index).
fn score_split(
    split: &SplitData,
    seed_name: &str,
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    spec: &BenchmarkSpec,
) -> Result<Vec<(String, [f64; 6])>, EvalError> {
    let split_seed = fnv1a64(seed_name) ^ spec.seed;
    let score_one = |index: usize| -> Result<(String, [f64; 6]), EvalError> {
        let image = split.images[index].resize_bilinear(spec.resize, spec.resize)?;
        let config = TrajectoryConfig {
            mode: spec.mode,
            step_count: spec.step_count,
            seed: splitmix64(split_seed ^ index as u64),
            keep_latents: false,
        };
        let sample_id = &split.ids[index];
        let record = match spec.mode {
            TrajectoryMode::DdimInversion => {
                ddim_invert(sample_id, &image, predictor, schedule, &config)?
            }
            TrajectoryMode::StochasticForward => {
                stochastic_forward(sample_id, &image, predictor, schedule, &config)?
            }
        };
        let score = compute_score(&image, &record, &spec.score)?;
        Ok((sample_id.clone(), score.as_array()))
    };

    if spec.threads == 1 {
        (0..split.len()).map(score_one).collect()
    } else {
        // Indexed map + ordered collect keeps aggregation deterministic for
        // any worker count.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| EvalError::Config {
                message: format!("threads={}: {e}", spec.threads),
            })?;
        pool.install(|| (0..split.len()).into_par_iter().map(score_one).collect())
    }
}

/// Run the full benchmark described by `spec`.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult, EvalError> {
    spec.validate()?;
    let started = Instant::now();
    let mut timings: Vec<(String, f64)> = Vec::new();

    let schedule = DiffusionSchedule::linear(
        spec.t_count,
        spec.beta_start,
        spec.beta_end,
        spec.convention,
    )?;
    let predictor = load_predictor(spec, &schedule)?;

    // Load all splits up front so shape inconsistencies fail before any
    // scoring work.
    let load_started = Instant::now();
    let id_val = load_split(&spec.id.root.join("val"), spec.data_range)?;
    let id_test = load_split(&spec.id.root.join("test"), spec.data_range)?;
    let ood_tests: Vec<SplitData> = spec
        .ood
        .iter()
        .map(|d| load_split(&d.root.join("test"), spec.data_range))
        .collect::<Result<_, _>>()?;
    timings.push(("load".into(), load_started.elapsed().as_secs_f64()));

    // After the square resize only the channel count can differ; reject
    // mixed-channel dataset collections before scoring.
    let channels = id_val.images[0].shape().c;
    let check_channels = |label: &str, split: &SplitData| -> Result<(), EvalError> {
        for (i, image) in split.images.iter().enumerate() {
            if image.shape().c != channels {
                return Err(EvalError::Config {
                    message: format!(
                        "datasets: {label} sample {i} has {} channels but {} has {channels}; \
                         shapes must agree after resize",
                        image.shape().c,
                        spec.id.name
                    ),
                });
            }
        }
        Ok(())
    };
    check_channels(&format!("{}/val", spec.id.name), &id_val)?;
    check_channels(&format!("{}/test", spec.id.name), &id_test)?;
    for (d, split) in spec.ood.iter().zip(&ood_tests) {
        check_channels(&format!("{}/test", d.name), split)?;
    }

    let mut tables: BTreeMap<String, Vec<ScoreRow>> = BTreeMap::new();
    let mut score_table = |label: String, split: &SplitData| -> Result<Vec<[f64; 6]>, EvalError> {
        let phase = Instant::now();
        let scored = score_split(split, &label, predictor.as_ref(), &schedule, spec)?;
        timings.push((format!("score:{label}"), phase.elapsed().as_secs_f64()));
        let scores: Vec<[f64; 6]> = scored.iter().map(|(_, s)| *s).collect();
        tables.insert(
            label,
            scored
                .into_iter()
                .map(|(sample_id, score)| ScoreRow {
                    sample_id,
                    score,
                    anomaly: f64::NAN, // filled in once the density is fitted
                })
                .collect(),
        );
        Ok(scores)
    };

    let val_scores = score_table(format!("{}/val", spec.id.name), &id_val)?;
    let test_scores = score_table(format!("{}/test", spec.id.name), &id_test)?;
    let mut ood_scores: Vec<(String, Vec<[f64; 6]>)> = Vec::new();
    for (d, split) in spec.ood.iter().zip(&ood_tests) {
        let label = format!("{}/test", d.name);
        let scores = score_table(label, split)?;
        ood_scores.push((d.name.clone(), scores));
    }

    // Fit the density on in-distribution validation scores.
    let fit_started = Instant::now();
    let features: Vec<Vec<f64>> = val_scores.iter().map(|s| s.to_vec()).collect();
    let gmm_seed = splitmix64(spec.seed ^ fnv1a64("gmm-fit"));
    let model = grid_search(&features, &spec.gmm_grid, spec.holdout, gmm_seed)?;
    timings.push(("fit".into(), fit_started.elapsed().as_secs_f64()));

    // Anomaly score: negative log-likelihood under the fitted density.
    let mut anomalies = |label: &str, scores: &[[f64; 6]]| -> Result<Vec<f64>, EvalError> {
        let values: Vec<f64> = scores
            .iter()
            .map(|s| log_likelihood(&model, s).map(|ll| -ll))
            .collect::<Result<_, _>>()?;
        let rows = tables.get_mut(label).expect("table was just inserted");
        for (row, &a) in rows.iter_mut().zip(&values) {
            row.anomaly = a;
        }
        Ok(values)
    };
    anomalies(&format!("{}/val", spec.id.name), &val_scores)?;
    let id_anomalies = anomalies(&format!("{}/test", spec.id.name), &test_scores)?;

    let mut pairs = Vec::new();
    for (name, scores) in &ood_scores {
        let ood_anomalies = anomalies(&format!("{name}/test"), scores)?;
        let value = auroc(&id_anomalies, &ood_anomalies)?;
        pairs.push((name.clone(), value));
    }
    timings.push(("total".into(), started.elapsed().as_secs_f64()));

    Ok(BenchmarkResult {
        pairs,
        id_name: spec.id.name.clone(),
        tables,
        gmm_text: model.to_text(),
        config_echo: spec.echo(),
        timings,
    })
}

/// Render the result as a deterministic delimited text table: a fixed header
/// documenting polarity, the config echo, then one tab-separated row per
/// (in, out) pair with AUROC at 4 decimal places. Timings are deliberately
/// omitted so identical configurations yield byte-identical reports.
pub fn emit_report(result: &BenchmarkResult) -> String {
    let mut out = String::new();
    out.push_str("# trajectory-statistic benchmark report\n");
    out.push_str(
        "# anomaly score: negative mixture log-likelihood; \
         out-distribution is the positive class\n",
    );
    out.push_str("[config]\n");
    out.push_str(&result.config_echo);
    out.push_str("[results]\n");
    out.push_str("id_dataset\tood_dataset\tauroc\n");
    for (name, value) in &result.pairs {
        writeln!(out, "{}\t{}\t{:.4}", result.id_name, name, value).unwrap();
    }
    out
}

/// Parse the pair rows back out of a report produced by [`emit_report`].
pub fn parse_report(text: &str) -> Result<Vec<(String, String, f64)>, EvalError> {
    let bad = |message: String| EvalError::BadReport { message };
    let mut rows = Vec::new();
    let mut in_results = false;
    for line in text.lines() {
        if line == "[results]" {
            in_results = true;
            continue;
        }
        if !in_results || line.starts_with('#') || line == "id_dataset\tood_dataset\tauroc" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields: \"{line}\"")));
        }
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad auroc value \"{}\"", fields[2])))?;
        rows.push((fields[0].to_string(), fields[1].to_string(), value));
    }
    if !in_results {
        return Err(bad("missing [results] section".into()));
    }
    Ok(rows)
}
