//! Gaussian mixture density fitting over score vectors.
//!
//! Features are z-scored with fit-set statistics before EM (the six score
//! components span wildly different magnitudes), seeded k-means++ picks the
//! initial means, and every M-step adds a 1e-6 diagonal floor so covariances
//! stay positive definite. The fit-set mean log-likelihood must never
//! decrease across iterations (within 1e-9); a violation aborts the fit.
//! Anomaly scoring uses the negative log-likelihood of a held-out vector.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::splitmix64;

const WEIGHT_FLOOR: f64 = 1e-8;
const COVARIANCE_FLOOR: f64 = 1e-6;
const STD_FLOOR: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-9;
/// Minimum samples per mixture component required to attempt a fit.
const SAMPLES_PER_COMPONENT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceType {
    Full,
    Diagonal,
}

impl CovarianceType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(CovarianceType::Full),
            "diagonal" => Some(CovarianceType::Diagonal),
            _ => None,
        }
    }
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceType::Full => "full",
            CovarianceType::Diagonal => "diagonal",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GmmError {
    #[error("{n} feature vectors cannot support {k} components (need at least {needed})")]
    TooFewSamples { n: usize, k: usize, needed: usize },
    #[error("feature set is empty or inconsistently sized: {message}")]
    BadFeatureSet { message: String },
    #[error("component {component} collapsed (weight below {WEIGHT_FLOOR:e})")]
    ComponentCollapse { component: usize },
    #[error("numerical failure during EM: {message}")]
    Numerical { message: String },
    #[error("feature has non-finite values")]
    NonFiniteFeature,
    #[error("feature has {found} dimensions, model expects {expected}")]
    BadDimension { expected: usize, found: usize },
    #[error("grid search has no candidates")]
    EmptyGrid,
    #[error("holdout fraction {fraction} must lie strictly between 0 and 1")]
    BadHoldout { fraction: f64 },
    #[error("every grid candidate failed to fit; last error: {last}")]
    GridExhaustion { last: String },
    #[error("model text line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Covariance {
    /// Row-major d x d symmetric matrix.
    Full(Vec<f64>),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Covariance,
}

/// A fitted mixture, including the feature standardization that produced it.
#[derive(Debug, Clone)]
pub struct GmmModel {
    cov_type: CovarianceType,
    dim: usize,
    std_mean: Vec<f64>,
    std_scale: Vec<f64>,
    components: Vec<Component>,
    final_ll: f64,
    iterations: usize,
    ll_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.cov_type
    }

    /// Mean log-likelihood on the fit set at convergence.
    pub fn final_log_likelihood(&self) -> f64 {
        self.final_ll
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Mean log-likelihood after each EM iteration (not serialized).
    pub fn ll_trace(&self) -> &[f64] {
        &self.ll_trace
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Component means in standardized space.
    pub fn means_standardized(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Component means mapped back to the original feature space.
    pub fn means_raw(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                c.mean
                    .iter()
                    .zip(self.std_mean.iter().zip(&self.std_scale))
                    .map(|(&m, (&mu, &s))| mu + s * m)
                    .collect()
            })
            .collect()
    }

    /// Per-dimension (mean, std) used for z-scoring.
    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.std_mean, &self.std_scale)
    }

    /// Covariance of component k as a dense row-major d x d matrix.
    pub fn covariance_dense(&self, k: usize) -> Vec<f64> {
        match &self.components[k].cov {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(v) => {
                let d = self.dim;
                let mut out = vec![0.0; d * d];
                for (i, &var) in v.iter().enumerate() {
                    out[i * d + i] = var;
                }
                out
            }
        }
    }
}

fn check_features(features: &[Vec<f64>]) -> Result<usize, GmmError> {
    let Some(first) = features.first() else {
        return Err(GmmError::BadFeatureSet {
            message: "no feature vectors".into(),
        });
    };
    let dim = first.len();
    if dim == 0 {
        return Err(GmmError::BadFeatureSet {
            message: "zero-dimensional features".into(),
        });
    }
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(GmmError::BadFeatureSet {
                message: format!("vector {i} has {} dims, expected {dim}", f.len()),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::BadFeatureSet {
                message: format!("vector {i} has non-finite values"),
            });
        }
    }
    Ok(dim)
}

/// Population z-scoring statistics with a floor on the scale.
fn standardization_stats(features: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((acc, &v), &m) in var.iter_mut().zip(f).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| (v / n).sqrt().max(STD_FLOOR))
        .collect();
    (mean, scale)
}

fn standardize_with(features: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            f.iter()
                .zip(mean.iter().zip(scale))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Seeded k-means++ center selection on standardized features.
fn kmeans_pp_centers(z: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let n = z.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(z[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = z.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(z[next].clone());
        let last = centers.last().unwrap();
        for (di, p) in d2.iter_mut().zip(z) {
            *di = di.min(sq_dist(p, last));
        }
    }
    centers
}

/// Lower-triangular Cholesky factor of a row-major symmetric matrix.
fn cholesky(d: usize, a: &[f64]) -> Result<Vec<f64>, GmmError> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for p in 0..j {
                sum -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(GmmError::Numerical {
                        message: format!("covariance not positive definite at pivot {i}"),
                    });
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Per-component quantities precomputed for density evaluation.
enum DensityOps {
    Full { chol: Vec<f64>, log_det: f64 },
    Diagonal { inv_var: Vec<f64>, log_det: f64 },
}

impl DensityOps {
    fn prepare(dim: usize, cov: &Covariance) -> Result<Self, GmmError> {
        match cov {
            Covariance::Full(m) => {
                let chol = cholesky(dim, m)?;
                let log_det = 2.0 * (0..dim).map(|i| chol[i * dim + i].ln()).sum::<f64>();
                Ok(DensityOps::Full { chol, log_det })
            }
            Covariance::Diagonal(v) => {
                let mut log_det = 0.0;
                let mut inv = Vec::with_capacity(dim);
                for &var in v {
                    if var <= 0.0 {
                        return Err(GmmError::Numerical {
                            message: "non-positive diagonal variance".into(),
                        });
                    }
                    log_det += var.ln();
                    inv.push(1.0 / var);
                }
                Ok(DensityOps::Diagonal {
                    inv_var: inv,
                    log_det,
                })
            }
        }
    }

    /// log N(z; mean, cov) without the weight term.
    fn log_density(&self, dim: usize, mean: &[f64], z: &[f64]) -> f64 {
        const LOG_2PI: f64 = 1.8378770664093453; // ln(2*pi)
        let (quad, log_det) = match self {
            DensityOps::Full { chol, log_det } => {
                // Forward-substitute L y = (z - mean); quad = ||y||^2.
                let mut y = vec![0.0; dim];
                for i in 0..dim {
                    let mut sum = z[i] - mean[i];
                    for p in 0..i {
                        sum -= chol[i * dim + p] * y[p];
                    }
                    y[i] = sum / chol[i * dim + i];
                }
                (y.iter().map(|v| v * v).sum::<f64>(), *log_det)
            }
            DensityOps::Diagonal { inv_var, log_det } => {
                let quad = z
                    .iter()
                    .zip(mean.iter().zip(inv_var))
                    .map(|(&zv, (&m, &iv))| {
                        let d = zv - m;
                        d * d * iv
                    })
                    .sum::<f64>();
                (quad, *log_det)
            }
        };
        -0.5 * (dim as f64 * LOG_2PI + log_det + quad)
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Mutable EM state over standardized features.
struct EmState {
    dim: usize,
    cov_type: CovarianceType,
    components: Vec<Component>,
}

impl EmState {
    fn init(z: &[Vec<f64>], k: usize, cov_type: CovarianceType, seed: u64) -> EmState {
        let dim = z[0].len();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let centers = kmeans_pp_centers(z, k, &mut rng);
        // Shared initial covariance: overall data scatter plus the floor.
        let n = z.len() as f64;
        let mut grand = vec![0.0; dim];
        for p in z {
            for (g, &v) in grand.iter_mut().zip(p) {
                *g += v;
            }
        }
        for g in &mut grand {
            *g /= n;
        }
        let init_cov = match cov_type {
            CovarianceType::Full => {
                let mut m = vec![0.0; dim * dim];
                for p in z {
                    for i in 0..dim {
                        for j in 0..dim {
                            m[i * dim + j] += (p[i] - grand[i]) * (p[j] - grand[j]);
                        }
                    }
                }
                for v in &mut m {
                    *v /= n;
                }
                for i in 0..dim {
                    m[i * dim + i] += COVARIANCE_FLOOR;
                }
                Covariance::Full(m)
            }
            CovarianceType::Diagonal => {
                let mut v = vec![0.0; dim];
                for p in z {
                    for (acc, (&pv, &g)) in v.iter_mut().zip(p.iter().zip(&grand)) {
                        let d = pv - g;
                        *acc += d * d;
                    }
                }
                Covariance::Diagonal(v.into_iter().map(|x| x / n + COVARIANCE_FLOOR).collect())
            }
        };
        let components = centers
            .into_iter()
            .map(|mean| Component {
                weight: 1.0 / k as f64,
                mean,
                cov: init_cov.clone(),
            })
            .collect();
        EmState {
            dim,
            cov_type,
            components,
        }
    }

    /// One E+M sweep. Returns the mean log-likelihood at the *incoming*
    /// parameters (computed during the E-step).
    fn em_step(&mut self, z: &[Vec<f64>]) -> Result<f64, GmmError> {
        let n = z.len();
        let k = self.components.len();
        let dim = self.dim;

        let ops: Vec<DensityOps> = self
            .components
            .iter()
            .map(|c| DensityOps::prepare(dim, &c.cov))
            .collect::<Result<_, _>>()?;

        // E-step: responsibilities via log-sum-exp.
        let mut resp = vec![0.0f64; n * k];
        let mut ll_sum = 0.0;
        let mut logs = vec![0.0f64; k];
        for (i, p) in z.iter().enumerate() {
            for (j, (c, op)) in self.components.iter().zip(&ops).enumerate() {
                logs[j] = c.weight.ln() + op.log_density(dim, &c.mean, p);
            }
            let lse = log_sum_exp(&logs);
            ll_sum += lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }

        // M-step.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            let weight = nk / n as f64;
            if weight < WEIGHT_FLOOR {
                return Err(GmmError::ComponentCollapse { component: j });
            }
            let mut mean = vec![0.0; dim];
            for (i, p) in z.iter().enumerate() {
                let r = resp[i * k + j];
                for (m, &v) in mean.iter_mut().zip(p) {
                    *m += r * v;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let cov = match self.cov_type {
                CovarianceType::Full => {
                    let mut m = vec![0.0; dim * dim];
                    for (i, p) in z.iter().enumerate() {
                        let r = resp[i * k + j];
                        for a in 0..dim {
                            let da = p[a] - mean[a];
                            for b in 0..dim {
                                m[a * dim + b] += r * da * (p[b] - mean[b]);
                            }
                        }
                    }
                    for v in &mut m {
                        *v /= nk;
                    }
                    for a in 0..dim {
                        m[a * dim + a] += COVARIANCE_FLOOR;
                    }
                    Covariance::Full(m)
                }
                CovarianceType::Diagonal => {
                    let mut v = vec![0.0; dim];
                    for (i, p) in z.iter().enumerate() {
                        let r = resp[i * k + j];
                        for (acc, (&pv, &mv)) in v.iter_mut().zip(p.iter().zip(&mean)) {
                            let d = pv - mv;
                            *acc += r * d * d;
                        }
                    }
                    Covariance::Diagonal(
                        v.into_iter().map(|x| x / nk + COVARIANCE_FLOOR).collect(),
                    )
                }
            };
            self.components[j] = Component {
                weight,
                mean,
                cov,
            };
        }
        Ok(ll_sum / n as f64)
    }
}

/// Fit a K-component mixture on raw feature vectors with seeded EM.
pub fn fit_em(
    features: &[Vec<f64>],
    k: usize,
    cov_type: CovarianceType,
    seed: u64,
    config: &EmConfig,
) -> Result<GmmModel, GmmError> {
    let dim = check_features(features)?;
    if k == 0 {
        return Err(GmmError::BadFeatureSet {
            message: "component count must be positive".into(),
        });
    }
    let needed = k * SAMPLES_PER_COMPONENT;
    if features.len() < needed {
        return Err(GmmError::TooFewSamples {
            n: features.len(),
            k,
            needed,
        });
    }

    let (std_mean, std_scale) = standardization_stats(features, dim);
    let z = standardize_with(features, &std_mean, &std_scale);

    let mut state = EmState::init(&z, k, cov_type, seed);
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = config.max_iter;
    for iter in 0..config.max_iter {
        let ll = state.em_step(&z)?;
        if let Some(&prev) = trace.last() {
            if ll < prev - MONOTONE_SLACK {
                return Err(GmmError::Numerical {
                    message: format!(
                        "log-likelihood decreased from {prev} to {ll} at iteration {iter}"
                    ),
                });
            }
            if (ll - prev).abs() < config.tol {
                trace.push(ll);
                iterations = iter + 1;
                break;
            }
        }
        trace.push(ll);
    }
    let final_ll = *trace.last().expect("at least one EM iteration");

    Ok(GmmModel {
        cov_type,
        dim,
        std_mean,
        std_scale,
        components: state.components,
        final_ll,
        iterations,
        ll_trace: trace,
    })
}

/// log p(feature) under the fitted mixture (in standardized space).
pub fn log_likelihood(model: &GmmModel, feature: &[f64]) -> Result<f64, GmmError> {
    if feature.len() != model.dim {
        return Err(GmmError::BadDimension {
            expected: model.dim,
            found: feature.len(),
        });
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::NonFiniteFeature);
    }
    let z: Vec<f64> = feature
        .iter()
        .zip(model.std_mean.iter().zip(&model.std_scale))
        .map(|(&v, (&m, &s))| (v - m) / s)
        .collect();
    let logs: Vec<f64> = model
        .components
        .iter()
        .map(|c| {
            let op = DensityOps::prepare(model.dim, &c.cov)?;
            Ok(c.weight.ln() + op.log_density(model.dim, &c.mean, &z))
        })
        .collect::<Result<_, GmmError>>()?;
    Ok(log_sum_exp(&logs))
}

#[derive(Debug, Clone)]
pub struct GmmGrid {
    pub ks: Vec<usize>,
    pub cov_types: Vec<CovarianceType>,
}

impl Default for GmmGrid {
    fn default() -> Self {
        GmmGrid {
            ks: (1..=10).collect(),
            cov_types: vec![CovarianceType::Full, CovarianceType::Diagonal],
        }
    }
}

/// Fit every grid candidate on a seeded fit/holdout split and return the one
/// with the best held-out mean log-likelihood. Ties prefer smaller K, then
/// diagonal covariance. Candidates that fail to fit are skipped; if all fail
/// the search reports exhaustion.
pub fn grid_search(
    features: &[Vec<f64>],
    grid: &GmmGrid,
    holdout_fraction: f64,
    seed: u64,
) -> Result<GmmModel, GmmError> {
    check_features(features)?;
    if grid.ks.is_empty() || grid.cov_types.is_empty() {
        return Err(GmmError::EmptyGrid);
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(GmmError::BadHoldout {
            fraction: holdout_fraction,
        });
    }
    let n = features.len();
    let holdout_n = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix64(seed ^ 0x686f_6c64_6f75_74));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let (holdout_idx, fit_idx) = order.split_at(holdout_n);
    let fit_set: Vec<Vec<f64>> = fit_idx.iter().map(|&i| features[i].clone()).collect();
    let holdout_set: Vec<Vec<f64>> = holdout_idx.iter().map(|&i| features[i].clone()).collect();

    let mut best: Option<(f64, usize, CovarianceType, GmmModel)> = None;
    let mut last_err = String::from("grid was empty");
    for &k in &grid.ks {
        for &cov_type in &grid.cov_types {
            // The candidate seed depends only on (seed, k, cov_type): grid
            // order and duplicates cannot perturb any candidate's fit.
            let cov_bit = match cov_type {
                CovarianceType::Full => 1u64,
                CovarianceType::Diagonal => 2u64,
            };
            let cand_seed = splitmix64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cov_bit);
            let model = match fit_em(&fit_set, k, cov_type, cand_seed, &EmConfig::default()) {
                Ok(m) => m,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            };
            let mut sum = 0.0;
            let mut ok = true;
            for f in &holdout_set {
                match log_likelihood(&model, f) {
                    Ok(ll) => sum += ll,
                    Err(e) => {
                        last_err = e.to_string();
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let score = sum / holdout_set.len() as f64;
            let better = match &best {
                None => true,
                Some((best_score, best_k, best_cov, _)) => {
                    score > *best_score
                        || (score == *best_score
                            && (k < *best_k
                                || (k == *best_k
                                    && cov_type == CovarianceType::Diagonal
                                    && *best_cov == CovarianceType::Full)))
                }
            };
            if better {
                best = Some((score, k, cov_type, model));
            }
        }
    }
    match best {
        Some((_, _, _, model)) => Ok(model),
        None => Err(GmmError::GridExhaustion { last: last_err }),
    }
}

impl GmmModel {
    /// Plain-text serialization with 17 significant digits, so a reload
    /// reproduces every parameter bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "gmm v1").unwrap();
        writeln!(out, "dim {}", self.dim).unwrap();
        writeln!(out, "covariance {}", self.cov_type).unwrap();
        let fmt_row = |values: &[f64]| -> String {
            values
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "standardize_mean {}", fmt_row(&self.std_mean)).unwrap();
        writeln!(out, "standardize_std {}", fmt_row(&self.std_scale)).unwrap();
        writeln!(out, "final_ll {:.16e}", self.final_ll).unwrap();
        writeln!(out, "iterations {}", self.iterations).unwrap();
        writeln!(out, "components {}", self.k()).unwrap();
        for c in &self.components {
            writeln!(out, "weight {:.16e}", c.weight).unwrap();
            writeln!(out, "mean {}", fmt_row(&c.mean)).unwrap();
            match &c.cov {
                Covariance::Full(m) => writeln!(out, "cov_full {}", fmt_row(m)).unwrap(),
                Covariance::Diagonal(v) => writeln!(out, "cov_diag {}", fmt_row(v)).unwrap(),
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<GmmModel, GmmError> {
        let mut lines = text.lines().enumerate();
        let mut next_line = |expect: &str| -> Result<(usize, String), GmmError> {
            for (i, line) in lines.by_ref() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                return Ok((i + 1, line.to_string()));
            }
            Err(GmmError::Parse {
                line: 0,
                message: format!("missing {expect} line"),
            })
        };
        let parse_row = |lineno: usize, line: &str, key: &str| -> Result<Vec<f64>, GmmError> {
            let rest = line.strip_prefix(key).ok_or(GmmError::Parse {
                line: lineno,
                message: format!("expected \"{key} ...\", got \"{line}\""),
            })?;
            rest.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| GmmError::Parse {
                        line: lineno,
                        message: format!("bad number \"{t}\""),
                    })
                })
                .collect()
        };

        let (lineno, header) = next_line("header")?;
        if header != "gmm v1" {
            return Err(GmmError::Parse {
                line: lineno,
                message: format!("expected \"gmm v1\", got \"{header}\""),
            });
        }
        let (lineno, dim_line) = next_line("dim")?;
        let dim: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or(GmmError::Parse {
                line: lineno,
                message: format!("bad dim line \"{dim_line}\""),
            })?;
        let (lineno, cov_line) = next_line("covariance")?;
        let cov_type = cov_line
            .strip_prefix("covariance ")
            .and_then(|s| CovarianceType::parse(s.trim()))
            .ok_or(GmmError::Parse {
                line: lineno,
                message: format!("bad covariance line \"{cov_line}\""),
            })?;
        let (lineno, line) = next_line("standardize_mean")?;
        let std_mean = parse_row(lineno, &line, "standardize_mean ")?;
        let (lineno, line) = next_line("standardize_std")?;
        let std_scale = parse_row(lineno, &line, "standardize_std ")?;
        let (lineno, line) = next_line("final_ll")?;
        let final_ll = parse_row(lineno, &line, "final_ll ")?
            .first()
            .copied()
            .ok_or(GmmError::Parse {
                line: lineno,
                message: "empty final_ll".into(),
            })?;
        let (lineno, line) = next_line("iterations")?;
        let iterations: usize = line
            .strip_prefix("iterations ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or(GmmError::Parse {
                line: lineno,
                message: format!("bad iterations line \"{line}\""),
            })?;
        let (lineno, line) = next_line("components")?;
        let k: usize = line
            .strip_prefix("components ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or(GmmError::Parse {
                line: lineno,
                message: format!("bad components line \"{line}\""),
            })?;

        if std_mean.len() != dim || std_scale.len() != dim {
            return Err(GmmError::Parse {
                line: lineno,
                message: "standardization size does not match dim".into(),
            });
        }

        let mut components = Vec::with_capacity(k);
        for _ in 0..k {
            let (lineno, line) = next_line("weight")?;
            let weight = parse_row(lineno, &line, "weight ")?
                .first()
                .copied()
                .ok_or(GmmError::Parse {
                    line: lineno,
                    message: "empty weight".into(),
                })?;
            let (lineno, line) = next_line("mean")?;
            let mean = parse_row(lineno, &line, "mean ")?;
            if mean.len() != dim {
                return Err(GmmError::Parse {
                    line: lineno,
                    message: format!("mean has {} values, expected {dim}", mean.len()),
                });
            }
            let (lineno, line) = next_line("covariance row")?;
            let cov = if line.starts_with("cov_full ") {
                let m = parse_row(lineno, &line, "cov_full ")?;
                if m.len() != dim * dim {
                    return Err(GmmError::Parse {
                        line: lineno,
                        message: format!("cov_full has {} values, expected {}", m.len(), dim * dim),
                    });
                }
                Covariance::Full(m)
            } else if line.starts_with("cov_diag ") {
                let v = parse_row(lineno, &line, "cov_diag ")?;
                if v.len() != dim {
                    return Err(GmmError::Parse {
                        line: lineno,
                        message: format!("cov_diag has {} values, expected {dim}", v.len()),
                    });
                }
                Covariance::Diagonal(v)
            } else {
                return Err(GmmError::Parse {
                    line: lineno,
                    message: format!("expected cov_full/cov_diag, got \"{line}\""),
                });
            };
            components.push(Component { weight, mean, cov });
        }

        Ok(GmmModel {
            cov_type,
            dim,
            std_mean,
            std_scale,
            components,
            final_ll,
            iterations,
            ll_trace: Vec::new(),
        })
    }
}
