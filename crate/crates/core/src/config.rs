//! Plain-text key=value configuration.
//!
//! A config file is a list of `key=value` lines (`#` comments and blank
//! lines ignored). Later assignments win, and command-line overrides are
//! appended after the file so they win over everything. Every resolver
//! rejects keys it does not know and reports errors that name the offending
//! key, so typos fail loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use crate::eval::{BenchmarkSpec, DatasetRef, PredictorSpec};
use crate::gmm::{CovarianceType, GmmGrid};
use crate::schedule::SigmaConvention;
use crate::tensor::ValueRange;
use crate::trajectory::TrajectoryMode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key \"{key}\"")]
    UnknownKey { key: String },
    #[error("missing required config key \"{key}\"")]
    MissingKey { key: String },
    #[error("config key \"{key}\": {message}")]
    BadValue { key: String, message: String },
}

/// An ordered bag of key=value assignments; lookups take the last one.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: Vec<(String, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut entries = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("expected key=value, got \"{line}\""),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(RawConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RawConfig::parse(&text)
    }

    /// Append one `key=value` override (a `--set` flag). Appending after the
    /// file contents is what makes overrides last-one-wins.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: 0,
                message: format!("override must be key=value, got \"{assignment}\""),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: 0,
                message: format!("override has an empty key: \"{assignment}\""),
            });
        }
        self.entries.push((key.to_string(), value.trim().to_string()));
        Ok(())
    }

    /// Last assignment for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Distinct keys in first-assignment order.
    pub fn keys(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for (k, _) in &self.entries {
            if !seen.contains(&k.as_str()) {
                seen.push(k.as_str());
            }
        }
        seen
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::MissingKey {
            key: key.to_string(),
        })
    }

    /// Reject any assigned key that is not in `allowed`.
    pub fn check_allowed(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for key in self.keys() {
            if !allowed.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn get_parsed<T: std::str::FromStr>(
        &self,
        key: &str,
        what: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                message: format!("\"{text}\" is not {what}"),
            }),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                message: format!("\"{other}\" is not true/false"),
            }),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parse `name=path[,name=path...]`; the first entry is the in-distribution
/// dataset, the rest are out-distribution.
pub fn parse_datasets(key: &str, text: &str) -> Result<(DatasetRef, Vec<DatasetRef>), ConfigError> {
    let mut refs = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(bad(key, "empty dataset entry"));
        }
        let Some((name, path)) = part.split_once('=') else {
            return Err(bad(key, format!("entry \"{part}\" must be name=path")));
        };
        refs.push(DatasetRef {
            name: name.trim().to_string(),
            root: PathBuf::from(path.trim()),
        });
    }
    if refs.len() < 2 {
        return Err(bad(
            key,
            "need at least two datasets: one in-distribution, one out-distribution",
        ));
    }
    let id = refs.remove(0);
    Ok((id, refs))
}

pub fn parse_predictor(key: &str, text: &str) -> Result<PredictorSpec, ConfigError> {
    if text == "zero" {
        return Ok(PredictorSpec::Zero);
    }
    let Some((scheme, path)) = text.split_once(':') else {
        return Err(bad(
            key,
            format!(
                "\"{text}\" is not a predictor; use zero, analytic:<file>, \
                 denoiser:<file>, or replay:<dir>"
            ),
        ));
    };
    if path.is_empty() {
        return Err(bad(key, format!("\"{text}\" is missing its path")));
    }
    let path = PathBuf::from(path);
    match scheme {
        "analytic" => Ok(PredictorSpec::Analytic { model: path }),
        "denoiser" => Ok(PredictorSpec::Denoiser { weights: path }),
        "replay" => Ok(PredictorSpec::Replay { dir: path }),
        other => Err(bad(key, format!("unknown predictor kind \"{other}\""))),
    }
}

/// Parse `K[,K...]:cov[,cov...]` where each K is an integer or `a-b` range.
pub fn parse_gmm_grid(key: &str, text: &str) -> Result<GmmGrid, ConfigError> {
    let Some((ks_text, covs_text)) = text.split_once(':') else {
        return Err(bad(
            key,
            format!("\"{text}\" must be <counts>:<covariances>, e.g. 1-10:full,diagonal"),
        ));
    };
    let mut ks = Vec::new();
    for item in ks_text.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once('-') {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| bad(key, format!("bad component count \"{item}\"")))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| bad(key, format!("bad component count \"{item}\"")))?;
            if a == 0 || b < a {
                return Err(bad(key, format!("bad component range \"{item}\"")));
            }
            ks.extend(a..=b);
        } else {
            let k: usize = item
                .parse()
                .map_err(|_| bad(key, format!("bad component count \"{item}\"")))?;
            if k == 0 {
                return Err(bad(key, "component counts must be positive"));
            }
            ks.push(k);
        }
    }
    let mut cov_types = Vec::new();
    for item in covs_text.split(',') {
        let item = item.trim();
        let cov = CovarianceType::parse(item)
            .ok_or_else(|| bad(key, format!("unknown covariance type \"{item}\"")))?;
        cov_types.push(cov);
    }
    if ks.is_empty() || cov_types.is_empty() {
        return Err(bad(key, "grid must list at least one K and one covariance"));
    }
    Ok(GmmGrid { ks, cov_types })
}

/// Every key `resolve_benchmark` accepts, i.e. everything the echo emits.
pub const BENCHMARK_KEYS: [&str; 18] = [
    "datasets",
    "predictor",
    "mode",
    "T",
    "T_prime",
    "beta_start",
    "beta_end",
    "convention",
    "use_error",
    "use_ssim",
    "ssim_window",
    "ssim_window_std",
    "gmm_grid",
    "holdout",
    "resize",
    "data_range",
    "seed",
    "threads",
];

/// Turn raw assignments into a full benchmark spec, defaulting every
/// unassigned optional key. The resulting spec's `echo()` re-parses to an
/// identical spec, which underpins byte-identical echo-file reruns.
pub fn resolve_benchmark(raw: &RawConfig) -> Result<BenchmarkSpec, ConfigError> {
    raw.check_allowed(&BENCHMARK_KEYS)?;
    let (id, ood) = parse_datasets("datasets", raw.require("datasets")?)?;
    let predictor = parse_predictor("predictor", raw.require("predictor")?)?;
    let mut spec = BenchmarkSpec::with_defaults(id, ood, predictor);

    if let Some(text) = raw.get("mode") {
        spec.mode = TrajectoryMode::parse(text).ok_or_else(|| {
            bad(
                "mode",
                format!("\"{text}\" is not ddim-inversion or stochastic-forward"),
            )
        })?;
    }
    if let Some(v) = raw.get_parsed::<usize>("T", "a positive integer")? {
        spec.t_count = v;
    }
    if let Some(v) = raw.get_parsed::<usize>("T_prime", "a non-negative integer")? {
        spec.step_count = v;
    }
    if let Some(v) = raw.get_parsed::<f64>("beta_start", "a number")? {
        spec.beta_start = v;
    }
    if let Some(v) = raw.get_parsed::<f64>("beta_end", "a number")? {
        spec.beta_end = v;
    }
    if let Some(text) = raw.get("convention") {
        spec.convention = SigmaConvention::parse(text).ok_or_else(|| {
            bad(
                "convention",
                format!("\"{text}\" is not variance-preserving or posterior-ratio"),
            )
        })?;
    }
    if let Some(v) = raw.get_bool("use_error")? {
        spec.score.use_error = v;
    }
    if let Some(v) = raw.get_bool("use_ssim")? {
        spec.score.use_ssim = v;
    }
    if let Some(v) = raw.get_parsed::<usize>("ssim_window", "a positive odd integer")? {
        spec.score.ssim_window = v;
    }
    if let Some(v) = raw.get_parsed::<f64>("ssim_window_std", "a positive number")? {
        spec.score.ssim_window_std = v;
    }
    if let Some(text) = raw.get("gmm_grid") {
        spec.gmm_grid = parse_gmm_grid("gmm_grid", text)?;
    }
    if let Some(v) = raw.get_parsed::<f64>("holdout", "a fraction in (0,1)")? {
        spec.holdout = v;
    }
    if let Some(v) = raw.get_parsed::<usize>("resize", "32 or 64")? {
        spec.resize = v;
    }
    if let Some(text) = raw.get("data_range") {
        spec.data_range = ValueRange::parse(text)
            .ok_or_else(|| bad("data_range", format!("\"{text}\" is not unit or signed")))?;
    }
    if let Some(v) = raw.get_parsed::<u64>("seed", "an unsigned integer")? {
        spec.seed = v;
    }
    if let Some(v) = raw.get_parsed::<usize>("threads", "a non-negative integer")? {
        spec.threads = v;
    }
    Ok(spec)
}
