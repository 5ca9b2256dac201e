//! Recording and replaying noise predictions.
//!
//! A `PredictionStore` captures every prediction made during trajectory
//! extraction as container files plus a manifest; a `ReplayPredictor` serves
//! them back, keyed by `(sample_id, timestep)`. Replayed tensors are bit
//! identical to what was recorded, so a pipeline re-run against a replay
//! predictor reproduces its trajectories exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::container;
use crate::predictor::{NoisePredictor, PredictorError};
use crate::tensor::Tensor;

const MANIFEST: &str = "manifest.tsv";

/// Writes predictions into a directory as `pred_<n>.dpv2` plus a manifest.
pub struct PredictionStore {
    dir: PathBuf,
    rows: Vec<(String, usize, String)>,
    seen: HashMap<(String, usize), ()>,
}

impl PredictionStore {
    pub fn create(dir: &Path) -> Result<Self, PredictorError> {
        std::fs::create_dir_all(dir).map_err(|source| PredictorError::Model {
            path: dir.to_path_buf(),
            message: format!("cannot create prediction store: {source}"),
        })?;
        Ok(PredictionStore {
            dir: dir.to_path_buf(),
            rows: Vec::new(),
            seen: HashMap::new(),
        })
    }

    pub fn record(
        &mut self,
        sample_id: &str,
        t: usize,
        prediction: &Tensor,
    ) -> Result<(), PredictorError> {
        let err = |message: String| PredictorError::Model {
            path: self.dir.clone(),
            message,
        };
        if sample_id.contains(['\t', '\n']) {
            return Err(err(format!(
                "sample id {sample_id:?} may not contain tabs or newlines"
            )));
        }
        let key = (sample_id.to_string(), t);
        if self.seen.insert(key, ()).is_some() {
            return Err(err(format!(
                "duplicate prediction for sample {sample_id} at t={t}"
            )));
        }
        let file = format!("pred_{:06}.dpv2", self.rows.len());
        container::write_tensor(
            &self.dir.join(&file),
            &prediction.shape().dims(),
            prediction.data(),
        )?;
        self.rows.push((sample_id.to_string(), t, file));
        Ok(())
    }

    /// Write the manifest. Call once after the last `record`.
    pub fn finish(self) -> Result<PathBuf, PredictorError> {
        let mut text = String::from("replay v1\n");
        for (id, t, file) in &self.rows {
            writeln!(text, "{id}\t{t}\t{file}").unwrap();
        }
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|source| PredictorError::Model {
            path: path.clone(),
            message: format!("cannot write manifest: {source}"),
        })?;
        Ok(path)
    }
}

/// Serves previously recorded predictions; any request the store does not
/// cover is an error rather than a silent fallback.
#[derive(Debug)]
pub struct ReplayPredictor {
    predictions: HashMap<(String, usize), Tensor>,
}

impl ReplayPredictor {
    pub fn load(dir: &Path) -> Result<Self, PredictorError> {
        let manifest = dir.join(MANIFEST);
        let err = |message: String| PredictorError::Model {
            path: manifest.clone(),
            message,
        };
        let text = std::fs::read_to_string(&manifest)
            .map_err(|source| err(format!("cannot read manifest: {source}")))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("replay v1") {
            return Err(err("expected header \"replay v1\"".into()));
        }
        let mut predictions = HashMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(t), Some(file)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err(format!(
                    "line {lineno}: expected sample_id<TAB>t<TAB>file"
                )));
            };
            if cols.next().is_some() {
                return Err(err(format!("line {lineno}: too many columns")));
            }
            let t: usize = t
                .parse()
                .map_err(|_| err(format!("line {lineno}: bad timestep \"{t}\"")))?;
            let tensor = container::read_tensor4(&dir.join(file))?;
            if predictions
                .insert((id.to_string(), t), tensor)
                .is_some()
            {
                return Err(err(format!(
                    "line {lineno}: duplicate prediction for sample {id} at t={t}"
                )));
            }
        }
        Ok(ReplayPredictor { predictions })
    }

    pub fn from_recordings(recordings: Vec<(String, usize, Tensor)>) -> Self {
        let predictions = recordings
            .into_iter()
            .map(|(id, t, tensor)| ((id, t), tensor))
            .collect();
        ReplayPredictor { predictions }
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

impl NoisePredictor for ReplayPredictor {
    fn predict(&self, sample_id: &str, x_t: &Tensor, t: usize) -> Result<Tensor, PredictorError> {
        let key = (sample_id.to_string(), t);
        let found = self
            .predictions
            .get(&key)
            .ok_or_else(|| PredictorError::MissingPrediction {
                sample_id: sample_id.to_string(),
                t,
            })?;
        if found.shape() != x_t.shape() {
            return Err(PredictorError::ShapeMismatch {
                expected: x_t.shape(),
                found: found.shape(),
            });
        }
        Ok(found.clone())
    }

    fn name(&self) -> &str {
        "replay"
    }

    fn train_tag(&self) -> &str {
        "recorded"
    }
}
