//! Closed-form noise predictions for Gaussian-mixture data.
//!
//! If clean data follows `x_0 ~ sum_k w_k N(mu_k, s_k^2 I)` and is noised as
//! `x_t = sqrt(alpha_bar_t) x_0 + sigma_t eps`, each component pushes forward
//! to `N(sqrt(alpha_bar_t) mu_k, v_k I)` with `v_k = alpha_bar_t s_k^2 +
//! sigma_t^2`. The marginal score has the closed form
//!
//! ```text
//! grad log p_t(x) = -sum_k r_k(x) (x - sqrt(alpha_bar_t) mu_k) / v_k
//! ```
//!
//! with `r_k` the component responsibilities at `x`, and the predictor
//! returns `-sigma_t * grad log p_t(x)`. For a single standard-normal
//! component this collapses to `sigma_t * x`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::container;
use crate::predictor::{NoisePredictor, PredictorError};
use crate::schedule::DiffusionSchedule;
use crate::tensor::{ImageTensor, Shape, Tensor, ValueRange};

/// One mixture component: isotropic Gaussian with a per-element mean image.
#[derive(Debug, Clone)]
pub struct DataComponent {
    pub weight: f64,
    pub std: f64,
    /// Flattened C*H*W mean.
    pub mean: Vec<f64>,
}

impl DataComponent {
    /// Component with a constant mean image.
    pub fn constant(weight: f64, std: f64, level: f64, per_sample: usize) -> Self {
        DataComponent {
            weight,
            std,
            mean: vec![level; per_sample],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixtureDataModel {
    c: usize,
    h: usize,
    w: usize,
    components: Vec<DataComponent>,
}

impl GaussianMixtureDataModel {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        components: Vec<DataComponent>,
    ) -> Result<Self, PredictorError> {
        let model_err = |message: String| PredictorError::Model {
            path: "<in-memory>".into(),
            message,
        };
        if c == 0 || h == 0 || w == 0 {
            return Err(model_err(format!("zero-sized sample shape {c}x{h}x{w}")));
        }
        if components.is_empty() {
            return Err(model_err("mixture needs at least one component".into()));
        }
        let per = c * h * w;
        let mut weight_sum = 0.0;
        for (k, comp) in components.iter().enumerate() {
            if !(comp.weight > 0.0 && comp.weight.is_finite()) {
                return Err(model_err(format!(
                    "component {k} weight {} must be positive",
                    comp.weight
                )));
            }
            if !(comp.std > 0.0 && comp.std.is_finite()) {
                return Err(model_err(format!(
                    "component {k} std {} must be positive",
                    comp.std
                )));
            }
            if comp.mean.len() != per {
                return Err(model_err(format!(
                    "component {k} mean has {} elements, sample shape {c}x{h}x{w} needs {per}",
                    comp.mean.len()
                )));
            }
            if comp.mean.iter().any(|m| !m.is_finite()) {
                return Err(model_err(format!("component {k} mean has non-finite elements")));
            }
            weight_sum += comp.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(model_err(format!(
                "component weights sum to {weight_sum}, expected 1"
            )));
        }
        // Renormalize so responsibilities are exact regardless of rounding in
        // the declared weights.
        let mut components = components;
        for comp in &mut components {
            comp.weight /= weight_sum;
        }
        Ok(GaussianMixtureDataModel { c, h, w, components })
    }

    pub fn sample_shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn per_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn components(&self) -> &[DataComponent] {
        &self.components
    }

    /// Same mixture with every mean shifted by `shift_in_stds` component
    /// standard deviations. The out-of-distribution construction used by the
    /// desk-scale benchmarks.
    pub fn shifted(&self, shift_in_stds: f64) -> GaussianMixtureDataModel {
        let components = self
            .components
            .iter()
            .map(|comp| DataComponent {
                weight: comp.weight,
                std: comp.std,
                mean: comp
                    .mean
                    .iter()
                    .map(|m| m + shift_in_stds * comp.std)
                    .collect(),
            })
            .collect();
        GaussianMixtureDataModel {
            c: self.c,
            h: self.h,
            w: self.w,
            components,
        }
    }

    /// log p_t of one flattened sample at timestep t (t >= 1).
    pub fn log_marginal(&self, schedule: &DiffusionSchedule, t: usize, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.per_sample(), "sample length mismatch");
        let logs = self.component_log_joints(schedule, t, x);
        log_sum_exp(&logs)
    }

    /// log(w_k N_k(x)) for every component.
    fn component_log_joints(&self, schedule: &DiffusionSchedule, t: usize, x: &[f64]) -> Vec<f64> {
        let ab = schedule.alpha_bar(t);
        let sab = ab.sqrt();
        let sigma = schedule.sigma(t);
        let d = self.per_sample() as f64;
        self.components
            .iter()
            .map(|comp| {
                let v = ab * comp.std * comp.std + sigma * sigma;
                let mut quad = 0.0;
                for (xj, mj) in x.iter().zip(&comp.mean) {
                    let diff = xj - sab * mj;
                    quad += diff * diff;
                }
                comp.weight.ln() - 0.5 * (quad / v + d * (2.0 * std::f64::consts::PI * v).ln())
            })
            .collect()
    }

    /// -sigma_t * grad log p_t for one flattened sample.
    fn predict_sample(&self, schedule: &DiffusionSchedule, t: usize, x: &[f64]) -> Vec<f64> {
        let ab = schedule.alpha_bar(t);
        let sab = ab.sqrt();
        let sigma = schedule.sigma(t);
        let logs = self.component_log_joints(schedule, t, x);
        let lse = log_sum_exp(&logs);
        let resp: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();

        let mut out = vec![0.0f64; x.len()];
        for (comp, r) in self.components.iter().zip(&resp) {
            let v = ab * comp.std * comp.std + sigma * sigma;
            let scale = sigma * r / v;
            for ((o, xj), mj) in out.iter_mut().zip(x).zip(&comp.mean) {
                *o += scale * (xj - sab * mj);
            }
        }
        out
    }

    /// Draw `n` raw samples (unbounded).
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Tensor {
        let per = self.per_sample();
        let mut data = Vec::with_capacity(n * per);
        for _ in 0..n {
            let k = self.pick_component(rng);
            let comp = &self.components[k];
            for mj in &comp.mean {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                data.push((mj + comp.std * z) as f32);
            }
        }
        Tensor::new(Shape::new(n, self.c, self.h, self.w), data)
            .expect("finite parameters yield finite samples")
    }

    /// Draw `n` samples clamped into `range`. Intended for dataset synthesis;
    /// pick means and stds that keep essentially all mass inside the range so
    /// the clamp is a guard, not a distortion.
    pub fn sample_images<R: Rng>(&self, n: usize, range: ValueRange, rng: &mut R) -> ImageTensor {
        let raw = self.sample(n, rng);
        let (lo, hi) = range.bounds();
        let data: Vec<f32> = raw.data().iter().map(|v| v.clamp(lo, hi)).collect();
        ImageTensor::new(raw.shape(), data, range).expect("clamped data is in range")
    }

    fn pick_component<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, comp) in self.components.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                return k;
            }
        }
        self.components.len() - 1
    }

    /// Plain-text model description. Constant means inline; non-constant
    /// means go to `<stem>.mean<k>.dpv2` sidecar files next to the model.
    pub fn save_file(&self, path: &Path) -> Result<(), PredictorError> {
        let mut text = String::new();
        writeln!(text, "gmm-data v1").unwrap();
        writeln!(text, "shape {} {} {}", self.c, self.h, self.w).unwrap();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        for (k, comp) in self.components.iter().enumerate() {
            let first = comp.mean[0];
            if comp.mean.iter().all(|&m| m == first) {
                writeln!(
                    text,
                    "component {:.17e} {:.17e} const:{:.17e}",
                    comp.weight, comp.std, first
                )
                .unwrap();
            } else {
                let rel = format!("{stem}.mean{k}.dpv2");
                let mean_f32: Vec<f32> = comp.mean.iter().map(|&m| m as f32).collect();
                container::write_tensor(
                    &path.with_file_name(&rel),
                    &[self.c, self.h, self.w],
                    &mean_f32,
                )?;
                writeln!(
                    text,
                    "component {:.17e} {:.17e} file:{rel}",
                    comp.weight, comp.std
                )
                .unwrap();
            }
        }
        std::fs::write(path, text).map_err(|source| PredictorError::Model {
            path: path.to_path_buf(),
            message: format!("write failed: {source}"),
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, PredictorError> {
        let err = |message: String| PredictorError::Model {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path)
            .map_err(|source| err(format!("read failed: {source}")))?;
        let mut lines = text.lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or_else(|| err("empty model file".into()))?;
        if header.trim() != "gmm-data v1" {
            return Err(err(format!(
                "line 1: expected header \"gmm-data v1\", got \"{}\"",
                header.trim()
            )));
        }

        let mut shape: Option<(usize, usize, usize)> = None;
        let mut components = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("shape") => {
                    let dims: Vec<usize> = tokens
                        .map(|t| {
                            t.parse::<usize>().map_err(|_| {
                                err(format!("line {lineno}: bad shape dimension \"{t}\""))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    if dims.len() != 3 {
                        return Err(err(format!(
                            "line {lineno}: shape needs 3 dims, got {}",
                            dims.len()
                        )));
                    }
                    shape = Some((dims[0], dims[1], dims[2]));
                }
                Some("component") => {
                    let (c, h, w) = shape.ok_or_else(|| {
                        err(format!("line {lineno}: component before shape line"))
                    })?;
                    let per = c * h * w;
                    let weight = parse_f64(tokens.next(), lineno, "weight", path)?;
                    let std = parse_f64(tokens.next(), lineno, "std", path)?;
                    let mean_spec = tokens.next().ok_or_else(|| {
                        err(format!("line {lineno}: component is missing its mean spec"))
                    })?;
                    let mean = if let Some(value) = mean_spec.strip_prefix("const:") {
                        let level = value.parse::<f64>().map_err(|_| {
                            err(format!("line {lineno}: bad const mean \"{value}\""))
                        })?;
                        vec![level; per]
                    } else if let Some(rel) = mean_spec.strip_prefix("file:") {
                        let mean_path = path.with_file_name(rel);
                        let (dims, data) = container::read_tensor(&mean_path)?;
                        if dims != [c, h, w] {
                            return Err(err(format!(
                                "line {lineno}: mean tensor {rel} has dims {dims:?}, expected [{c}, {h}, {w}]"
                            )));
                        }
                        data.into_iter().map(|v| v as f64).collect()
                    } else {
                        return Err(err(format!(
                            "line {lineno}: mean spec \"{mean_spec}\" must start with const: or file:"
                        )));
                    };
                    components.push(DataComponent { weight, std, mean });
                }
                Some(other) => {
                    return Err(err(format!("line {lineno}: unknown directive \"{other}\"")));
                }
                None => {}
            }
        }
        let (c, h, w) =
            shape.ok_or_else(|| err("model file has no shape line".into()))?;
        let model = GaussianMixtureDataModel::new(c, h, w, components).map_err(|e| match e {
            PredictorError::Model { message, .. } => err(message),
            other => other,
        })?;
        Ok(model)
    }
}

fn parse_f64(
    token: Option<&str>,
    lineno: usize,
    what: &str,
    path: &Path,
) -> Result<f64, PredictorError> {
    let token = token.ok_or_else(|| PredictorError::Model {
        path: path.to_path_buf(),
        message: format!("line {lineno}: component is missing its {what}"),
    })?;
    token.parse::<f64>().map_err(|_| PredictorError::Model {
        path: path.to_path_buf(),
        message: format!("line {lineno}: bad {what} \"{token}\""),
    })
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Exact marginal-score predictor for a known Gaussian-mixture data model.
#[derive(Debug, Clone)]
pub struct AnalyticPredictor {
    model: GaussianMixtureDataModel,
    schedule: DiffusionSchedule,
    tag: String,
}

impl AnalyticPredictor {
    pub fn new(model: GaussianMixtureDataModel, schedule: DiffusionSchedule) -> Self {
        let tag = format!("gaussian-mixture(k={})", model.components().len());
        AnalyticPredictor {
            model,
            schedule,
            tag,
        }
    }

    pub fn model(&self) -> &GaussianMixtureDataModel {
        &self.model
    }
}

impl NoisePredictor for AnalyticPredictor {
    fn predict(&self, _sample_id: &str, x_t: &Tensor, t: usize) -> Result<Tensor, PredictorError> {
        self.schedule.check_t(t)?;
        let shape = x_t.shape();
        let (c, h, w) = self.model.sample_shape();
        if (shape.c, shape.h, shape.w) != (c, h, w) {
            return Err(PredictorError::ShapeMismatch {
                expected: Shape::new(shape.n, c, h, w),
                found: shape,
            });
        }
        let per = self.model.per_sample();
        let mut out = Vec::with_capacity(shape.numel());
        for s in 0..shape.n {
            let x: Vec<f64> = x_t.data()[s * per..(s + 1) * per]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let pred = self.model.predict_sample(&self.schedule, t, &x);
            out.extend(pred.into_iter().map(|v| v as f32));
        }
        Ok(Tensor::new(shape, out).expect("finite model yields finite predictions"))
    }

    fn name(&self) -> &str {
        "analytic"
    }

    fn train_tag(&self) -> &str {
        &self.tag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::SigmaConvention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::linear(1000, 1e-4, 0.02, SigmaConvention::VariancePreserving).unwrap()
    }

    fn standard_normal_model(c: usize, h: usize, w: usize) -> GaussianMixtureDataModel {
        GaussianMixtureDataModel::new(
            c,
            h,
            w,
            vec![DataComponent::constant(1.0, 1.0, 0.0, c * h * w)],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_prediction_is_sigma_times_x() {
        let s = schedule();
        let model = standard_normal_model(1, 2, 2);
        let p = AnalyticPredictor::new(model, s.clone());
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.5, -1.2, 2.0, 0.0]).unwrap();
        for t in [1usize, 250, 777, 1000] {
            let got = p.predict("s", &x, t).unwrap();
            let sigma = s.sigma(t);
            for (g, xv) in got.data().iter().zip(x.data()) {
                let want = sigma * *xv as f64;
                assert!(
                    (*g as f64 - want).abs() <= 1e-6 * want.abs().max(1.0),
                    "t={t}"
                );
            }
        }
    }

    #[test]
    fn single_component_closed_form() {
        let s = schedule();
        let (mu, sd) = (0.3f64, 0.5f64);
        let model =
            GaussianMixtureDataModel::new(1, 1, 2, vec![DataComponent::constant(1.0, sd, mu, 2)])
                .unwrap();
        let p = AnalyticPredictor::new(model, s.clone());
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.9, -0.1]).unwrap();
        let t = 400;
        let got = p.predict("s", &x, t).unwrap();
        let ab = s.alpha_bar(t);
        let v = ab * sd * sd + s.sigma(t) * s.sigma(t);
        for (g, xv) in got.data().iter().zip(x.data()) {
            let want = s.sigma(t) * (*xv as f64 - ab.sqrt() * mu) / v;
            assert!((*g as f64 - want).abs() < 1e-7);
        }
    }

    /// Central finite differences of the model's own log marginal. The fully
    /// independent density oracle lives in the acceptance suite; this check
    /// pins predict() to log_marginal() so the two cannot drift apart.
    #[test]
    fn prediction_matches_log_marginal_gradient() {
        let s = schedule();
        let per = 4;
        let model = GaussianMixtureDataModel::new(
            1,
            2,
            2,
            vec![
                DataComponent::constant(0.3, 0.4, -0.5, per),
                DataComponent::constant(0.7, 0.8, 0.6, per),
            ],
        )
        .unwrap();
        let p = AnalyticPredictor::new(model.clone(), s.clone());
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let h = 1e-4;
        for t in [1usize, 120, 990] {
            for _ in 0..20 {
                let xv: Vec<f64> = (0..per).map(|_| rng.random_range(-2.0..2.0)).collect();
                let x = Tensor::new(
                    Shape::new(1, 1, 2, 2),
                    xv.iter().map(|&v| v as f32).collect(),
                )
                .unwrap();
                // Use the f32-rounded probe so both routes see the same point.
                let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
                let got = p.predict("s", &x, t).unwrap();
                let sigma = s.sigma(t);
                let mut max_rel: f64 = 0.0;
                for j in 0..per {
                    let mut plus = xv.clone();
                    plus[j] += h;
                    let mut minus = xv.clone();
                    minus[j] -= h;
                    let grad = (model.log_marginal(&s, t, &plus)
                        - model.log_marginal(&s, t, &minus))
                        / (2.0 * h);
                    let want = -sigma * grad;
                    let rel = (got.data()[j] as f64 - want).abs() / want.abs().max(1e-3);
                    max_rel = max_rel.max(rel);
                }
                assert!(max_rel <= 1e-4, "t={t}: rel {max_rel}");
            }
        }
    }

    #[test]
    fn model_validation_rejects_bad_parameters() {
        let bad_weight = GaussianMixtureDataModel::new(
            1,
            1,
            1,
            vec![DataComponent::constant(0.0, 1.0, 0.0, 1)],
        );
        assert!(bad_weight.is_err());
        let bad_sum = GaussianMixtureDataModel::new(
            1,
            1,
            1,
            vec![
                DataComponent::constant(0.5, 1.0, 0.0, 1),
                DataComponent::constant(0.4, 1.0, 0.0, 1),
            ],
        );
        assert!(bad_sum.is_err());
        let bad_std =
            GaussianMixtureDataModel::new(1, 1, 1, vec![DataComponent::constant(1.0, 0.0, 0.0, 1)]);
        assert!(bad_std.is_err());
        let bad_len =
            GaussianMixtureDataModel::new(1, 2, 2, vec![DataComponent::constant(1.0, 1.0, 0.0, 3)]);
        assert!(bad_len.is_err());
    }

    #[test]
    fn sampling_moments_match_model() {
        let model = GaussianMixtureDataModel::new(
            1,
            1,
            1,
            vec![
                DataComponent::constant(0.25, 0.1, -0.4, 1),
                DataComponent::constant(0.75, 0.2, 0.4, 1),
            ],
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let t = model.sample(200_000, &mut rng);
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.data().len() as f64;
        let want_mean = 0.25 * -0.4 + 0.75 * 0.4;
        assert!((mean - want_mean).abs() < 5e-3, "{mean} vs {want_mean}");
        let var = t
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / t.data().len() as f64;
        let want_var = 0.25 * (0.01 + 0.16) + 0.75 * (0.04 + 0.16) - want_mean * want_mean;
        assert!((var - want_var).abs() < 5e-3, "{var} vs {want_var}");
    }

    #[test]
    fn shifted_model_moves_means_by_stds() {
        let model = GaussianMixtureDataModel::new(
            1,
            1,
            2,
            vec![DataComponent::constant(1.0, 0.05, 0.2, 2)],
        )
        .unwrap();
        let shifted = model.shifted(4.0);
        for m in &shifted.components()[0].mean {
            assert!((m - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let mut mean = vec![0.0f64; 4];
        mean[2] = 0.5;
        let model = GaussianMixtureDataModel::new(
            1,
            2,
            2,
            vec![
                DataComponent::constant(0.25, 0.1, -0.3, 4),
                DataComponent {
                    weight: 0.75,
                    std: 0.2,
                    mean,
                },
            ],
        )
        .unwrap();
        model.save_file(&path).unwrap();
        let back = GaussianMixtureDataModel::load_file(&path).unwrap();
        assert_eq!(back.sample_shape(), (1, 2, 2));
        assert_eq!(back.components().len(), 2);
        for (a, b) in model.components().iter().zip(back.components()) {
            assert!((a.weight - b.weight).abs() < 1e-15);
            assert!((a.std - b.std).abs() < 1e-15);
            for (x, y) in a.mean.iter().zip(&b.mean) {
                // Sidecar means round through f32.
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn model_file_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        std::fs::write(&path, "gmm-data v1\nshape 1 1 1\ncomponent nope 1.0 const:0\n").unwrap();
        let err = GaussianMixtureDataModel::load_file(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        std::fs::write(&path, "wrong header\n").unwrap();
        let err = GaussianMixtureDataModel::load_file(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn predictor_rejects_wrong_sample_shape() {
        let p = AnalyticPredictor::new(standard_normal_model(1, 2, 2), schedule());
        let x = Tensor::zeros(Shape::new(1, 1, 3, 3));
        assert!(matches!(
            p.predict("s", &x, 10),
            Err(PredictorError::ShapeMismatch { .. })
        ));
    }
}
