//! A deliberately small convolutional noise predictor trained from scratch.
//!
//! Three 3x3 zero-padded convolutions (C -> hidden -> hidden -> C) with SiLU
//! activations and a learned projection of a sinusoidal timestep embedding
//! added channel-wise after the first convolution. All arithmetic is f64 and
//! both the forward pass and the hand-written backward pass are deterministic,
//! so training is bit-reproducible from its seed.
//!
//! The training loss for a batch is the mean over samples of the summed
//! squared error between the predicted and true noise, which makes the
//! always-zero predictor score exactly C*H*W per sample.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::predictor::{NoisePredictor, PredictorError};
use crate::schedule::{DiffusionSchedule, ScheduleError};
use crate::tensor::{ImageTensor, Shape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DenoiserError {
    #[error("bad denoiser configuration: {message}")]
    Config { message: String },
    #[error("denoiser file {path}: {message}")]
    File { path: std::path::PathBuf, message: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Learned parameters. Weight layouts:
/// conv weights are `[out_ch][in_ch][ky][kx]` flattened row-major,
/// the embedding projection is `[hidden][hidden]`.
#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    in_channels: usize,
    hidden: usize,
    t_count: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    wt: Vec<f64>,
    bt: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    tag: String,
}

/// Gradients in the same layout as the parameters.
struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    wt: Vec<f64>,
    bt: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
struct Cache {
    x: Vec<f64>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
    /// Per-sample sinusoidal embeddings, n x hidden.
    embs: Vec<f64>,
    n: usize,
    h: usize,
    w: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            hidden: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean per-sample summed squared error of the always-zero predictor,
    /// i.e. the number of elements per sample.
    pub baseline_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

impl TinyDenoiser {
    /// Fresh network with small seeded He-style initialization.
    pub fn new(
        in_channels: usize,
        hidden: usize,
        t_count: usize,
        seed: u64,
    ) -> Result<Self, DenoiserError> {
        if in_channels == 0 {
            return Err(DenoiserError::Config {
                message: "in_channels must be positive".into(),
            });
        }
        if hidden < 2 || hidden % 2 != 0 {
            return Err(DenoiserError::Config {
                message: format!("hidden width {hidden} must be an even number >= 2"),
            });
        }
        if t_count == 0 {
            return Err(DenoiserError::Config {
                message: "t_count must be positive".into(),
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut init = |fan_in: usize, len: usize| -> Vec<f64> {
            let scale = (2.0 / fan_in as f64).sqrt();
            (0..len)
                .map(|_| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    scale * z
                })
                .collect()
        };
        let w1 = init(in_channels * 9, hidden * in_channels * 9);
        let wt = init(hidden, hidden * hidden);
        let w2 = init(hidden * 9, hidden * hidden * 9);
        let w3 = init(hidden * 9, in_channels * hidden * 9);
        Ok(TinyDenoiser {
            in_channels,
            hidden,
            t_count,
            w1,
            b1: vec![0.0; hidden],
            wt,
            bt: vec![0.0; hidden],
            w2,
            b2: vec![0.0; hidden],
            w3,
            b3: vec![0.0; in_channels],
            tag: format!("tiny-denoiser(hidden={hidden},t_count={t_count})"),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    /// Sinusoidal features for one timestep: sin then cos halves over a
    /// geometric frequency ladder from 1 down to 1/10000.
    fn embed(&self, t: usize) -> Vec<f64> {
        let half = self.hidden / 2;
        let mut e = vec![0.0; self.hidden];
        for i in 0..half {
            let exponent = if half > 1 {
                i as f64 / (half - 1) as f64
            } else {
                0.0
            };
            let freq = (10_000.0f64).powf(-exponent);
            let angle = t as f64 * freq;
            e[i] = angle.sin();
            e[half + i] = angle.cos();
        }
        e
    }

    /// Forward pass for a batch with per-sample timesteps.
    fn forward(&self, x: &[f64], n: usize, h: usize, w: usize, ts: &[usize]) -> Cache {
        let cin = self.in_channels;
        let hid = self.hidden;
        let mut h1 = conv3x3_forward(x, n, cin, h, w, &self.w1, &self.b1, hid);

        let mut embs = Vec::with_capacity(n * hid);
        for (s, &t) in ts.iter().enumerate() {
            let e = self.embed(t);
            // Learned projection of the embedding, added per channel.
            for c in 0..hid {
                let mut proj = self.bt[c];
                for (j, ej) in e.iter().enumerate() {
                    proj += self.wt[c * hid + j] * ej;
                }
                let base = (s * hid + c) * h * w;
                for px in &mut h1[base..base + h * w] {
                    *px += proj;
                }
            }
            embs.extend_from_slice(&e);
        }

        let a1: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();
        let h2 = conv3x3_forward(&a1, n, hid, h, w, &self.w2, &self.b2, hid);
        let a2: Vec<f64> = h2.iter().map(|&v| silu(v)).collect();
        let out = conv3x3_forward(&a2, n, hid, h, w, &self.w3, &self.b3, cin);
        Cache {
            x: x.to_vec(),
            h1,
            a1,
            h2,
            a2,
            out,
            embs,
            n,
            h,
            w,
        }
    }

    /// Loss (mean over samples of summed squared error) and its gradients.
    fn loss_and_grads(&self, cache: &Cache, target: &[f64]) -> (f64, Grads) {
        let Cache { n, h, w, .. } = *cache;
        let cin = self.in_channels;
        let hid = self.hidden;
        let inv_n = 1.0 / n as f64;

        let mut loss = 0.0;
        let mut grad_out = vec![0.0; cache.out.len()];
        for (i, (&o, &tgt)) in cache.out.iter().zip(target).enumerate() {
            let diff = o - tgt;
            loss += diff * diff;
            grad_out[i] = 2.0 * diff * inv_n;
        }
        loss *= inv_n;

        let (grad_a2, gw3, gb3) =
            conv3x3_backward(&cache.a2, n, hid, h, w, &self.w3, cin, &grad_out);
        let grad_h2: Vec<f64> = grad_a2
            .iter()
            .zip(&cache.h2)
            .map(|(&g, &z)| g * silu_grad(z))
            .collect();
        let (grad_a1, gw2, gb2) =
            conv3x3_backward(&cache.a1, n, hid, h, w, &self.w2, hid, &grad_h2);
        let grad_h1: Vec<f64> = grad_a1
            .iter()
            .zip(&cache.h1)
            .map(|(&g, &z)| g * silu_grad(z))
            .collect();

        // The embedding projection receives the spatial sum of grad_h1 per
        // channel; grad_h1 itself continues unchanged into conv1.
        let mut gwt = vec![0.0; hid * hid];
        let mut gbt = vec![0.0; hid];
        for s in 0..n {
            for c in 0..hid {
                let base = (s * hid + c) * h * w;
                let gsum: f64 = grad_h1[base..base + h * w].iter().sum();
                gbt[c] += gsum;
                for j in 0..hid {
                    gwt[c * hid + j] += gsum * cache.embs[s * hid + j];
                }
            }
        }

        let (_, gw1, gb1) = conv3x3_backward(&cache.x, n, cin, h, w, &self.w1, hid, &grad_h1);
        (
            loss,
            Grads {
                w1: gw1,
                b1: gb1,
                wt: gwt,
                bt: gbt,
                w2: gw2,
                b2: gb2,
                w3: gw3,
                b3: gb3,
            },
        )
    }

    fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        fn apply(p: &mut [f64], g: &[f64], lr: f64) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
        apply(&mut self.w1, &grads.w1, lr);
        apply(&mut self.b1, &grads.b1, lr);
        apply(&mut self.wt, &grads.wt, lr);
        apply(&mut self.bt, &grads.bt, lr);
        apply(&mut self.w2, &grads.w2, lr);
        apply(&mut self.b2, &grads.b2, lr);
        apply(&mut self.w3, &grads.w3, lr);
        apply(&mut self.b3, &grads.b3, lr);
    }

    fn params(&self) -> [&[f64]; 8] {
        [
            &self.w1, &self.b1, &self.wt, &self.bt, &self.w2, &self.b2, &self.w3, &self.b3,
        ]
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.wt,
            &mut self.bt,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    /// Write all parameters as text with full f64 precision, so that a
    /// save/load round trip reproduces the network bit for bit.
    pub fn save_file(&self, path: &Path) -> Result<(), DenoiserError> {
        let mut text = String::new();
        writeln!(text, "tiny-denoiser v1").unwrap();
        writeln!(text, "in_channels {}", self.in_channels).unwrap();
        writeln!(text, "hidden {}", self.hidden).unwrap();
        writeln!(text, "t_count {}", self.t_count).unwrap();
        let total: usize = self.params().iter().map(|p| p.len()).sum();
        writeln!(text, "params {total}").unwrap();
        for block in self.params() {
            for v in block {
                writeln!(text, "{v:.17e}").unwrap();
            }
        }
        std::fs::write(path, text).map_err(|source| DenoiserError::File {
            path: path.to_path_buf(),
            message: format!("write failed: {source}"),
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, DenoiserError> {
        let err = |message: String| DenoiserError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path)
            .map_err(|source| err(format!("read failed: {source}")))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("tiny-denoiser v1") {
            return Err(err("expected header \"tiny-denoiser v1\"".into()));
        }
        let mut field = |name: &str| -> Result<usize, DenoiserError> {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("missing {name} line")))?;
            let value = line
                .strip_prefix(name)
                .map(str::trim)
                .ok_or_else(|| err(format!("expected \"{name} <value>\", got \"{line}\"")))?;
            value
                .parse::<usize>()
                .map_err(|_| err(format!("bad {name} value \"{value}\"")))
        };
        let in_channels = field("in_channels")?;
        let hidden = field("hidden")?;
        let t_count = field("t_count")?;
        let total = field("params")?;
        let mut net = TinyDenoiser::new(in_channels, hidden, t_count, 0)?;
        let expect: usize = net.params().iter().map(|p| p.len()).sum();
        if total != expect {
            return Err(err(format!(
                "file declares {total} parameters, architecture has {expect}"
            )));
        }
        let mut values = Vec::with_capacity(total);
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| err(format!("bad parameter value \"{line}\"")))?,
            );
        }
        if values.len() != total {
            return Err(err(format!(
                "expected {total} parameter values, found {}",
                values.len()
            )));
        }
        let mut cursor = 0;
        for block in net.params_mut() {
            let len = block.len();
            block.copy_from_slice(&values[cursor..cursor + len]);
            cursor += len;
        }
        Ok(net)
    }
}

impl NoisePredictor for TinyDenoiser {
    fn predict(&self, _sample_id: &str, x_t: &Tensor, t: usize) -> Result<Tensor, PredictorError> {
        if t < 1 || t > self.t_count {
            return Err(PredictorError::Schedule(
                ScheduleError::TimestepOutOfRange {
                    t,
                    t_count: self.t_count,
                },
            ));
        }
        let shape = x_t.shape();
        if shape.c != self.in_channels {
            return Err(PredictorError::ShapeMismatch {
                expected: Shape::new(shape.n, self.in_channels, shape.h, shape.w),
                found: shape,
            });
        }
        let x: Vec<f64> = x_t.data().iter().map(|&v| v as f64).collect();
        let ts = vec![t; shape.n];
        let cache = self.forward(&x, shape.n, shape.h, shape.w, &ts);
        let out: Vec<f32> = cache.out.iter().map(|&v| v as f32).collect();
        Ok(Tensor::new(shape, out).expect("finite weights yield finite predictions"))
    }

    fn name(&self) -> &str {
        "tiny-denoiser"
    }

    fn train_tag(&self) -> &str {
        &self.tag
    }
}

/// Train a fresh denoiser on clean images: each step noises a minibatch at
/// per-sample uniform timesteps and regresses the injected noise.
pub fn train_denoiser(
    data: &ImageTensor,
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<(TinyDenoiser, TrainReport), DenoiserError> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(DenoiserError::Config {
            message: "epochs and batch_size must be positive".into(),
        });
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(DenoiserError::Config {
            message: format!("learning rate {} must be positive", config.learning_rate),
        });
    }
    let shape = data.shape();
    let mut net = TinyDenoiser::new(shape.c, config.hidden, schedule.t_count(), config.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x746f_7563_6873_6574);
    let per = shape.per_sample();
    let t_count = schedule.t_count();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..shape.n).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bn = chunk.len();
            let mut xt = vec![0.0f64; bn * per];
            let mut eps = vec![0.0f64; bn * per];
            let mut ts = Vec::with_capacity(bn);
            for (bi, &si) in chunk.iter().enumerate() {
                let t = rng.random_range(1..=t_count);
                ts.push(t);
                let sab = schedule.alpha_bar(t).sqrt();
                let sigma = schedule.sigma(t);
                let x0 = &data.tensor().data()[si * per..(si + 1) * per];
                for j in 0..per {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    eps[bi * per + j] = z;
                    xt[bi * per + j] = sab * x0[j] as f64 + sigma * z;
                }
            }
            let cache = net.forward(&xt, bn, shape.h, shape.w, &ts);
            let (loss, grads) = net.loss_and_grads(&cache, &eps);
            net.sgd_step(&grads, config.learning_rate);
            epoch_loss_sum += loss * bn as f64;
        }
        epoch_losses.push(epoch_loss_sum / shape.n as f64);
    }
    let final_loss = *epoch_losses.last().expect("at least one epoch");
    Ok((
        net,
        TrainReport {
            baseline_loss: per as f64,
            epoch_losses,
            final_loss,
        },
    ))
}

/// Mean per-sample summed squared noise-prediction error on held-out data,
/// with freshly seeded noise at uniform timesteps.
pub fn evaluate_loss(
    net: &TinyDenoiser,
    data: &ImageTensor,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<f64, DenoiserError> {
    let shape = data.shape();
    let per = shape.per_sample();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for si in 0..shape.n {
        let t = rng.random_range(1..=schedule.t_count());
        let sab = schedule.alpha_bar(t).sqrt();
        let sigma = schedule.sigma(t);
        let x0 = &data.tensor().data()[si * per..(si + 1) * per];
        let mut xt = vec![0.0f32; per];
        let mut eps = vec![0.0f64; per];
        for j in 0..per {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            eps[j] = z;
            xt[j] = (sab * x0[j] as f64 + sigma * z) as f32;
        }
        let xt = Tensor::new(Shape::new(1, shape.c, shape.h, shape.w), xt)
            .expect("finite noised sample");
        let pred = net
            .predict("eval", &xt, t)
            .map_err(|e| DenoiserError::Config {
                message: format!("evaluation predict failed: {e}"),
            })?;
        total += pred
            .data()
            .iter()
            .zip(&eps)
            .map(|(&p, &e)| {
                let d = p as f64 - e;
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / shape.n as f64)
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// 3x3 convolution, stride 1, zero padding; weight layout [cout][cin][3][3].
fn conv3x3_forward(
    input: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * cout * h * w];
    for s in 0..n {
        for co in 0..cout {
            let ob = (s * cout + co) * h * w;
            out[ob..ob + h * w].fill(bias[co]);
            for ci in 0..cin {
                let ib = (s * cin + ci) * h * w;
                let wb = (co * cin + ci) * 9;
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let wv = weight[wb + dy * 3 + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        // Output rows/cols where the tap lands inside the input.
                        let y0 = 1usize.saturating_sub(dy);
                        let y1 = (h + 1 - dy).min(h);
                        let x0 = 1usize.saturating_sub(dx);
                        let x1 = (w + 1 - dx).min(w);
                        for y in y0..y1 {
                            let iy = y + dy - 1;
                            let orow = ob + y * w;
                            let irow = ib + iy * w;
                            for x in x0..x1 {
                                out[orow + x] += wv * input[irow + x + dx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the 3x3 convolution: returns (grad_input, grad_weight, grad_bias).
fn conv3x3_backward(
    input: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for s in 0..n {
        for co in 0..cout {
            let ob = (s * cout + co) * h * w;
            gb[co] += grad_out[ob..ob + h * w].iter().sum::<f64>();
            for ci in 0..cin {
                let ib = (s * cin + ci) * h * w;
                let wb = (co * cin + ci) * 9;
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let wv = weight[wb + dy * 3 + dx];
                        let mut wgrad = 0.0;
                        let y0 = 1usize.saturating_sub(dy);
                        let y1 = (h + 1 - dy).min(h);
                        let x0 = 1usize.saturating_sub(dx);
                        let x1 = (w + 1 - dx).min(w);
                        for y in y0..y1 {
                            let iy = y + dy - 1;
                            let orow = ob + y * w;
                            let irow = ib + iy * w;
                            for x in x0..x1 {
                                let g = grad_out[orow + x];
                                wgrad += g * input[irow + x + dx - 1];
                                gin[irow + x + dx - 1] += g * wv;
                            }
                        }
                        gw[wb + dy * 3 + dx] += wgrad;
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}
