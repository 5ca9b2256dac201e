//! Acceptance gate: one test per criterion, each asserting its stated
//! tolerance and printing one `criterion N: PASS (...)` line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Every numeric check is made against an oracle implemented independently in
//! this file (naive loops, closed forms, finite differences), not against the
//! library's own internals.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use diffpath_core::{
    auroc, ddim_invert, emit_report, fit_em, forward_noise, parse_report, run_benchmark,
    ssim_map, true_noise, write_split, AnalyticPredictor, BenchmarkResult, BenchmarkSpec,
    CovarianceType, DataComponent, DatasetRef, DiffusionSchedule, EmConfig,
    GaussianMixtureDataModel, ImageTensor, NoisePredictor, PredictorSpec, SampleOracle, Shape,
    SigmaConvention, Tensor, TrajectoryConfig, TrajectoryMode, TrajectoryRecord, ValueRange,
};

fn schedule_1000() -> DiffusionSchedule {
    DiffusionSchedule::linear(1000, 1e-4, 0.02, SigmaConvention::VariancePreserving)
        .expect("default schedule is valid")
}

fn pass(n: usize, details: String) {
    println!("criterion {n}: PASS ({details})");
}

fn normal_vec(rng: &mut ChaCha20Rng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z as f32
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1. Schedule round-trip and the variance identity.

#[test]
fn criterion_01_noise_round_trip_and_variance_identity() {
    let started = Instant::now();
    let schedule = schedule_1000();
    let shape = Shape::new(1, 1, 4, 4);
    let mut rng = ChaCha20Rng::seed_from_u64(101);

    let mut max_round_trip = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=1000);
        let x0 = Tensor::new(
            shape,
            (0..16).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let eps = Tensor::new(shape, normal_vec(&mut rng, 16)).unwrap();
        let x_t = forward_noise(&schedule, &x0, t, &eps).unwrap();
        let recovered = true_noise(&schedule, &x0, &x_t, t).unwrap();
        for (&r, &e) in recovered.data().iter().zip(eps.data()) {
            max_round_trip = max_round_trip.max((r as f64 - e as f64).abs());
        }
    }
    assert!(
        max_round_trip <= 1e-5,
        "round-trip noise error {max_round_trip} exceeds 1e-5"
    );

    let mut max_identity = 0.0f64;
    for t in 1..=1000 {
        let gap = (schedule.alpha_bar(t) + schedule.sigma(t).powi(2) - 1.0).abs();
        max_identity = max_identity.max(gap);
    }
    assert!(
        max_identity <= 1e-5,
        "alpha_bar + sigma^2 identity gap {max_identity} exceeds 1e-5"
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    pass(
        1,
        format!(
            "1000 triples, max round-trip error {max_round_trip:.2e}, \
             max variance-identity gap {max_identity:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Analytic predictor vs central finite differences of the log marginal.

#[test]
fn criterion_02_analytic_predictor_matches_finite_differences() {
    let started = Instant::now();
    let schedule = schedule_1000();
    let per = 64;
    let h_fd = 1e-4;

    let mut worst_overall = 0.0f64;
    for k in 1..=3usize {
        let components: Vec<DataComponent> = match k {
            1 => vec![DataComponent::constant(1.0, 0.5, 0.1, per)],
            2 => vec![
                DataComponent::constant(0.4, 0.3, -0.5, per),
                DataComponent::constant(0.6, 0.6, 0.4, per),
            ],
            _ => vec![
                DataComponent::constant(0.25, 0.4, -0.6, per),
                DataComponent::constant(0.35, 0.5, 0.0, per),
                DataComponent::constant(0.40, 0.7, 0.7, per),
            ],
        };
        let model = GaussianMixtureDataModel::new(1, 8, 8, components).unwrap();
        let predictor = AnalyticPredictor::new(model.clone(), schedule.clone());
        let mut rng = ChaCha20Rng::seed_from_u64(202 + k as u64);

        let mut worst = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(1..=1000);
            let x0 = model.sample(1, &mut rng);
            let eps = Tensor::new(x0.shape(), normal_vec(&mut rng, per)).unwrap();
            let x_t = forward_noise(&schedule, &x0, t, &eps).unwrap();
            let predicted = predictor.predict("probe", &x_t, t).unwrap();

            // Central finite differences of the log marginal at the exact
            // f32-quantized probe, mapped to a noise estimate by -sigma.
            let x: Vec<f64> = x_t.data().iter().map(|&v| v as f64).collect();
            let sigma = schedule.sigma(t);
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for j in 0..per {
                let mut plus = x.clone();
                plus[j] += h_fd;
                let mut minus = x.clone();
                minus[j] -= h_fd;
                let grad = (model.log_marginal(&schedule, t, &plus)
                    - model.log_marginal(&schedule, t, &minus))
                    / (2.0 * h_fd);
                let reference = -sigma * grad;
                let diff = predicted.data()[j] as f64 - reference;
                num += diff * diff;
                den += reference * reference;
            }
            let rel = (num / den.max(1e-300)).sqrt();
            worst = worst.max(rel);
        }
        assert!(
            worst <= 1e-3,
            "K={k}: relative prediction error {worst} exceeds 1e-3"
        );
        worst_overall = worst_overall.max(worst);
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    pass(
        2,
        format!(
            "K in {{1,2,3}}, 100 probes each, worst relative error \
             {worst_overall:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Exact per-sample predictor: self-consistent inversion, invertible back.

#[test]
fn criterion_03_exact_predictor_inversion_self_consistency() {
    let schedule = schedule_1000();
    let shape = Shape::new(1, 1, 8, 8);
    let per = shape.per_sample();
    let mut rng = ChaCha20Rng::seed_from_u64(303);

    let mut worst_mse = 0.0f64;
    let mut worst_recovery = 0.0f64;
    for sample in 0..5 {
        // Standard-normal draws clamped into the declared signed range.
        let x0_data: Vec<f32> = normal_vec(&mut rng, per)
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        let x0 = ImageTensor::new(shape, x0_data, ValueRange::Signed).unwrap();
        let oracle = SampleOracle::new(x0.tensor().clone(), schedule.clone());
        let config = TrajectoryConfig {
            mode: TrajectoryMode::DdimInversion,
            step_count: 10,
            seed: 0,
            keep_latents: true,
        };
        let id = format!("acc#{sample}");
        let rec = ddim_invert(&id, &x0, &oracle, &schedule, &config).unwrap();

        // Per-step MSE at every noised step.
        for i in 1..rec.step_count() {
            let mse: f64 = rec.predicted[i]
                .data()
                .iter()
                .zip(rec.truth[i].data())
                .map(|(&p, &t)| {
                    let d = p as f64 - t as f64;
                    d * d
                })
                .sum::<f64>()
                / per as f64;
            assert!(
                mse <= 1e-6,
                "sample {sample} step {i}: predicted-vs-truth MSE {mse} exceeds 1e-6"
            );
            worst_mse = worst_mse.max(mse);
        }

        // Independent reverse integration in f64 from the deepest latent,
        // querying the predictor at each f32-quantized state.
        let latents = rec.latents.as_ref().unwrap();
        let timesteps = &rec.timesteps;
        let mut state: Vec<f64> = latents
            .last()
            .unwrap()
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect();
        let predict_at = |state: &[f64], t: usize| -> Vec<f32> {
            let quantized =
                Tensor::new(shape, state.iter().map(|&v| v as f32).collect()).unwrap();
            oracle.predict(&id, &quantized, t).unwrap().data().to_vec()
        };
        for i in (1..timesteps.len()).rev() {
            let t = timesteps[i];
            let t_prev = timesteps[i - 1];
            let eps_hat = predict_at(&state, t);
            let sab = schedule.alpha_bar(t).sqrt();
            let sigma = schedule.sigma(t);
            let sab_prev = schedule.alpha_bar(t_prev).sqrt();
            let sigma_prev = schedule.sigma(t_prev);
            for (s, &e) in state.iter_mut().zip(&eps_hat) {
                let x0_hat = (*s - sigma * e as f64) / sab;
                *s = sab_prev * x0_hat + sigma_prev * e as f64;
            }
        }
        // State is now at the first timestep; read the clean image off it.
        let t0 = timesteps[0];
        let eps_hat = predict_at(&state, t0);
        let sab = schedule.alpha_bar(t0).sqrt();
        let sigma = schedule.sigma(t0);
        for (s, &e) in state.iter_mut().zip(&eps_hat) {
            *s = (*s - sigma * e as f64) / sab;
        }
        for (&recovered, &original) in state.iter().zip(x0.data()) {
            let err = (recovered - original as f64).abs();
            assert!(
                err <= 1e-3,
                "sample {sample}: reverse integration misses x0 by {err}"
            );
            worst_recovery = worst_recovery.max(err);
        }
    }

    pass(
        3,
        format!(
            "5 samples, worst per-step MSE {worst_mse:.2e}, \
             worst elementwise recovery error {worst_recovery:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Scorer vs an independent scalar reference.

const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

fn ref_rescale(data: &[f32]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    if hi > lo {
        data.iter().map(|&v| (v as f64 - lo) / (hi - lo)).collect()
    } else {
        data.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect()
    }
}

fn ref_reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    j as usize
}

/// Direct 2-D windowed SSIM, no separability shortcut: the independent
/// reference for both criterion 4's weights and criterion 5's identities.
fn ref_ssim(
    a: &[f32],
    b: &[f32],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    std: f64,
) -> Vec<f64> {
    let x = ref_rescale(a);
    let y = ref_rescale(b);
    let r = (window / 2) as isize;
    let k1d: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * std * std)).exp())
        .collect();
    let ksum: f64 = k1d.iter().sum();
    let k1d: Vec<f64> = k1d.into_iter().map(|v| v / ksum).collect();

    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let xs = &x[ch * plane..(ch + 1) * plane];
        let ys = &y[ch * plane..(ch + 1) * plane];
        for py in 0..h {
            for px in 0..w {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let weight = k1d[(dy + r) as usize] * k1d[(dx + r) as usize];
                        let sy = ref_reflect(py as isize + dy, h);
                        let sx = ref_reflect(px as isize + dx, w);
                        let xv = xs[sy * w + sx];
                        let yv = ys[sy * w + sx];
                        mx += weight * xv;
                        my += weight * yv;
                        mxx += weight * xv * xv;
                        myy += weight * yv * yv;
                        mxy += weight * xv * yv;
                    }
                }
                let var_x = mxx - mx * mx;
                let var_y = myy - my * my;
                let cov = mxy - mx * my;
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
                out.push((num / den).clamp(-1.0, 1.0));
            }
        }
    }
    out
}

/// Scalar reference of the six pooled statistics: plain loops, powers one to
/// three, and the telescoped form of the step-difference sums.
fn ref_score(
    x0: &ImageTensor,
    rec: &TrajectoryRecord,
    use_error: bool,
    use_ssim: bool,
) -> [f64; 6] {
    let shape = x0.shape();
    let per = shape.per_sample();
    let steps = rec.predicted.len();

    let maps: Vec<Vec<f64>> = (0..steps)
        .map(|t| {
            (0..per)
                .map(|i| {
                    let p = rec.predicted[t].data()[i] as f64;
                    if use_error {
                        let d = p - rec.truth[t].data()[i] as f64;
                        d * d
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect();

    let weights: Vec<f64> = if use_ssim {
        let mut sum = vec![0.0f64; per];
        for p in &rec.predicted {
            for (acc, &v) in sum.iter_mut().zip(p.data()) {
                *acc += v as f64;
            }
        }
        let sum_f32: Vec<f32> = sum.iter().map(|&v| v as f32).collect();
        ref_ssim(x0.data(), &sum_f32, shape.c, shape.h, shape.w, 11, 1.5)
            .into_iter()
            .map(|v| 1.0 - v)
            .collect()
    } else {
        vec![1.0; per]
    };

    let mut s = [0.0f64; 6];
    for p in 0..3u32 {
        let mut total = 0.0;
        let mut telescoped = 0.0;
        for i in 0..per {
            let mut acc = 0.0;
            for map in &maps {
                acc += map[i].powi(p as i32 + 1);
            }
            total += acc * weights[i];
            telescoped +=
                (maps[steps - 1][i].powi(p as i32 + 1) - maps[0][i].powi(p as i32 + 1))
                    * weights[i];
        }
        s[p as usize] = total;
        s[p as usize + 3] = telescoped;
    }
    s
}

#[test]
fn criterion_04_score_matches_the_scalar_reference() {
    let shape = Shape::new(1, 1, 12, 12);
    let per = shape.per_sample();
    let mut worst = 0.0f64;

    for trial in 0..50u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(404 + trial);
        let steps = rng.random_range(3..=6);
        let x0 = ImageTensor::new(
            shape,
            (0..per).map(|_| rng.random_range(0.0..1.0)).collect(),
            ValueRange::Unit,
        )
        .unwrap();
        let mut field = |lo: f32, hi: f32| -> Vec<Tensor> {
            (0..steps)
                .map(|_| {
                    Tensor::new(
                        shape,
                        (0..per).map(|_| rng.random_range(lo..hi)).collect(),
                    )
                    .unwrap()
                })
                .collect()
        };
        let rec = TrajectoryRecord {
            sample_id: format!("t#{trial}"),
            timesteps: (1..=steps).collect(),
            predicted: field(-1.5, 1.5),
            truth: field(-1.5, 1.5),
            latents: None,
        };

        for use_error in [false, true] {
            for use_ssim in [false, true] {
                let config = diffpath_core::ScoreConfig {
                    use_error,
                    use_ssim,
                    ..Default::default()
                };
                let got = diffpath_core::compute_score(&x0, &rec, &config)
                    .unwrap()
                    .as_array();
                let want = ref_score(&x0, &rec, use_error, use_ssim);
                for j in 0..6 {
                    let rel = (got[j] - want[j]).abs() / want[j].abs().max(1e-9);
                    assert!(
                        rel <= 1e-5,
                        "trial {trial} (err={use_error} ssim={use_ssim}) s{}: \
                         {} vs reference {} (relative {rel:.2e})",
                        j + 1,
                        got[j],
                        want[j]
                    );
                    worst = worst.max(rel);
                }
            }
        }
    }

    pass(
        4,
        format!(
            "50 trajectories x 4 flag combinations, worst relative \
             deviation {worst:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Structural-similarity identities.

#[test]
fn criterion_05_ssim_identities() {
    let mut rng = ChaCha20Rng::seed_from_u64(505);
    let shape = Shape::new(1, 1, 16, 16);
    let per = shape.per_sample();

    let mut worst_self = 0.0f64;
    let mut worst_symmetry = 0.0f64;
    let mut worst_constant = 0.0f64;
    for _ in 0..100 {
        let a = Tensor::new(
            shape,
            (0..per).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::new(
            shape,
            (0..per).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let self_map = ssim_map(&a, &a, 11, 1.5).unwrap();
        for &v in self_map.values() {
            worst_self = worst_self.max((v - 1.0).abs());
        }

        let ab = ssim_map(&a, &b, 11, 1.5).unwrap();
        let ba = ssim_map(&b, &a, 11, 1.5).unwrap();
        for (&x, &y) in ab.values().iter().zip(ba.values()) {
            worst_symmetry = worst_symmetry.max((x - y).abs());
            assert!((-1.0..=1.0).contains(&x), "value {x} out of [-1, 1]");
        }

        // Constant vs constant follows the luminance-only closed form.
        let alpha: f64 = rng.random_range(0.0..1.0);
        let beta: f64 = rng.random_range(0.0..1.0);
        let ca = Tensor::new(shape, vec![alpha as f32; per]).unwrap();
        let cb = Tensor::new(shape, vec![beta as f32; per]).unwrap();
        let map = ssim_map(&ca, &cb, 11, 1.5).unwrap();
        let (ma, mb) = (alpha as f32 as f64, beta as f32 as f64);
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        for &v in map.values() {
            worst_constant = worst_constant.max((v - want).abs());
        }
    }

    assert!(worst_self <= 1e-6, "self-similarity off by {worst_self}");
    assert!(worst_symmetry <= 1e-6, "asymmetry {worst_symmetry}");
    assert!(
        worst_constant <= 1e-12,
        "constant closed form off by {worst_constant}"
    );
    pass(
        5,
        format!(
            "100 images: self-SSIM gap {worst_self:.2e}, asymmetry \
             {worst_symmetry:.2e}, constant closed-form gap {worst_constant:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Expectation-maximization correctness.

#[test]
fn criterion_06_em_fits_are_correct() {
    // (a) K=1 equals the closed-form maximum-likelihood estimate.
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let n = 60;
    let d = 3;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|j| 2.0 * j as f64 + rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let model = fit_em(&features, 1, CovarianceType::Full, 1, &EmConfig::default()).unwrap();

    let mut mean = vec![0.0f64; d];
    for f in &features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v / n as f64;
        }
    }
    let mut worst_k1 = 0.0f64;
    for (got, want) in model.means_raw()[0].iter().zip(&mean) {
        worst_k1 = worst_k1.max((got - want).abs());
    }
    assert!(worst_k1 <= 1e-8, "K=1 mean off by {worst_k1}");

    // Covariance in the standardized space: scatter plus the stated floor.
    let (std_mean, std_scale) = model.standardization();
    let standardized: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .map(|(j, &v)| (v - std_mean[j]) / std_scale[j])
                .collect()
        })
        .collect();
    let mut z_mean = vec![0.0f64; d];
    for z in &standardized {
        for (m, &v) in z_mean.iter_mut().zip(z) {
            *m += v / n as f64;
        }
    }
    let mut scatter = vec![0.0f64; d * d];
    for z in &standardized {
        for r in 0..d {
            for c in 0..d {
                scatter[r * d + c] += (z[r] - z_mean[r]) * (z[c] - z_mean[c]) / n as f64;
            }
        }
    }
    for i in 0..d {
        scatter[i * d + i] += 1e-6;
    }
    let fitted = model.covariance_dense(0);
    for (got, want) in fitted.iter().zip(&scatter) {
        worst_k1 = worst_k1.max((got - want).abs());
    }
    assert!(worst_k1 <= 1e-8, "K=1 covariance off by {worst_k1}");
    assert!((model.weights()[0] - 1.0).abs() <= 1e-12);

    // (b) Log-likelihood never decreases, across 20 seeded runs.
    let mut blob_rng = ChaCha20Rng::seed_from_u64(616);
    let blobs: Vec<Vec<f64>> = (0..600)
        .map(|i| {
            let center = (i % 3) as f64 * 4.0;
            vec![
                center + blob_rng.random_range(-1.0..1.0),
                -center + blob_rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let mut worst_drop = 0.0f64;
    for seed in 0..20 {
        let model = fit_em(&blobs, 3, CovarianceType::Full, seed, &EmConfig::default()).unwrap();
        for pair in model.ll_trace().windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }
    assert!(
        worst_drop <= 1e-9,
        "log-likelihood dropped by {worst_drop} within a run"
    );

    // (c) Two well-separated clusters are recovered.
    let mut cluster_rng = ChaCha20Rng::seed_from_u64(626);
    let truth = [[0.0, 0.0], [10.0, 10.0]];
    let clusters: Vec<Vec<f64>> = (0..4000)
        .map(|i| {
            let c = &truth[i % 2];
            vec![
                c[0] + cluster_rng.sample::<f64, _>(StandardNormal),
                c[1] + cluster_rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let model = fit_em(&clusters, 2, CovarianceType::Full, 3, &EmConfig::default()).unwrap();
    let mut means = model.means_raw();
    means.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut worst_recovery = 0.0f64;
    for (got, want) in means.iter().zip(&truth) {
        for (g, w) in got.iter().zip(want) {
            worst_recovery = worst_recovery.max((g - w).abs());
        }
    }
    assert!(
        worst_recovery <= 0.05,
        "cluster means off by {worst_recovery}"
    );

    pass(
        6,
        format!(
            "closed-form gap {worst_k1:.2e}, worst likelihood drop \
             {worst_drop:.2e}, cluster-mean error {worst_recovery:.3}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Rank-based AUROC equals the pairwise count exactly.

#[test]
fn criterion_07_auroc_equals_the_pairwise_oracle() {
    fn oracle(id: &[f64], ood: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        for &o in ood {
            for &i in id {
                if o > i {
                    sum += 1.0;
                } else if o == i {
                    sum += 0.5;
                }
            }
        }
        sum / (id.len() * ood.len()) as f64
    }

    let mut rng = ChaCha20Rng::seed_from_u64(707);
    for trial in 0..200 {
        let n_id = rng.random_range(1..=60);
        let n_ood = rng.random_range(1..=60);
        // Integer-quantized draws force heavy ties on many trials.
        let levels = rng.random_range(2..=12);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.random_range(0..levels) as f64 / 3.0)
                .collect()
        };
        let id = draw(n_id);
        let ood = draw(n_ood);

        let got = auroc(&id, &ood).unwrap();
        let want = oracle(&id, &ood);
        assert!(
            got == want,
            "trial {trial}: auroc {got} != pairwise oracle {want}"
        );
        let flipped = auroc(&ood, &id).unwrap();
        assert!(
            got + flipped == 1.0,
            "trial {trial}: complementarity violated: {got} + {flipped}"
        );
    }

    pass(
        7,
        "200 random pairs with heavy ties: bitwise oracle equality and exact \
         complementarity"
            .to_string(),
    );
}

// ---------------------------------------------------------------------------
// 8-10 share one synthetic benchmark: a two-level mixture as the
// in-distribution model and its 4-standard-deviation mean shift as the
// out-distribution model.

fn id_data_model() -> GaussianMixtureDataModel {
    let per = 32 * 32;
    GaussianMixtureDataModel::new(
        1,
        32,
        32,
        vec![
            DataComponent::constant(0.5, 0.05, 0.35, per),
            DataComponent::constant(0.5, 0.05, 0.65, per),
        ],
    )
    .unwrap()
}

/// Sample `n` images per split and lay out `<root>/id/{val,test}` and
/// `<root>/ood/test`, returning a default benchmark over them.
fn build_benchmark(
    root: &std::path::Path,
    ood_model: &GaussianMixtureDataModel,
    n: usize,
    sample_seed: u64,
    master_seed: u64,
) -> BenchmarkSpec {
    let id_model = id_data_model();
    let mut rng = ChaCha20Rng::seed_from_u64(sample_seed);
    let splits: [(&str, &GaussianMixtureDataModel); 3] = [
        ("id/val", &id_model),
        ("id/test", &id_model),
        ("ood/test", ood_model),
    ];
    for (rel, model) in splits {
        let images = model.sample_images(n, ValueRange::Unit, &mut rng);
        write_split(&root.join(rel), "data", &images, 64).unwrap();
    }
    let model_path = root.join("id_model.txt");
    id_model.save_file(&model_path).unwrap();

    let mut spec = BenchmarkSpec::with_defaults(
        DatasetRef {
            name: "indist".into(),
            root: root.join("id"),
        },
        vec![DatasetRef {
            name: "shifted".into(),
            root: root.join("ood"),
        }],
        PredictorSpec::Analytic { model: model_path },
    );
    spec.seed = master_seed;
    spec
}

#[test]
fn criterion_08_end_to_end_separation_and_null() {
    let started = Instant::now();

    // Mean-shifted out-distribution: near-perfect separation.
    let tmp = tempfile::tempdir().unwrap();
    let spec = build_benchmark(tmp.path(), &id_data_model().shifted(4.0), 200, 801, 8);
    let result = run_benchmark(&spec).unwrap();
    let shifted_auroc = result.pairs[0].1;
    assert!(
        shifted_auroc >= 0.99,
        "mean-shift separation {shifted_auroc} below 0.99"
    );

    // Null: the "out" data is a fresh draw from the in-distribution model.
    let tmp_null = tempfile::tempdir().unwrap();
    let spec_null = build_benchmark(tmp_null.path(), &id_data_model(), 500, 802, 8);
    let result_null = run_benchmark(&spec_null).unwrap();
    let null_auroc = result_null.pairs[0].1;
    assert!(
        (0.45..=0.55).contains(&null_auroc),
        "null benchmark {null_auroc} outside [0.45, 0.55]"
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    pass(
        8,
        format!(
            "4-std shift auroc {shifted_auroc:.4} (n=200), null auroc \
             {null_auroc:.4} (n=500), {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_09_error_statistics_beat_the_raw_prediction_ablation() {
    let mut with_error = Vec::new();
    let mut without_error = Vec::new();
    for master_seed in 0..5u64 {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = build_benchmark(
            tmp.path(),
            &id_data_model().shifted(4.0),
            200,
            901 + master_seed,
            master_seed,
        );
        spec.score.use_error = true;
        with_error.push(run_benchmark(&spec).unwrap().pairs[0].1);
        spec.score.use_error = false;
        without_error.push(run_benchmark(&spec).unwrap().pairs[0].1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (err_mean, base_mean) = (mean(&with_error), mean(&without_error));
    assert!(
        err_mean >= base_mean,
        "error statistics ({err_mean:.4}, per-seed {with_error:?}) fall below \
         the raw-prediction ablation ({base_mean:.4}, per-seed {without_error:?})"
    );
    pass(
        9,
        format!(
            "5 seeds: mean auroc {err_mean:.4} with squared errors vs \
             {base_mean:.4} with raw predictions; per-seed {with_error:?} vs \
             {without_error:?}"
        ),
    );
}

#[test]
fn criterion_10_identical_seeds_give_byte_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = build_benchmark(tmp.path(), &id_data_model().shifted(4.0), 200, 1001, 10);
    let first = run_benchmark(&spec).unwrap();
    let second = run_benchmark(&spec).unwrap();

    assert_eq!(
        emit_report(&first),
        emit_report(&second),
        "reports differ between identical runs"
    );
    assert_eq!(first.gmm_text, second.gmm_text, "fitted densities differ");
    for (label, rows) in &first.tables {
        let other = &second.tables[label];
        for (a, b) in rows.iter().zip(other) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.score, b.score, "{label}: score bits differ");
            assert!(
                a.anomaly.to_bits() == b.anomaly.to_bits(),
                "{label}: anomaly bits differ"
            );
        }
    }
    pass(
        10,
        "two runs with one master seed: report, density, and score tables \
         byte-identical"
            .to_string(),
    );
}

// ---------------------------------------------------------------------------
// 11. Report structure and the documented full-scale reference number.

#[test]
fn criterion_11_report_structure_and_reference_quote() {
    let result = BenchmarkResult {
        pairs: vec![("setA".into(), 0.9812), ("setB".into(), 0.7345)],
        id_name: "indist".into(),
        tables: Default::default(),
        gmm_text: String::new(),
        config_echo: "datasets=indist=/d/i,setA=/d/a,setB=/d/b\npredictor=zero\n".into(),
        timings: vec![("total".into(), 1.0)],
    };
    let report = emit_report(&result);

    // One row per (in, out) pair under an auroc column, like the
    // full-scale benchmark tables this mirrors.
    let lines: Vec<&str> = report.lines().collect();
    let header = lines
        .iter()
        .position(|l| *l == "id_dataset\tood_dataset\tauroc")
        .expect("header row present");
    assert_eq!(lines[header + 1], "indist\tsetA\t0.9812");
    assert_eq!(lines[header + 2], "indist\tsetB\t0.7345");
    let rows = parse_report(&report).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], ("indist".into(), "setA".into(), 0.9812));

    // Timings never appear in the report.
    assert!(!report.contains("total"), "timing leaked into the report");

    // The documentation quotes the full-scale reference average (94.9) and
    // marks it as not reproduced by this desk-scale artifact.
    let readme = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../README.md"
    ))
    .expect("workspace README exists");
    assert!(
        readme.contains("94.9"),
        "README must quote the full-scale reference average"
    );
    let quote_area = readme
        .split('\n')
        .find(|l| l.contains("94.9"))
        .unwrap()
        .to_lowercase();
    assert!(
        quote_area.contains("not reproduced"),
        "the 94.9 reference must be explicitly marked as not reproduced"
    );

    pass(
        11,
        "report rows mirror the pair/auroc table structure; 94.9 quoted in \
         the README and marked not reproduced"
            .to_string(),
    );
}
