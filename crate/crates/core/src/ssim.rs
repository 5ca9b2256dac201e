//! Per-pixel structural similarity between a clean image and an
//! accumulated-noise image.
//!
//! Both inputs are independently min-max rescaled to [0, 1] over the whole
//! sample before comparison, so absolute scales cancel and the constants
//! C1 = (0.01)^2 and C2 = (0.03)^2 match a dynamic range of L = 1. Local
//! statistics use a normalized Gaussian window (default 11x11, std 1.5)
//! applied separably with symmetric edge reflection. Everything is f64.

use crate::tensor::{Shape, Tensor};

pub const DEFAULT_WINDOW: usize = 11;
pub const DEFAULT_WINDOW_STD: f64 = 1.5;

const C1: f64 = 1e-4; // (0.01 * L)^2 with L = 1
const C2: f64 = 9e-4; // (0.03 * L)^2

#[derive(Debug, thiserror::Error)]
pub enum SsimError {
    #[error("inputs have different shapes: {a} vs {b}")]
    ShapeMismatch { a: Shape, b: Shape },
    #[error("similarity maps are computed one sample at a time, got a batch of {n}")]
    SingleSampleRequired { n: usize },
    #[error("window size {window} must be odd")]
    EvenWindow { window: usize },
    #[error("window size {window} does not fit the {h}x{w} image")]
    WindowTooLarge { window: usize, h: usize, w: usize },
    #[error("window std {std} must be positive and finite")]
    BadStd { std: f64 },
}

/// Per-pixel similarity values for one sample, kept in f64 for downstream
/// weighting.
#[derive(Debug, Clone)]
pub struct SsimMap {
    values: Vec<f64>,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    window_std: f64,
}

impl SsimMap {
    /// Flattened (C, H, W) values, each in [-1, 1].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel_shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn window_std(&self) -> f64 {
        self.window_std
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Min-max rescale to [0, 1] over the whole sample. A constant input keeps
/// its level (clamped into [0, 1]) so that the constant-vs-constant closed
/// form stays meaningful instead of collapsing to an arbitrary point.
fn rescale_unit(data: &[f32]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data {
        let v = v as f64;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        let span = hi - lo;
        data.iter().map(|&v| (v as f64 - lo) / span).collect()
    } else {
        data.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect()
    }
}

fn gaussian_kernel(window: usize, std: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * std * std)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Index with symmetric edge reflection: -1 -> 0, -2 -> 1, n -> n-1, ...
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&j));
    j as usize
}

/// Separable Gaussian blur of one H x W field with edge reflection.
fn blur(field: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - r, w);
                acc += kv * field[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - r, h);
                acc += kv * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM between two single-sample tensors, computed per channel
/// after both inputs are min-max rescaled to [0, 1].
pub fn ssim_map(
    a: &Tensor,
    b: &Tensor,
    window: usize,
    window_std: f64,
) -> Result<SsimMap, SsimError> {
    let shape = a.shape();
    if shape != b.shape() {
        return Err(SsimError::ShapeMismatch {
            a: shape,
            b: b.shape(),
        });
    }
    if shape.n != 1 {
        return Err(SsimError::SingleSampleRequired { n: shape.n });
    }
    if window % 2 == 0 || window == 0 {
        return Err(SsimError::EvenWindow { window });
    }
    if window > shape.h || window > shape.w {
        return Err(SsimError::WindowTooLarge {
            window,
            h: shape.h,
            w: shape.w,
        });
    }
    if !(window_std > 0.0 && window_std.is_finite()) {
        return Err(SsimError::BadStd { std: window_std });
    }

    let x = rescale_unit(a.data());
    let y = rescale_unit(b.data());
    let kernel = gaussian_kernel(window, window_std);
    let (c, h, w) = (shape.c, shape.h, shape.w);
    let plane = h * w;

    let mut values = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let xs = &x[ch * plane..(ch + 1) * plane];
        let ys = &y[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(ys).map(|(u, v)| u * v).collect();

        let mu_x = blur(xs, h, w, &kernel);
        let mu_y = blur(ys, h, w, &kernel);
        let m_xx = blur(&xx, h, w, &kernel);
        let m_yy = blur(&yy, h, w, &kernel);
        let m_xy = blur(&xy, h, w, &kernel);

        for i in 0..plane {
            let var_x = m_xx[i] - mu_x[i] * mu_x[i];
            let var_y = m_yy[i] - mu_y[i] * mu_y[i];
            let cov = m_xy[i] - mu_x[i] * mu_y[i];
            let num = (2.0 * mu_x[i] * mu_y[i] + C1) * (2.0 * cov + C2);
            let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + C1) * (var_x + var_y + C2);
            values.push((num / den).clamp(-1.0, 1.0));
        }
    }
    Ok(SsimMap {
        values,
        c,
        h,
        w,
        window,
        window_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor(seed: u64, c: usize, h: usize, w: usize, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(Shape::new(1, c, h, w), data).unwrap()
    }

    /// Direct 2-D implementation used as an independent oracle: explicit
    /// double loop over the window with the same reflection rule, no
    /// separability shortcut.
    fn naive_ssim(a: &Tensor, b: &Tensor, window: usize, std: f64) -> Vec<f64> {
        let shape = a.shape();
        let (c, h, w) = (shape.c, shape.h, shape.w);
        let x = rescale_unit(a.data());
        let y = rescale_unit(b.data());
        let r = (window / 2) as isize;
        let g1 = gaussian_kernel(window, std);
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let xs = &x[ch * h * w..(ch + 1) * h * w];
            let ys = &y[ch * h * w..(ch + 1) * h * w];
            for py in 0..h {
                for px in 0..w {
                    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let weight =
                                g1[(dy + r) as usize] * g1[(dx + r) as usize];
                            let sy = reflect(py as isize + dy, h);
                            let sx = reflect(px as isize + dx, w);
                            let xv = xs[sy * w + sx];
                            let yv = ys[sy * w + sx];
                            mx += weight * xv;
                            my += weight * yv;
                            mxx += weight * xv * xv;
                            myy += weight * yv * yv;
                            mxy += weight * xv * yv;
                        }
                    }
                    let (vx, vy, cov) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                    let num = (2.0 * mx * my + C1) * (2.0 * cov + C2);
                    let den = (mx * mx + my * my + C1) * (vx + vy + C2);
                    out.push((num / den).clamp(-1.0, 1.0));
                }
            }
        }
        out
    }

    #[test]
    fn matches_the_naive_two_dimensional_oracle() {
        let a = random_tensor(1, 2, 9, 13, -1.0, 1.0);
        let b = random_tensor(2, 2, 9, 13, -1.0, 1.0);
        for (window, std) in [(7usize, 1.5f64), (5, 0.8), (9, 2.5)] {
            let fast = ssim_map(&a, &b, window, std).unwrap();
            let slow = naive_ssim(&a, &b, window, std);
            for (f, s) in fast.values().iter().zip(&slow) {
                assert!((f - s).abs() < 1e-10, "window {window}: {f} vs {s}");
            }
        }
    }

    #[test]
    fn self_similarity_is_one_everywhere() {
        let a = random_tensor(3, 1, 16, 16, 0.0, 1.0);
        let map = ssim_map(&a, &a, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
        for v in map.values() {
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn anticorrelated_pattern_scores_negative_on_average() {
        // High-contrast checkerboard against its inversion.
        let (h, w) = (12usize, 12usize);
        let data: Vec<f32> = (0..h * w)
            .map(|i| (((i / w) + (i % w)) % 2) as f32)
            .collect();
        let inverted: Vec<f32> = data.iter().map(|v| 1.0 - v).collect();
        let a = Tensor::new(Shape::new(1, 1, h, w), data).unwrap();
        let b = Tensor::new(Shape::new(1, 1, h, w), inverted).unwrap();
        let map = ssim_map(&a, &b, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
        assert!(map.mean() < 0.0, "mean {}", map.mean());
    }

    #[test]
    fn constant_inputs_follow_the_luminance_closed_form() {
        let a = Tensor::new(Shape::new(1, 1, 12, 12), vec![0.25; 144]).unwrap();
        let b = Tensor::new(Shape::new(1, 1, 12, 12), vec![0.75; 144]).unwrap();
        let map = ssim_map(&a, &b, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
        let (mx, my) = (0.25f64, 0.75f64);
        let want = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
        for v in map.values() {
            assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        }
    }

    #[test]
    fn rescaling_makes_positive_affine_inputs_equivalent() {
        // Dyadic grid values keep every affine image exactly representable,
        // so the rescaled fields — and hence the maps — agree bit for bit.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..256)
            .map(|_| rng.random_range(0..32) as f32 / 64.0)
            .collect();
        let b = random_tensor(5, 1, 16, 16, 0.0, 1.0);
        let a = Tensor::new(Shape::new(1, 1, 16, 16), data.clone()).unwrap();
        let scaled = Tensor::new(
            Shape::new(1, 1, 16, 16),
            data.iter().map(|v| 2.0 * v + 0.25).collect(),
        )
        .unwrap();
        let m1 = ssim_map(&a, &b, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
        let m2 = ssim_map(&scaled, &b, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
        for (u, v) in m1.values().iter().zip(m2.values()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let a = random_tensor(6, 1, 8, 8, 0.0, 1.0);
        let b = random_tensor(7, 1, 8, 8, 0.0, 1.0);
        assert!(matches!(
            ssim_map(&a, &b, 4, 1.5),
            Err(SsimError::EvenWindow { window: 4 })
        ));
        assert!(matches!(
            ssim_map(&a, &b, 11, 1.5),
            Err(SsimError::WindowTooLarge { .. })
        ));
        assert!(matches!(
            ssim_map(&a, &b, 7, 0.0),
            Err(SsimError::BadStd { .. })
        ));
        let c = random_tensor(8, 1, 9, 9, 0.0, 1.0);
        assert!(matches!(
            ssim_map(&a, &c, 7, 1.5),
            Err(SsimError::ShapeMismatch { .. })
        ));
        let batch = Tensor::zeros(Shape::new(2, 1, 8, 8));
        assert!(matches!(
            ssim_map(&batch, &batch, 7, 1.5),
            Err(SsimError::SingleSampleRequired { n: 2 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn values_stay_in_the_unit_interval(seed in 0u64..5000) {
            let a = random_tensor(seed, 1, 11, 11, -3.0, 3.0);
            let b = random_tensor(seed.wrapping_add(1), 1, 11, 11, -3.0, 3.0);
            let map = ssim_map(&a, &b, DEFAULT_WINDOW, DEFAULT_WINDOW_STD).unwrap();
            for &v in map.values() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
