//! Batched image tensors and the unbounded float buffers derived from them.
//!
//! Two kinds of data flow through the pipeline. Clean images carry a declared
//! value range and are checked against it ([`ImageTensor`]). Everything
//! produced by noising or by a predictor (latents, noise maps, predictions)
//! is unbounded, so it lives in a plain [`Tensor`] that only enforces shape
//! consistency and finiteness.

use std::fmt;

use thiserror::Error;

/// N x C x H x W layout, row-major with W fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one sample (C * H * W).
    pub fn per_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Declared interval for image data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// [0, 1]
    Unit,
    /// [-1, 1]
    Signed,
}

impl ValueRange {
    pub fn bounds(&self) -> (f32, f32) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }

    pub fn parse(s: &str) -> Option<ValueRange> {
        match s {
            "unit" => Some(ValueRange::Unit),
            "signed" => Some(ValueRange::Signed),
            _ => None,
        }
    }
}

impl fmt::Display for ValueRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRange::Unit => write!(f, "unit"),
            ValueRange::Signed => write!(f, "signed"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {0}x{1}x{2}x{3} has a zero-sized dimension")]
    ZeroDim(usize, usize, usize, usize),
    #[error("shape {shape} requires {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite element {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("element {value} at flat index {index} outside {range} range [{lo}, {hi}]")]
    OutOfRange {
        index: usize,
        value: f32,
        range: ValueRange,
        lo: f32,
        hi: f32,
    },
    #[error("resize target {h}x{w} must be positive")]
    BadResizeTarget { h: usize, w: usize },
    #[error("sample index {index} out of bounds for batch of {n}")]
    SampleOutOfBounds { index: usize, n: usize },
}

/// Unbounded N x C x H x W float buffer. All elements are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        check_shape(shape)?;
        if data.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { index, value });
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        // A zero fill trivially satisfies the finiteness invariant.
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copy out sample `index` as a batch of one.
    pub fn sample(&self, index: usize) -> Result<Tensor, TensorError> {
        if index >= self.shape.n {
            return Err(TensorError::SampleOutOfBounds {
                index,
                n: self.shape.n,
            });
        }
        let per = self.shape.per_sample();
        let start = index * per;
        Ok(Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start..start + per].to_vec(),
        })
    }
}

/// Image batch with a declared, enforced value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    tensor: Tensor,
    range: ValueRange,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f32>, range: ValueRange) -> Result<Self, TensorError> {
        let tensor = Tensor::new(shape, data)?;
        check_range(tensor.data(), range)?;
        Ok(ImageTensor { tensor, range })
    }

    pub fn from_tensor(tensor: Tensor, range: ValueRange) -> Result<Self, TensorError> {
        check_range(tensor.data(), range)?;
        Ok(ImageTensor { tensor, range })
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn sample(&self, index: usize) -> Result<ImageTensor, TensorError> {
        Ok(ImageTensor {
            tensor: self.tensor.sample(index)?,
            range: self.range,
        })
    }

    /// Affine map onto `target`. Mapping a tensor onto its own range is the
    /// identity, so the operation is idempotent.
    pub fn normalize(&self, target: ValueRange) -> ImageTensor {
        if self.range == target {
            return self.clone();
        }
        let data: Vec<f32> = match (self.range, target) {
            (ValueRange::Unit, ValueRange::Signed) => {
                self.data().iter().map(|&v| 2.0 * v - 1.0).collect()
            }
            (ValueRange::Signed, ValueRange::Unit) => {
                self.data().iter().map(|&v| (v + 1.0) / 2.0).collect()
            }
            _ => unreachable!("equal ranges handled above"),
        };
        // Endpoints map to endpoints exactly and interior points cannot round
        // past a representable bound, so the range check cannot fire.
        ImageTensor::new(self.shape(), data, target).expect("affine range map stays in bounds")
    }

    /// Bilinear resample to `out_h` x `out_w` using half-pixel sample centers
    /// (align-corners = false) with edge clamping at the borders.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<ImageTensor, TensorError> {
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::BadResizeTarget { h: out_h, w: out_w });
        }
        let Shape { n, c, h, w } = self.shape();
        let src = self.data();
        let scale_y = h as f64 / out_h as f64;
        let scale_x = w as f64 / out_w as f64;

        // Precompute per-axis source taps; interpolation weights are convex so
        // outputs stay inside the input value hull.
        let taps_y = axis_taps(h, out_h, scale_y);
        let taps_x = axis_taps(w, out_w, scale_x);

        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for img in 0..n * c {
            let plane = &src[img * h * w..(img + 1) * h * w];
            for &(y0, y1, fy) in &taps_y {
                for &(x0, x1, fx) in &taps_x {
                    let p00 = plane[y0 * w + x0] as f64;
                    let p01 = plane[y0 * w + x1] as f64;
                    let p10 = plane[y1 * w + x0] as f64;
                    let p11 = plane[y1 * w + x1] as f64;
                    let top = p00 * (1.0 - fx) + p01 * fx;
                    let bot = p10 * (1.0 - fx) + p11 * fx;
                    out.push((top * (1.0 - fy) + bot * fy) as f32);
                }
            }
        }
        ImageTensor::new(Shape::new(n, c, out_h, out_w), out, self.range)
    }
}

/// For each output index along one axis: the two source taps and the blend
/// weight of the second tap.
fn axis_taps(in_len: usize, out_len: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let frac = src - floor;
            let lo = floor as isize;
            let clamp = |v: isize| v.clamp(0, in_len as isize - 1) as usize;
            (clamp(lo), clamp(lo + 1), frac)
        })
        .collect()
}

fn check_shape(shape: Shape) -> Result<(), TensorError> {
    if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
        return Err(TensorError::ZeroDim(shape.n, shape.c, shape.h, shape.w));
    }
    Ok(())
}

fn check_range(data: &[f32], range: ValueRange) -> Result<(), TensorError> {
    let (lo, hi) = range.bounds();
    for (index, &value) in data.iter().enumerate() {
        if value < lo || value > hi {
            return Err(TensorError::OutOfRange {
                index,
                value,
                range,
                lo,
                hi,
            });
        }
    }
    Ok(())
}
