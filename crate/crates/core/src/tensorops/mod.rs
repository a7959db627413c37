//! Dense image and gradient arrays, plus the numeric primitives every attack
//! and evaluator is built on: Gaussian blurring, budget clipping, the
//! orthonormal 2-D DCT and a JPEG round-trip.
//!
//! Images are stored row-major with interleaved channels, i.e. the value at
//! `(row, col, channel)` lives at `(row * width + col) * 3 + channel`.

mod blur;
mod dct;
mod io;
mod jpeg;

pub use blur::{gaussian_blur, gaussian_kernel, Kernel2D};
pub use dct::{dct2, dct_matrix, idct2};
pub use io::{encode_png, read_image, read_png, write_jpeg, write_png};
pub use jpeg::{jpeg_roundtrip, MAX_QUALITY, MIN_QUALITY};

use thiserror::Error;

/// Number of colour channels carried by every [`ImageTensor`].
pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("image dimensions must be at least 1x1, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} values for the given shape, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("kernel size must be odd and positive, got {0}")]
    InvalidKernelSize(usize),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("budget must lie in [0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("JPEG quality must be in 1..=100, got {0}")]
    InvalidQuality(u8),
    #[error("JPEG encoding failed: {0}")]
    Encode(String),
    #[error("image decoding failed: {0}")]
    Decode(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn check_shape(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(TensorError::EmptyShape { height, width });
    }
    Ok(())
}

/// An RGB image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TensorError::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Image with every value set to `value`, which is clamped into `[0, 1]`.
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        check_shape(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width * CHANNELS],
        })
    }

    /// Builds an image from a per-coordinate function; results are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_shape(height, width)?;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..CHANNELS {
                    data.push(f(row, col, ch).clamp(0.0, 1.0));
                }
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from unbounded values by clamping each into `[0, 1]`.
    pub fn from_clamped(buffer: &GradientBuffer) -> Self {
        Self {
            height: buffer.height,
            width: buffer.width,
            data: buffer.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        check_shape(height, width)?;
        let expected = height * width * CHANNELS;
        if bytes.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }

    /// Quantizes to the 0..=255 byte range (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * CHANNELS + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    /// Returns a copy with the value at flat index `idx` moved by `delta`
    /// and clamped back into `[0, 1]`.
    pub fn with_offset(&self, idx: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.data[idx] = (out.data[idx] + delta).clamp(0.0, 1.0);
        out
    }

    pub fn to_buffer(&self) -> GradientBuffer {
        GradientBuffer {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Largest absolute per-value difference.
    pub fn linf_distance(&self, other: &Self) -> Result<f64> {
        ensure_same_shape(self.shape(), other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Luma plane, `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_grayscale(&self) -> Plane {
        let data = self
            .data
            .chunks_exact(CHANNELS)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Extracts one channel as a plane.
    pub fn channel(&self, ch: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(ch).step_by(CHANNELS).copied().collect(),
        }
    }
}

/// Image-shaped array of unbounded reals. Holds gradient estimates and
/// unclipped attack candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn zeros_like(image: &ImageTensor) -> Self {
        Self::zeros(image.height, image.width)
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * CHANNELS + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let idx = self.index(row, col, ch);
        self.data[idx] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &GradientBuffer, scale: f64) -> Result<GradientBuffer> {
        ensure_same_shape(self.shape(), other.shape())?;
        Ok(GradientBuffer {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + scale * b)
                .collect(),
        })
    }
}

/// Single-channel `height x width` array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        if data.len() != height * width {
            return Err(TensorError::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }
}

pub(crate) fn ensure_same_shape(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(TensorError::ShapeMismatch { left, right });
    }
    Ok(())
}

/// Projects `candidate` onto the feasible set of an L∞ attack: every value
/// ends up within `beta` of `original` and inside `[0, 1]`.
pub fn clip_to_budget(
    candidate: &GradientBuffer,
    original: &ImageTensor,
    beta: f64,
) -> Result<ImageTensor> {
    ensure_same_shape(candidate.shape(), original.shape())?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(TensorError::InvalidBudget(beta));
    }
    let data = candidate
        .data
        .iter()
        .zip(&original.data)
        .map(|(&a, &x)| {
            let (lo, hi) = budget_interval(x, beta);
            a.clamp(lo, hi)
        })
        .collect();
    Ok(ImageTensor {
        height: original.height,
        width: original.width,
        data,
    })
}

/// Feasible interval for one value. The bounds are nudged inward by an ulp
/// where rounding of `x ± beta` would otherwise leave them a hair outside the
/// budget, so `|out - x| <= beta` holds exactly in floating point.
fn budget_interval(x: f64, beta: f64) -> (f64, f64) {
    let mut lo = (x - beta).max(0.0);
    while x - lo > beta {
        lo = lo.next_up();
    }
    let mut hi = (x + beta).min(1.0);
    while hi - x > beta {
        hi = hi.next_down();
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ImageTensor {
        ImageTensor::filled(1, 1, v).unwrap()
    }

    fn raw(v: f64) -> GradientBuffer {
        GradientBuffer::new(1, 1, vec![v; 3]).unwrap()
    }

    #[test]
    fn clip_upper_bound() {
        let out = clip_to_budget(&raw(0.7), &single(0.5), 0.1).unwrap();
        assert!((out.get(0, 0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn clip_unit_interval_dominates() {
        let out = clip_to_budget(&raw(-0.2), &single(0.05), 0.1).unwrap();
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn clip_identity() {
        let x = ImageTensor::from_fn(3, 4, |r, c, ch| (r * 7 + c * 3 + ch) as f64 / 40.0).unwrap();
        for beta in [0.0, 0.05, 1.0] {
            assert_eq!(clip_to_budget(&x.to_buffer(), &x, beta).unwrap(), x);
        }
    }

    #[test]
    fn clip_rejects_shape_mismatch() {
        let x = ImageTensor::filled(2, 2, 0.5).unwrap();
        let err = clip_to_budget(&GradientBuffer::zeros(2, 3), &x, 0.1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn new_rejects_out_of_range() {
        let err = ImageTensor::new(1, 1, vec![0.0, 1.5, 0.2]).unwrap_err();
        assert!(matches!(err, TensorError::OutOfRange { index: 1, .. }));
        assert!(ImageTensor::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn grayscale_weights() {
        let img = ImageTensor::new(1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.to_grayscale().data[0] - 0.299).abs() < 1e-12);
        let white = ImageTensor::filled(2, 2, 1.0).unwrap();
        assert!(white.to_grayscale().data.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rgb8_roundtrip_is_exact_on_byte_grid() {
        let bytes: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let img = ImageTensor::from_rgb8(4, 4, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }

    proptest::proptest! {
        #[test]
        fn clip_satisfies_both_constraints(
            cand in proptest::collection::vec(-2.0f64..3.0, 12),
            orig in proptest::collection::vec(0.0f64..=1.0, 12),
            beta in 0.0f64..=1.0,
        ) {
            let c = GradientBuffer::new(2, 2, cand).unwrap();
            let x = ImageTensor::new(2, 2, orig).unwrap();
            let out = clip_to_budget(&c, &x, beta).unwrap();
            for (o, xv) in out.as_slice().iter().zip(x.as_slice()) {
                proptest::prop_assert!(*o >= 0.0 && *o <= 1.0);
                proptest::prop_assert!((o - xv).abs() <= beta);
            }
        }
    }
}
