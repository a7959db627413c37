//! Saliency heatmaps and the threshold masks that restrict where gradient
//! probes are sampled.
//!
//! A heatmap can come from a file produced by any external explainability
//! tool, or from black-box occlusion against a local surrogate oracle.

use std::path::Path;

use thiserror::Error;

use crate::oracle::{query, Oracle, OracleError, Phase};
use crate::tensorops::{ImageTensor, TensorError, CHANNELS};

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("heatmap is {actual:?}, image is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("cannot read heatmap {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("invalid occlusion parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Image(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SaliencyError>;

/// Per-pixel relevance in `[0, 1]`, min-max normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    /// Min-max normalizes `raw`. A constant input maps to 0.5 everywhere.
    pub fn normalized(height: usize, width: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != height * width || height == 0 || width == 0 {
            return Err(SaliencyError::DimensionMismatch {
                expected: (height, width),
                actual: (raw.len() / width.max(1), width),
            });
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(SaliencyError::InvalidParameters("non-finite heatmap value".into()));
        }
        let values = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; raw.len()]
        };
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Every pixel equally relevant.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.5; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Spatial sampling region; sampling itself happens per `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl SpatialMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    /// Whether flat image index `idx` (interleaved RGB layout) falls inside the mask.
    #[inline]
    pub fn contains_flat(&self, idx: usize) -> bool {
        self.cells[idx / CHANNELS]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }
}

/// Reads a grayscale PNG (bytes mapped to `byte / 255`) or a headerless
/// row-major CSV of reals, then min-max normalizes.
pub fn load_heatmap(path: impl AsRef<Path>, expected: (usize, usize)) -> Result<Heatmap> {
    let path = path.as_ref();
    let unreadable = |reason: String| SaliencyError::Unreadable {
        path: path.display().to_string(),
        reason,
    };
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let (h, w, raw) = if is_csv {
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        parse_csv_grid(&text).map_err(unreadable)?
    } else {
        let img = image::open(path).map_err(|e| unreadable(e.to_string()))?.to_luma8();
        let raw = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        (img.height() as usize, img.width() as usize, raw)
    };
    if (h, w) != expected {
        return Err(SaliencyError::DimensionMismatch {
            expected,
            actual: (h, w),
        });
    }
    Heatmap::normalized(h, w, raw)
}

fn parse_csv_grid(text: &str) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| cell.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", line_no + 1))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format!("line {}: expected {w} columns, got {}", line_no + 1, row.len()))
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| "empty file".to_string())?;
    Ok((height, width, values))
}

/// Top-left offsets of a sliding window of `patch` over `n` cells with
/// `stride`; the last window is aligned to the far edge so coverage is complete.
fn window_offsets(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = n - patch;
    let mut offs: Vec<usize> = (0..=last).step_by(stride).collect();
    if *offs.last().expect("non-empty") != last {
        offs.push(last);
    }
    offs
}

/// Black-box occlusion saliency against a local oracle.
///
/// Each `patch x patch` window is filled with mid-gray; the drop in the
/// target score is credited to every pixel in the window, averaged by how
/// many windows covered it, then min-max normalized.
pub fn occlusion_saliency<O: Oracle + ?Sized>(
    local: &O,
    image: &ImageTensor,
    target: &str,
    patch: usize,
    stride: usize,
) -> Result<Heatmap> {
    let (h, w) = image.shape();
    if patch == 0 || patch > h.min(w) {
        return Err(SaliencyError::InvalidParameters(format!(
            "patch {patch} must be in 1..={}",
            h.min(w)
        )));
    }
    if stride == 0 {
        return Err(SaliencyError::InvalidParameters("stride must be at least 1".into()));
    }
    let base = query(local, image, target, Phase::Other)?;
    let mut drop_sum = vec![0.0; h * w];
    let mut coverage = vec![0u32; h * w];
    let rows = window_offsets(h, patch, stride);
    let cols = window_offsets(w, patch, stride);
    let src = image.as_slice();
    for &r0 in &rows {
        for &c0 in &cols {
            let mut data = src.to_vec();
            for r in r0..r0 + patch {
                for c in c0..c0 + patch {
                    let base_idx = (r * w + c) * CHANNELS;
                    data[base_idx..base_idx + CHANNELS].fill(0.5);
                }
            }
            let occluded = ImageTensor::new(h, w, data)?;
            let drop = base - query(local, &occluded, target, Phase::Other)?;
            for r in r0..r0 + patch {
                for c in c0..c0 + patch {
                    drop_sum[r * w + c] += drop;
                    coverage[r * w + c] += 1;
                }
            }
        }
    }
    let raw = drop_sum
        .iter()
        .zip(&coverage)
        .map(|(s, &n)| s / f64::from(n))
        .collect();
    Heatmap::normalized(h, w, raw)
}

/// Number of local-oracle queries [`occlusion_saliency`] issues.
pub fn occlusion_query_count(height: usize, width: usize, patch: usize, stride: usize) -> usize {
    window_offsets(height, patch, stride).len() * window_offsets(width, patch, stride).len() + 1
}

/// `M[i,j] = H[i,j] >= tau`.
pub fn threshold_mask(heatmap: &Heatmap, tau: f64) -> SpatialMask {
    SpatialMask {
        height: heatmap.height,
        width: heatmap.width,
        cells: heatmap.values.iter().map(|&v| v >= tau).collect(),
    }
}

/// Whether the sampling mask must be reset to all-ones: the mask is smaller
/// than `min_area` pixels, or more than `sampled_fraction_cap` of its
/// maskable `(row, col, channel)` coordinates were already sampled since the
/// last reset.
pub fn mask_reset_check(
    mask: &SpatialMask,
    sampled_count: usize,
    min_area: usize,
    sampled_fraction_cap: f64,
) -> bool {
    let area = mask.area();
    area < min_area || sampled_count as f64 > sampled_fraction_cap * (CHANNELS * area) as f64
}
