use serde::{Deserialize, Serialize};

use crate::tensorops::{dct2, ImageTensor};

/// Identifies how features are computed; stored with feature files and
/// detector models so only like-for-like artifacts are compared.
pub const FEATURE_RECIPE: &str = "grayscale/dct2-orthonormal/log1p-abs/radial-band-mean/v1";

pub const DEFAULT_BANDS: usize = 64;

/// Radial band averages of the log-magnitude DCT spectrum of the luma plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeatureVector(pub Vec<f64>);

impl SpectralFeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Band of coefficient `(i, j)` for a `h x w` spectrum split into `bands`
/// rings of the normalized radius `sqrt((i/h)² + (j/w)²) / sqrt(2)`.
pub fn band_index(i: usize, j: usize, h: usize, w: usize, bands: usize) -> usize {
    let (fi, fj) = (i as f64 / h as f64, j as f64 / w as f64);
    let r = (fi * fi + fj * fj).sqrt() / std::f64::consts::SQRT_2;
    ((r * bands as f64).floor() as usize).min(bands - 1)
}

/// Unstandardized features; empty bands (possible on tiny images) read 0.
/// Panics if `bands < 2`.
pub fn spectral_features(image: &ImageTensor, bands: usize) -> SpectralFeatureVector {
    assert!(bands >= 2, "need at least 2 bands");
    let gray = image.to_grayscale();
    let spec = dct2(&gray);
    let (h, w) = (spec.height, spec.width);
    let mut sum = vec![0.0; bands];
    let mut count = vec![0usize; bands];
    for i in 0..h {
        for j in 0..w {
            let b = band_index(i, j, h, w, bands);
            sum[b] += spec.get(i, j).abs().ln_1p();
            count[b] += 1;
        }
    }
    SpectralFeatureVector(
        sum.iter()
            .zip(&count)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect(),
    )
}

/// Per-feature affine standardization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows`. Constant features get scale 1.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = s.sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Self { mean, scale }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_energy_only_in_band_zero() {
        let f = spectral_features(&ImageTensor::filled(16, 16, 0.6).unwrap(), 8);
        assert!(f.0[0] > 0.0);
        assert!(f.0[1..].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn nyquist_checkerboard_peaks_in_the_top_band() {
        let img = ImageTensor::from_fn(16, 16, |r, c, _| if (r + c) % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
        let bands = 8;
        let f = spectral_features(&img, bands);
        // Alternating signs put nearly all AC energy in the highest-index coefficients.
        assert_eq!(band_index(15, 15, 16, 16, bands), 7);
        let mid = (2..6).map(|b| f.0[b]).fold(f64::NEG_INFINITY, f64::max);
        assert!(f.0[bands - 1] > mid);
    }

    #[test]
    fn brightness_inversion_only_moves_the_dc_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImageTensor::from_fn(12, 12, |_, _, _| rng.gen()).unwrap();
        let inv = ImageTensor::from_fn(12, 12, |r, c, ch| 1.0 - img.get(r, c, ch)).unwrap();
        let bands = 6;
        let (a, b) = (spectral_features(&img, bands), spectral_features(&inv, bands));
        // Inversion negates every AC coefficient, which |.| ignores.
        for k in 1..bands {
            assert!((a.0[k] - b.0[k]).abs() < 1e-9, "band {k}");
        }
        assert!((a.0[0] - b.0[0]).abs() > 1e-6);
    }

    #[test]
    fn band_partition_does_not_depend_on_content() {
        for (h, w) in [(8, 8), (16, 12), (5, 9)] {
            for i in 0..h {
                for j in 0..w {
                    assert!(band_index(i, j, h, w, 64) < 64);
                }
            }
        }
        assert_eq!(band_index(0, 0, 16, 16, 64), 0);
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Standardizer::fit(&refs);
        let t: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r)).collect();
        let m: f64 = t.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let v: f64 = t.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert!(t.iter().all(|r| r[1] == 0.0));
    }
}
