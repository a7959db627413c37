use super::{GradientBuffer, Result, TensorError, CHANNELS};

/// Square, odd-sized, unit-sum convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Normalized `k x k` Gaussian kernel centred on `((k-1)/2, (k-1)/2)`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Kernel2D> {
    if k == 0 || k % 2 == 0 {
        return Err(TensorError::InvalidKernelSize(k));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TensorError::InvalidSigma(sigma));
    }
    let c = (k / 2) as f64;
    let two_var = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            weights.push((-(di * di + dj * dj) / two_var).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Kernel2D { size: k, weights })
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub(crate) fn reflect(idx: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = idx.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Per-channel 2-D convolution with reflect padding. Output shape equals input shape.
pub fn gaussian_blur(buffer: &GradientBuffer, kernel: &Kernel2D) -> GradientBuffer {
    let (h, w) = buffer.shape();
    let r = kernel.radius() as isize;
    let src = buffer.as_slice();
    let mut out = GradientBuffer::zeros(h, w);
    let dst = out.as_mut_slice();
    for row in 0..h {
        for col in 0..w {
            let mut acc = [0.0f64; CHANNELS];
            for ki in 0..kernel.size {
                let rr = reflect(row as isize + ki as isize - r, h);
                for kj in 0..kernel.size {
                    let cc = reflect(col as isize + kj as isize - r, w);
                    let wgt = kernel.weights[ki * kernel.size + kj];
                    let base = (rr * w + cc) * CHANNELS;
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += wgt * src[base + ch];
                    }
                }
            }
            let base = (row * w + col) * CHANNELS;
            dst[base..base + CHANNELS].copy_from_slice(&acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference convolution: materialize an explicitly mirrored padded copy,
    /// then evaluate the textbook double sum.
    fn naive_blur(buf: &GradientBuffer, k: &Kernel2D) -> GradientBuffer {
        let (h, w) = buf.shape();
        let r = k.radius();
        let ph = h + 2 * r;
        let pw = w + 2 * r;
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i;
                } else if i >= n {
                    i = 2 * (n - 1) - i;
                } else {
                    return i as usize;
                }
                if n == 1 {
                    return 0;
                }
            }
        };
        let mut padded = vec![0.0; ph * pw * 3];
        for i in 0..ph {
            for j in 0..pw {
                let si = mirror(i as isize - r as isize, h as isize);
                let sj = mirror(j as isize - r as isize, w as isize);
                for c in 0..3 {
                    padded[(i * pw + j) * 3 + c] = buf.get(si, sj, c);
                }
            }
        }
        let mut out = GradientBuffer::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                for c in 0..3 {
                    let mut s = 0.0;
                    for a in 0..k.size() {
                        for b in 0..k.size() {
                            s += k.weight(a, b) * padded[((i + a) * pw + (j + b)) * 3 + c];
                        }
                    }
                    out.set(i, j, c, s);
                }
            }
        }
        out
    }

    fn random_buffer(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GradientBuffer {
        let data = (0..h * w * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GradientBuffer::new(h, w, data).unwrap()
    }

    #[test]
    fn single_cell_kernel() {
        let k = gaussian_kernel(1, 1.0).unwrap();
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn kernel_matches_closed_form() {
        let k = gaussian_kernel(3, 0.8).unwrap();
        let raw: Vec<f64> = (0..9)
            .map(|n| {
                let (i, j) = ((n / 3) as f64 - 1.0, (n % 3) as f64 - 1.0);
                (-(i * i + j * j) / (2.0 * 0.64)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for (got, want) in k.weights().iter().zip(&raw) {
            assert!((got - want / total).abs() < 1e-15);
        }
        // exp(0) / (1 + 4 e^{-1/1.28} + 4 e^{-2/1.28})
        assert!((k.weight(1, 1) - 0.272_495_973_510_728).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(gaussian_kernel(4, 1.0), Err(TensorError::InvalidKernelSize(4))));
        assert!(matches!(gaussian_kernel(0, 1.0), Err(TensorError::InvalidKernelSize(0))));
        assert!(matches!(gaussian_kernel(3, 0.0), Err(TensorError::InvalidSigma(_))));
        assert!(matches!(gaussian_kernel(3, -1.0), Err(TensorError::InvalidSigma(_))));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-3, 2), 1);
    }

    #[test]
    fn constant_buffer_is_preserved() {
        let buf = GradientBuffer::new(5, 6, vec![0.37; 90]).unwrap();
        let out = gaussian_blur(&buf, &gaussian_kernel(5, 1.3).unwrap());
        assert!(out.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut buf = GradientBuffer::zeros(7, 7);
        buf.set(3, 4, 1, 1.0);
        let k = gaussian_kernel(3, 1.0).unwrap();
        let out = gaussian_blur(&buf, &k);
        for a in 0..3 {
            for b in 0..3 {
                assert!((out.get(2 + a, 3 + b, 1) - k.weight(a, b)).abs() < 1e-15);
            }
        }
        assert_eq!(out.get(3, 4, 0), 0.0);
    }

    #[test]
    fn matches_naive_convolution_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let buf = random_buffer(&mut rng, 8, 8);
        for (k, sigma) in [(3, 1.0), (5, 0.7), (7, 2.0)] {
            let kern = gaussian_kernel(k, sigma).unwrap();
            let fast = gaussian_blur(&buf, &kern);
            let slow = naive_blur(&buf, &kern);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_sums_to_one(half in 0usize..6, sigma in 0.05f64..10.0) {
            let k = gaussian_kernel(2 * half + 1, sigma).unwrap();
            let s: f64 = k.weights().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            let n = k.size();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(k.weight(i, j), k.weight(n - 1 - i, j));
                    prop_assert_eq!(k.weight(i, j), k.weight(i, n - 1 - j));
                }
            }
        }

        #[test]
        fn blur_matches_brute_force(h in 1usize..=16, w in 1usize..=16, half in 0usize..4,
                                    sigma in 0.3f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let buf = random_buffer(&mut rng, h, w);
            let kern = gaussian_kernel(2 * half + 1, sigma).unwrap();
            let fast = gaussian_blur(&buf, &kern);
            let slow = naive_blur(&buf, &kern);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn blur_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_buffer(&mut rng, 6, 9);
            let v = random_buffer(&mut rng, 6, 9);
            let kern = gaussian_kernel(3, 1.0).unwrap();
            let combo = GradientBuffer::zeros(6, 9).add_scaled(&u, a).unwrap().add_scaled(&v, b).unwrap();
            let lhs = gaussian_blur(&combo, &kern);
            let rhs = GradientBuffer::zeros(6, 9)
                .add_scaled(&gaussian_blur(&u, &kern), a).unwrap()
                .add_scaled(&gaussian_blur(&v, &kern), b).unwrap();
            for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
