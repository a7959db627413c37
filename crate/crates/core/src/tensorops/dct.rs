use std::f64::consts::PI;

use super::Plane;

/// Orthonormal type-II DCT matrix of order `n`; row `k` is the `k`-th basis
/// vector, so `dct(x) = D x` and `idct(y) = Dᵀ y`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n * n);
    let nf = n as f64;
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            m.push(alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos());
        }
    }
    m
}

// out = A · X · Bᵀ, or Aᵀ · X · B when `inverse`.
fn separable(plane: &Plane, inverse: bool) -> Plane {
    let (h, w) = (plane.height, plane.width);
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);
    let at = |m: &[f64], n: usize, r: usize, c: usize| {
        if inverse {
            m[c * n + r]
        } else {
            m[r * n + c]
        }
    };

    // Transform along rows (width axis) first.
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = &plane.data[r * w..(r + 1) * w];
        for k in 0..w {
            tmp[r * w + k] = (0..w).map(|i| at(&dw, w, k, i) * row[i]).sum();
        }
    }
    let mut out = Plane::zeros(h, w);
    for k in 0..h {
        for c in 0..w {
            out.data[k * w + c] = (0..h).map(|i| at(&dh, h, k, i) * tmp[i * w + c]).sum();
        }
    }
    out
}

/// Orthonormal 2-D type-II DCT.
pub fn dct2(plane: &Plane) -> Plane {
    separable(plane, false)
}

/// Inverse of [`dct2`] (the orthonormal type-III transform).
pub fn idct2(coeffs: &Plane) -> Plane {
    separable(coeffs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(seed: u64, h: usize, w: usize) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // Textbook quadruple sum with explicit normalization factors.
    fn naive_dct2(p: &Plane) -> Plane {
        let (h, w) = (p.height, p.width);
        let mut out = Plane::zeros(h, w);
        for u in 0..h {
            for v in 0..w {
                let cu = if u == 0 { (1.0 / h as f64).sqrt() } else { (2.0 / h as f64).sqrt() };
                let cv = if v == 0 { (1.0 / w as f64).sqrt() } else { (2.0 / w as f64).sqrt() };
                let mut s = 0.0;
                for x in 0..h {
                    for y in 0..w {
                        s += p.get(x, y)
                            * ((2 * x + 1) as f64 * u as f64 * PI / (2 * h) as f64).cos()
                            * ((2 * y + 1) as f64 * v as f64 * PI / (2 * w) as f64).cos();
                    }
                }
                out.set(u, v, cu * cv * s);
            }
        }
        out
    }

    #[test]
    fn constant_plane_is_dc_only() {
        let (h, w, c) = (4, 6, 0.3);
        let out = dct2(&Plane::new(h, w, vec![c; h * w]).unwrap());
        assert!((out.get(0, 0) - c * ((h * w) as f64).sqrt()).abs() < 1e-12);
        assert!(out.data[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn roundtrip_random_8x8() {
        let p = random_plane(3, 8, 8);
        let back = idct2(&dct2(&p));
        for (a, b) in p.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_naive_on_random_4x4() {
        let p = random_plane(11, 4, 4);
        let fast = dct2(&p);
        let slow = naive_dct2(&p);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_naive_on_non_square() {
        let p = random_plane(12, 3, 7);
        let fast = dct2(&p);
        let slow = naive_dct2(&p);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sample() {
        let p = Plane::new(1, 1, vec![0.25]).unwrap();
        assert!((dct2(&p).data[0] - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn parseval_and_inner_products(h in 1usize..12, w in 1usize..12, s1 in any::<u64>(), s2 in any::<u64>()) {
            let u = random_plane(s1, h, w);
            let v = random_plane(s2, h, w);
            let (du, dv) = (dct2(&u), dct2(&v));
            let dot = |a: &Plane, b: &Plane| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
            prop_assert!((dot(&du, &dv) - dot(&u, &v)).abs() < 1e-6);
            prop_assert!((dot(&du, &du) - dot(&u, &u)).abs() < 1e-6);
            let back = idct2(&du);
            for (a, b) in u.data.iter().zip(&back.data) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
