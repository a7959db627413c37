use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_unit, invalid, AttackOutcome, IterationRecord, Result};
use crate::oracle::{query, Counted, Oracle, Phase};
use crate::tensorops::{clip_to_budget, dct_matrix, ImageTensor, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimbaConfig {
    pub step: f64,
    pub beta: f64,
    pub max_iterations: usize,
    pub success_threshold: f64,
    pub seed: u64,
}

impl Default for SimbaConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            beta: 0.1,
            max_iterations: 100_000,
            success_threshold: 0.5,
            seed: 0,
        }
    }
}

impl SimbaConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("beta", self.beta, true)?;
        check_unit("success_threshold", self.success_threshold, true)?;
        if !(self.step > 0.0 && self.step <= self.beta) {
            return Err(invalid(format!(
                "step {} must be positive and at most beta {}",
                self.step, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimbaDctConfig {
    #[serde(flatten)]
    pub base: SimbaConfig,
    /// Fraction of the lowest frequencies searched along each axis.
    pub freq_fraction: f64,
}

impl Default for SimbaDctConfig {
    fn default() -> Self {
        Self {
            base: SimbaConfig::default(),
            freq_fraction: 0.5,
        }
    }
}

/// A search direction in image layout: sparse `(flat index, weight)` pairs.
type Direction = Vec<(usize, f64)>;

/// SimBA over the pixel basis: try `+step` then `-step` along a random,
/// not-yet-tried coordinate and keep whichever raises the target score.
pub fn simba_attack<O: Oracle>(
    oracle: O,
    original: &ImageTensor,
    target: &str,
    config: &SimbaConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..original.len()).collect();
    order.shuffle(&mut rng);
    let directions = order.into_iter().map(|i| vec![(i, 1.0)]);
    run("simba", oracle, original, target, config, directions)
}

/// SimBA over orthonormal 2-D DCT basis functions restricted to the lowest
/// `freq_fraction` of frequencies per axis, one channel at a time.
pub fn simba_dct_attack<O: Oracle>(
    oracle: O,
    original: &ImageTensor,
    target: &str,
    config: &SimbaDctConfig,
) -> Result<AttackOutcome> {
    config.base.validate()?;
    check_unit("freq_fraction", config.freq_fraction, false)?;
    let (h, w) = original.shape();
    let fh = ((h as f64 * config.freq_fraction).ceil() as usize).clamp(1, h);
    let fw = ((w as f64 * config.freq_fraction).ceil() as usize).clamp(1, w);
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);

    let mut rng = ChaCha8Rng::seed_from_u64(config.base.seed);
    let mut order: Vec<(usize, usize, usize)> = (0..fh)
        .flat_map(|u| (0..fw).flat_map(move |v| (0..CHANNELS).map(move |c| (u, v, c))))
        .collect();
    order.shuffle(&mut rng);
    let directions = order.into_iter().map(move |(u, v, c)| dct_direction(&dh, &dw, h, w, u, v, c));
    run("simba-dct", oracle, original, target, &config.base, directions)
}

/// Pixel-space image of the unit DCT coefficient `(u, v)` in channel `c`,
/// i.e. `idct2(e_uv)`, as the outer product of two 1-D basis vectors.
pub(crate) fn dct_direction(dh: &[f64], dw: &[f64], h: usize, w: usize, u: usize, v: usize, c: usize) -> Direction {
    let mut dir = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            dir.push(((r * w + col) * CHANNELS + c, dh[u * h + r] * dw[v * w + col]));
        }
    }
    dir
}

fn run<O: Oracle>(
    name: &str,
    oracle: O,
    original: &ImageTensor,
    target: &str,
    config: &SimbaConfig,
    directions: impl Iterator<Item = Direction>,
) -> Result<AttackOutcome> {
    let counted = Counted::new(oracle);
    let mut current = original.clone();
    let mut fitness = query(&counted, original, target, Phase::Initial)?;
    let mut fitness_trace = vec![(0, fitness)];
    let mut trace = vec![IterationRecord {
        t: 0,
        fitness,
        accepted: false,
        queries_so_far: counted.total(),
        queries_without_reuse: None,
        epsilon: None,
        tau: None,
        mask_area: None,
        mask_reset: false,
    }];
    let mut t = 0;

    if fitness <= config.success_threshold {
        for dir in directions.take(config.max_iterations) {
            t += 1;
            let mut accepted = false;
            for sign in [1.0, -1.0] {
                let mut step = current.to_buffer();
                let buf = step.as_mut_slice();
                for &(idx, wgt) in &dir {
                    buf[idx] += sign * config.step * wgt;
                }
                let candidate = clip_to_budget(&step, original, config.beta)?;
                let score = query(&counted, &candidate, target, Phase::GradientProbe)?;
                if score > fitness {
                    fitness = score;
                    current = candidate;
                    accepted = true;
                    break;
                }
            }
            fitness_trace.push((t, fitness));
            trace.push(IterationRecord {
                t,
                fitness,
                accepted,
                queries_so_far: counted.total(),
                queries_without_reuse: None,
                epsilon: None,
                tau: None,
                mask_area: None,
                mask_reset: false,
            });
            if fitness > config.success_threshold {
                break;
            }
        }
    }

    Ok(AttackOutcome {
        attack: name.to_string(),
        success: fitness > config.success_threshold,
        adversarial_image: current,
        final_fitness: fitness,
        queries: counted.ledger(),
        fitness_trace,
        iterations_used: t,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorops::{idct2, Plane};

    #[test]
    fn directions_are_inverse_transforms_of_unit_coefficients() {
        let (h, w) = (5, 7);
        let (dh, dw) = (dct_matrix(h), dct_matrix(w));
        for (u, v) in [(0, 0), (1, 3), (4, 6)] {
            let mut coeffs = Plane::zeros(h, w);
            coeffs.set(u, v, 1.0);
            let expected = idct2(&coeffs);
            let dir = dct_direction(&dh, &dw, h, w, u, v, 2);
            for (k, &(idx, wgt)) in dir.iter().enumerate() {
                assert_eq!(idx, k * CHANNELS + 2);
                assert!((wgt - expected.data[k]).abs() < 1e-12);
            }
            let norm: f64 = dir.iter().map(|(_, x)| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_must_not_exceed_budget() {
        let cfg = SimbaConfig {
            step: 0.2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
