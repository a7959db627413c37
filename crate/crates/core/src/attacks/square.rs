use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_unit, invalid, AttackOutcome, IterationRecord, Result};
use crate::oracle::{query, Counted, Oracle, Phase};
use crate::tensorops::{clip_to_budget, GradientBuffer, ImageTensor, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SquareConfig {
    pub beta: f64,
    /// Initial fraction of the image area covered by each square.
    pub p_init: f64,
    pub max_iterations: usize,
    pub success_threshold: f64,
    pub seed: u64,
}

impl Default for SquareConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            p_init: 0.2,
            max_iterations: 10_000,
            success_threshold: 0.5,
            seed: 0,
        }
    }
}

impl SquareConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("beta", self.beta, true)?;
        check_unit("p_init", self.p_init, false)?;
        check_unit("success_threshold", self.success_threshold, true)?;
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Piecewise-constant halving schedule of the square area fraction, with the
/// iteration index rescaled to a 10 000-iteration horizon.
pub fn square_p_schedule(p_init: f64, iteration: usize, max_iterations: usize) -> f64 {
    let it = (iteration as f64 / max_iterations as f64 * 10_000.0) as usize;
    let div = match it {
        11..=50 => 2.0,
        51..=200 => 4.0,
        201..=500 => 8.0,
        501..=1000 => 16.0,
        1001..=2000 => 32.0,
        2001..=4000 => 64.0,
        4001..=6000 => 128.0,
        6001..=8000 => 256.0,
        8001..=10_000 => 512.0,
        _ => 1.0,
    };
    p_init / div
}

/// Side of the square covering fraction `p` of an `h x w` image, at least
/// one pixel and strictly smaller than the image when possible.
pub fn square_side(p: f64, height: usize, width: usize) -> usize {
    let s = (p * (height * width) as f64).sqrt().round() as usize;
    let upper = height.min(width).saturating_sub(1).max(1);
    s.clamp(1, upper)
}

/// Square Attack, L∞ variant: vertical-stripe initialization followed by
/// random search over squares whose values sit at `x ± beta` per channel.
pub fn square_attack_linf<O: Oracle>(
    oracle: O,
    original: &ImageTensor,
    target: &str,
    config: &SquareConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    let (h, w) = original.shape();
    let beta = config.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let counted = Counted::new(oracle);

    let mut init = GradientBuffer::zeros(h, w);
    for col in 0..w {
        for ch in 0..CHANNELS {
            let sign = if rng.gen::<bool>() { beta } else { -beta };
            for row in 0..h {
                init.set(row, col, ch, original.get(row, col, ch) + sign);
            }
        }
    }
    let mut best = clip_to_budget(&init, original, beta)?;
    let mut fitness = query(&counted, &best, target, Phase::Initial)?;
    let record = |t: usize, fitness: f64, accepted: bool, q: u64| IterationRecord {
        t,
        fitness,
        accepted,
        queries_so_far: q,
        queries_without_reuse: None,
        epsilon: None,
        tau: None,
        mask_area: None,
        mask_reset: false,
    };
    let mut fitness_trace = vec![(0, fitness)];
    let mut trace = vec![record(0, fitness, false, counted.total())];
    let mut t = 0;

    // The initialization itself consumes one query of the budget.
    while fitness <= config.success_threshold && t + 1 < config.max_iterations {
        let p = square_p_schedule(config.p_init, t, config.max_iterations);
        t += 1;
        let s = square_side(p, h, w);
        let r0 = rng.gen_range(0..=h - s);
        let c0 = rng.gen_range(0..=w - s);

        let mut candidate_raw = best.to_buffer();
        // Redraw until the window differs from the current best somewhere.
        for _ in 0..64 {
            let signs: [f64; CHANNELS] =
                std::array::from_fn(|_| if rng.gen::<bool>() { beta } else { -beta });
            let mut changed = false;
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    for (ch, sign) in signs.iter().enumerate() {
                        let v = (original.get(r, c, ch) + sign).clamp(0.0, 1.0);
                        if (v - best.get(r, c, ch)).abs() >= 1e-7 {
                            changed = true;
                        }
                        candidate_raw.set(r, c, ch, original.get(r, c, ch) + sign);
                    }
                }
            }
            if changed {
                break;
            }
        }
        let candidate = clip_to_budget(&candidate_raw, original, beta)?;
        let score = query(&counted, &candidate, target, Phase::FitnessCheck)?;
        let accepted = score > fitness;
        if accepted {
            fitness = score;
            best = candidate;
        }
        fitness_trace.push((t, fitness));
        trace.push(record(t, fitness, accepted, counted.total()));
    }

    Ok(AttackOutcome {
        attack: "square".to_string(),
        success: fitness > config.success_threshold,
        adversarial_image: best,
        final_fitness: fitness,
        queries: counted.ledger(),
        fitness_trace,
        iterations_used: t,
        trace,
    })
}
