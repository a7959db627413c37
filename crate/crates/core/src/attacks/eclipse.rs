use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_unit, invalid, AttackOutcome, IterationRecord, Result};
use crate::oracle::{query, Cached, ConfidenceResult, Counted, Oracle, Phase};
use crate::saliency::{mask_reset_check, occlusion_saliency, threshold_mask, Heatmap, SpatialMask};
use crate::tensorops::{clip_to_budget, gaussian_blur, gaussian_kernel, GradientBuffer, ImageTensor, CHANNELS};

/// Parameters of an ECLIPSE run. Defaults follow the published comparison
/// settings (step 0.1, budget 0.1, 3x3 blur, 1000 iterations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EclipseConfig {
    /// L∞ budget.
    pub beta: f64,
    pub max_iterations: usize,
    /// Initial step multiplier ε₀.
    pub epsilon0: f64,
    /// Coordinates probed per iteration.
    pub sample_size: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    /// Finite-difference probe added to one `(row, col, channel)` value.
    pub probe_magnitude: f64,
    /// Minimum mask area in pixels; `None` means 1% of the image area.
    pub min_area: Option<usize>,
    pub success_threshold: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub tau_step: f64,
    pub tau_cap: f64,
    pub sampled_fraction_cap: f64,
    pub seed: u64,
    /// Blur the gradient buffer before stepping. Off = "no Gaussian blur" ablation.
    pub blur: bool,
    /// Restrict sampling to the heatmap mask. Off = "no local surrogate" ablation.
    pub use_mask: bool,
    /// Reuse the stored score of the current best instead of re-querying it.
    pub reuse_baseline: bool,
}

impl Default for EclipseConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            max_iterations: 1000,
            epsilon0: 0.1,
            sample_size: 64,
            kernel_size: 3,
            sigma: 1.0,
            probe_magnitude: 0.1,
            min_area: None,
            success_threshold: 0.5,
            epsilon_decay: 0.95,
            epsilon_floor: 0.02,
            tau_step: 0.01,
            tau_cap: 0.5,
            sampled_fraction_cap: 0.75,
            seed: 0,
            blur: true,
            use_mask: true,
            reuse_baseline: true,
        }
    }
}

impl EclipseConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("beta", self.beta, true)?;
        check_unit("probe_magnitude", self.probe_magnitude, false)?;
        check_unit("success_threshold", self.success_threshold, true)?;
        check_unit("epsilon_decay", self.epsilon_decay, false)?;
        check_unit("tau_cap", self.tau_cap, true)?;
        check_unit("sampled_fraction_cap", self.sampled_fraction_cap, false)?;
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return Err(invalid(format!("epsilon0 = {} must be positive", self.epsilon0)));
        }
        if !(self.epsilon_floor >= 0.0) {
            return Err(invalid("epsilon_floor must be non-negative"));
        }
        if !(self.tau_step >= 0.0) {
            return Err(invalid("tau_step must be non-negative"));
        }
        if self.sample_size == 0 {
            return Err(invalid("sample_size must be at least 1"));
        }
        gaussian_kernel(self.kernel_size, self.sigma).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn resolved_min_area(&self, height: usize, width: usize) -> usize {
        self.min_area.unwrap_or_else(|| (height * width).div_ceil(100).max(1))
    }
}

/// Where the sampling heatmap comes from.
pub enum HeatmapSource<'a> {
    Precomputed(Heatmap),
    /// Occlusion saliency against a local surrogate. Its queries are not
    /// charged to the victim's ledger.
    Occlusion {
        local: &'a dyn Oracle,
        patch: usize,
        stride: usize,
    },
    /// Every pixel equally relevant.
    Uniform,
}

impl HeatmapSource<'_> {
    fn resolve(&self, image: &ImageTensor, target: &str) -> Result<Heatmap> {
        let (h, w) = image.shape();
        Ok(match self {
            HeatmapSource::Precomputed(hm) => {
                if hm.shape() != (h, w) {
                    return Err(invalid(format!(
                        "heatmap is {:?}, image is {:?}",
                        hm.shape(),
                        (h, w)
                    )));
                }
                hm.clone()
            }
            HeatmapSource::Occlusion {
                local,
                patch,
                stride,
            } => occlusion_saliency(*local, image, target, *patch, *stride)?,
            HeatmapSource::Uniform => Heatmap::uniform(h, w),
        })
    }
}

/// All mutable state of one ECLIPSE run.
#[derive(Debug, Clone)]
pub struct EclipseState {
    pub t: usize,
    pub current_best: ImageTensor,
    pub gradient: GradientBuffer,
    pub mask: SpatialMask,
    pub tau: f64,
    pub epsilon: f64,
    pub fitness: f64,
    /// One flag per flat `(row, col, channel)` index, cleared on mask reset.
    pub sampled: Vec<bool>,
    pub sampled_count: usize,
    /// Clipped candidate of the latest iteration, if one was formed.
    pub last_candidate: Option<ImageTensor>,
    pub last_accepted: bool,
    pub last_mask_reset: bool,
}

/// Routes queries so the current best's score comes from the cache while
/// probes and candidate checks always reach the victim. With reuse disabled
/// every query reaches the victim.
struct Router<'a, O: Oracle> {
    counted: &'a Counted<O>,
    cache: Option<Cached<&'a Counted<O>>>,
}

impl<O: Oracle> Router<'_, O> {
    fn reuse_hits(&self) -> u64 {
        self.cache.as_ref().map_or(0, |c| c.hits())
    }
}

impl<O: Oracle> Oracle for Router<'_, O> {
    fn confidences(&self, image: &ImageTensor) -> crate::oracle::Result<ConfidenceResult> {
        self.confidences_in_phase(image, Phase::Other)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> crate::oracle::Result<ConfidenceResult> {
        match (&self.cache, phase) {
            (Some(cache), Phase::Baseline) => cache.confidences_in_phase(image, phase),
            (Some(cache), Phase::Initial | Phase::FitnessCheck) => cache.refresh(image, phase),
            _ => self.counted.confidences_in_phase(image, phase),
        }
    }
}

/// Finite-difference estimates at the flat indices in `batch`:
/// `grad[idx] = f(clip(C + probe·e_idx)) - f(C)`. Other entries keep their
/// previous values. An empty batch issues no queries.
pub fn estimate_gradients<O: Oracle + ?Sized>(
    oracle: &O,
    current: &ImageTensor,
    target: &str,
    batch: &[usize],
    probe_magnitude: f64,
    gradient: &mut GradientBuffer,
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    let base = query(oracle, current, target, Phase::Baseline)?;
    let buf = gradient.as_mut_slice();
    for &idx in batch {
        let probe = current.with_offset(idx, probe_magnitude);
        buf[idx] = query(oracle, &probe, target, Phase::GradientProbe)? - base;
    }
    Ok(())
}

pub fn eclipse_attack<O: Oracle>(
    oracle: O,
    heatmap: &HeatmapSource<'_>,
    original: &ImageTensor,
    target: &str,
    config: &EclipseConfig,
) -> Result<AttackOutcome> {
    eclipse_attack_observed(oracle, heatmap, original, target, config, &mut |_| {})
}

/// [`eclipse_attack`], calling `observer` with the state after
/// initialization and after every iteration.
pub fn eclipse_attack_observed<O: Oracle>(
    oracle: O,
    heatmap: &HeatmapSource<'_>,
    original: &ImageTensor,
    target: &str,
    config: &EclipseConfig,
    observer: &mut dyn FnMut(&EclipseState),
) -> Result<AttackOutcome> {
    config.validate()?;
    let (h, w) = original.shape();
    let n_coords = h * w * CHANNELS;
    if config.sample_size > n_coords {
        return Err(invalid(format!(
            "sample_size {} exceeds the {n_coords} image coordinates",
            config.sample_size
        )));
    }
    let kernel = gaussian_kernel(config.kernel_size, config.sigma).map_err(|e| invalid(e.to_string()))?;
    let min_area = config.resolved_min_area(h, w);
    let heatmap = if config.use_mask {
        Some(heatmap.resolve(original, target)?)
    } else {
        None
    };

    let counted = Counted::new(oracle);
    let router = Router {
        counted: &counted,
        cache: config.reuse_baseline.then(|| Cached::new(&counted)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let fitness0 = query(&router, original, target, Phase::Initial)?;
    let mut state = EclipseState {
        t: 0,
        current_best: original.clone(),
        gradient: GradientBuffer::zeros(h, w),
        mask: SpatialMask::full(h, w),
        tau: 0.0,
        epsilon: config.epsilon0,
        fitness: fitness0,
        sampled: vec![false; n_coords],
        sampled_count: 0,
        last_candidate: None,
        last_accepted: false,
        last_mask_reset: false,
    };
    let record = |state: &EclipseState, router: &Router<'_, O>| IterationRecord {
        t: state.t,
        fitness: state.fitness,
        accepted: state.last_accepted,
        queries_so_far: router.counted.total(),
        queries_without_reuse: Some(router.counted.total() + router.reuse_hits()),
        epsilon: Some(state.epsilon),
        tau: Some(state.tau),
        mask_area: Some(state.mask.area()),
        mask_reset: state.last_mask_reset,
    };
    let mut trace = vec![record(&state, &router)];
    let mut fitness_trace = vec![(0, fitness0)];
    observer(&state);

    if fitness0 > config.success_threshold {
        return Ok(finish(state, config, counted.ledger(), fitness_trace, trace));
    }

    for t in 1..=config.max_iterations {
        state.t = t;

        // Sample without replacement among in-mask coordinates not yet probed
        // in this mask epoch.
        let fresh: Vec<usize> = (0..n_coords)
            .filter(|&i| state.mask.contains_flat(i) && !state.sampled[i])
            .collect();
        let take = config.sample_size.min(fresh.len());
        let mut batch: Vec<usize> = index::sample(&mut rng, fresh.len(), take)
            .into_iter()
            .map(|k| fresh[k])
            .collect();
        batch.sort_unstable();
        for &i in &batch {
            state.sampled[i] = true;
        }
        state.sampled_count += batch.len();

        estimate_gradients(
            &router,
            &state.current_best,
            target,
            &batch,
            config.probe_magnitude,
            &mut state.gradient,
        )?;

        let delta = if config.blur {
            gaussian_blur(&state.gradient, &kernel)
        } else {
            state.gradient.clone()
        };
        let peak = delta.max_abs();
        state.last_accepted = false;
        state.last_candidate = None;
        if peak > 0.0 {
            let step = state
                .current_best
                .to_buffer()
                .add_scaled(&delta, state.epsilon / peak)?;
            let candidate = clip_to_budget(&step, original, config.beta)?;
            let score = query(&router, &candidate, target, Phase::FitnessCheck)?;
            if score > state.fitness {
                state.fitness = score;
                state.epsilon = config.epsilon_floor.max(config.epsilon_decay * state.epsilon);
                state.current_best = candidate.clone();
                state.last_accepted = true;
            }
            state.last_candidate = Some(candidate);
        }

        state.tau = config.tau_cap.min(config.tau_step * t as f64);
        let mask = match &heatmap {
            Some(hm) => threshold_mask(hm, state.tau),
            None => SpatialMask::full(h, w),
        };
        let unsampled_in_mask = (0..n_coords)
            .filter(|&i| mask.contains_flat(i) && !state.sampled[i])
            .count();
        let reset = mask_reset_check(&mask, state.sampled_count, min_area, config.sampled_fraction_cap)
            || unsampled_in_mask < config.sample_size;
        state.mask = if reset { SpatialMask::full(h, w) } else { mask };
        if reset {
            state.sampled.fill(false);
            state.sampled_count = 0;
        }
        state.last_mask_reset = reset;

        trace.push(record(&state, &router));
        fitness_trace.push((t, state.fitness));
        observer(&state);

        if state.last_accepted && state.fitness > config.success_threshold {
            break;
        }
    }

    Ok(finish(state, config, counted.ledger(), fitness_trace, trace))
}

fn finish(
    state: EclipseState,
    config: &EclipseConfig,
    queries: crate::oracle::QueryLedger,
    fitness_trace: Vec<(usize, f64)>,
    trace: Vec<IterationRecord>,
) -> AttackOutcome {
    let name = match (config.blur, config.use_mask) {
        (true, true) => "eclipse",
        (false, true) => "eclipse-no-blur",
        (true, false) => "eclipse-no-surrogate",
        (false, false) => "eclipse-no-blur-no-surrogate",
    };
    AttackOutcome {
        attack: name.to_string(),
        success: state.fitness > config.success_threshold,
        final_fitness: state.fitness,
        adversarial_image: state.current_best,
        queries,
        fitness_trace,
        iterations_used: state.t,
        trace,
    }
}
