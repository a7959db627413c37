//! Desk-scale stand-ins for a real victim model and image corpus.
//!
//! Images get a power-law DCT spectrum so their frequency content resembles
//! natural photographs. The victim is a linear-softmax classifier whose
//! templates mix a smooth component with per-pixel texture; the surrogate
//! shares the victim's templates up to independent noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::oracle::{OracleError, SyntheticOracle, SyntheticOracleSpec};
use crate::tensorops::{idct2, ImageTensor, Plane, CHANNELS};

pub const LABELS: [&str; 6] = ["cat", "dog", "fox", "owl", "cow", "eel"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub height: usize,
    pub width: usize,
    /// Number of labels, 2..=6. The first is the ground truth, the second the target.
    pub labels: usize,
    pub temperature: f64,
    /// Share of each template's energy in the per-pixel texture component.
    pub texture_share: f64,
    /// Relative noise separating surrogate templates from the victim's.
    pub surrogate_noise: f64,
    /// Accepted range of the initial target score for corpus images.
    pub target_score_range: (f64, f64),
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            labels: 3,
            temperature: 8.0,
            texture_share: 0.5,
            surrogate_noise: 0.5,
            target_score_range: (0.05, 0.35),
            seed: 0,
        }
    }
}

/// A victim, a surrogate and a generator for images the victim labels as
/// the ground truth class.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub victim: SyntheticOracleSpec,
    pub surrogate: SyntheticOracleSpec,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub image: ImageTensor,
    pub ground_truth: String,
    pub target: String,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random field with a `1 / (1 + f)^alpha` amplitude spectrum, zero mean,
/// unit RMS.
fn power_law_field(rng: &mut impl Rng, h: usize, w: usize, alpha: f64) -> Plane {
    let mut coeffs = Plane::zeros(h, w);
    for u in 0..h {
        for v in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let f = ((u * u + v * v) as f64).sqrt();
            coeffs.set(u, v, normal(rng) / (1.0 + f).powf(alpha));
        }
    }
    let mut field = idct2(&coeffs);
    let rms = (field.data.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64).sqrt();
    if rms > 0.0 {
        field.data.iter_mut().for_each(|v| *v /= rms);
    }
    field
}

/// Natural-looking RGB image: a shared luminance field plus weaker
/// per-channel colour fields, offset by a random mean colour.
pub fn natural_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageTensor {
    let luma = power_law_field(rng, h, w, 2.0);
    let chroma: Vec<Plane> = (0..CHANNELS).map(|_| power_law_field(rng, h, w, 2.0)).collect();
    let mean: Vec<f64> = (0..CHANNELS).map(|_| rng.gen_range(0.35..0.65)).collect();
    let contrast = rng.gen_range(0.08..0.16);
    ImageTensor::from_fn(h, w, |r, c, ch| {
        mean[ch] + contrast * (luma.get(r, c) + 0.4 * chroma[ch].get(r, c))
    })
    .expect("shape is non-empty")
}

fn template(rng: &mut impl Rng, h: usize, w: usize, texture_share: f64) -> Vec<f64> {
    let smooth: Vec<Plane> = (0..CHANNELS).map(|_| power_law_field(rng, h, w, 1.0)).collect();
    let (a, b) = ((1.0 - texture_share).sqrt(), texture_share.sqrt());
    let mut t = Vec::with_capacity(h * w * CHANNELS);
    for r in 0..h {
        for c in 0..w {
            for plane in &smooth {
                t.push(a * plane.get(r, c) + b * normal(rng));
            }
        }
    }
    t
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, OracleError> {
        if !(2..=LABELS.len()).contains(&config.labels) {
            return Err(OracleError::InvalidSpec(format!(
                "labels must be in 2..={}",
                LABELS.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, w) = (config.height, config.width);
        let labels: Vec<String> = LABELS[..config.labels].iter().map(|s| s.to_string()).collect();
        let templates: Vec<Vec<f64>> = (0..config.labels)
            .map(|_| template(&mut rng, h, w, config.texture_share))
            .collect();
        let surrogate_templates = templates
            .iter()
            .map(|t| {
                let noise = template(&mut rng, h, w, config.texture_share);
                t.iter()
                    .zip(noise)
                    .map(|(a, n)| a + config.surrogate_noise * n)
                    .collect()
            })
            .collect();
        let victim = SyntheticOracleSpec {
            labels: labels.clone(),
            height: h,
            width: w,
            temperature: config.temperature,
            templates,
        };
        let surrogate = SyntheticOracleSpec {
            templates: surrogate_templates,
            ..victim.clone()
        };
        victim.validate()?;
        Ok(Self {
            config,
            victim,
            surrogate,
        })
    }

    pub fn ground_truth(&self) -> &str {
        &self.victim.labels[0]
    }

    pub fn target(&self) -> &str {
        &self.victim.labels[1]
    }

    pub fn victim_oracle(&self) -> SyntheticOracle {
        SyntheticOracle::new(self.victim.clone()).expect("validated")
    }

    pub fn surrogate_oracle(&self) -> SyntheticOracle {
        SyntheticOracle::new(self.surrogate.clone()).expect("validated")
    }

    /// `n` images the victim classifies as the ground truth, with the target
    /// score inside `target_score_range`. Deterministic in `(config, stream)`.
    pub fn corpus(&self, n: usize, stream: u64) -> Vec<CorpusItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(stream);
        let oracle = self.victim_oracle();
        let (lo, hi) = self.config.target_score_range;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let image = natural_image(&mut rng, self.config.height, self.config.width);
            let probs = oracle.probabilities(&image).expect("shape matches");
            let top = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            if top == 0 && (lo..=hi).contains(&probs[1]) {
                out.push(CorpusItem {
                    id: format!("img{:04}", out.len()),
                    image,
                    ground_truth: self.ground_truth().to_string(),
                    target: self.target().to_string(),
                });
            }
        }
        out
    }

    /// `n` unattacked images from the same distribution, without the label filter.
    pub fn benign(&self, n: usize, stream: u64) -> Vec<ImageTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5851_f42d_4c95_7f2d);
        rng.set_stream(stream);
        (0..n)
            .map(|_| natural_image(&mut rng, self.config.height, self.config.width))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Oracle, SyntheticOracle};

    #[test]
    fn corpus_respects_the_label_filter() {
        let sc = Scenario::new(ScenarioConfig::default()).unwrap();
        let oracle = SyntheticOracle::new(sc.victim.clone()).unwrap();
        for item in sc.corpus(5, 0) {
            let r = oracle.confidences(&item.image).unwrap();
            assert_eq!(r.top_label(), "cat");
            assert!((0.05..=0.35).contains(&r.score("dog")));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = Scenario::new(ScenarioConfig::default()).unwrap();
        let b = Scenario::new(ScenarioConfig::default()).unwrap();
        assert_eq!(a.victim, b.victim);
        assert_eq!(a.corpus(3, 1)[2].image, b.corpus(3, 1)[2].image);
        assert_ne!(a.corpus(1, 1)[0].image, a.corpus(1, 2)[0].image);
    }

    #[test]
    fn rejects_bad_label_count() {
        let cfg = ScenarioConfig {
            labels: 1,
            ..Default::default()
        };
        assert!(Scenario::new(cfg).is_err());
    }
}
