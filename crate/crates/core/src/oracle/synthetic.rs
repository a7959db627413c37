use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfidenceResult, Label, Oracle, OracleError, Result};
use crate::tensorops::{ImageTensor, CHANNELS};

/// A linear-softmax classifier: one weight template per label.
///
/// `score_k = softmax_k(<template_k, image> / temperature)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub labels: Vec<Label>,
    pub height: usize,
    pub width: usize,
    pub temperature: f64,
    /// One `height * width * 3` array per label, in image layout.
    pub templates: Vec<Vec<f64>>,
}

impl SyntheticOracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(OracleError::InvalidSpec("need at least 2 labels".into()));
        }
        if self.templates.len() != self.labels.len() {
            return Err(OracleError::InvalidSpec(format!(
                "{} labels but {} templates",
                self.labels.len(),
                self.templates.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.labels.iter().all(|l| seen.insert(l)) {
            return Err(OracleError::InvalidSpec("duplicate label".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(OracleError::InvalidSpec("empty image shape".into()));
        }
        let n = self.height * self.width * CHANNELS;
        if let Some(t) = self.templates.iter().find(|t| t.len() != n) {
            return Err(OracleError::InvalidSpec(format!(
                "template has {} weights, expected {n}",
                t.len()
            )));
        }
        if self.templates.iter().flatten().any(|w| !w.is_finite()) {
            return Err(OracleError::InvalidSpec("non-finite template weight".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(OracleError::InvalidSpec(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let spec: Self = serde_json::from_str(&text)
            .map_err(|e| OracleError::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("spec serializes"))
    }
}

/// Deterministic in-process oracle backed by a [`SyntheticOracleSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SyntheticOracleSpec,
    top_k: Option<usize>,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, top_k: None })
    }

    /// Only report the `k` most confident labels, as many public APIs do.
    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = Some(k.max(1));
        self
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    fn check_shape(&self, image: &ImageTensor) -> Result<()> {
        let expected = (self.spec.height, self.spec.width);
        if image.shape() != expected {
            return Err(OracleError::ShapeMismatch {
                expected,
                actual: image.shape(),
            });
        }
        Ok(())
    }

    /// Full softmax distribution, in label order.
    pub fn probabilities(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_shape(image)?;
        let x = image.as_slice();
        let logits: Vec<f64> = self
            .spec
            .templates
            .iter()
            .map(|t| t.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() / self.spec.temperature)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }
}

impl Oracle for SyntheticOracle {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        let probs = self.probabilities(image)?;
        let mut pairs: Vec<(Label, f64)> = self.spec.labels.iter().cloned().zip(probs).collect();
        if let Some(k) = self.top_k {
            pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            pairs.truncate(k);
        }
        // Softmax output can exceed 1 by an ulp after division.
        let scores: BTreeMap<Label, f64> = pairs.into_iter().map(|(l, p)| (l, p.clamp(0.0, 1.0))).collect();
        ConfidenceResult::new(scores)
    }
}

/// White-box access to the synthetic oracle, for tests only. Attack code
/// never links against this.
#[cfg(any(test, feature = "test-support"))]
pub mod test_support {
    use super::*;
    use crate::tensorops::GradientBuffer;

    /// Exact gradient of `score(label)` with respect to every pixel value.
    pub fn analytic_gradient(
        oracle: &SyntheticOracle,
        image: &ImageTensor,
        label: &str,
    ) -> Result<GradientBuffer> {
        let spec = oracle.spec();
        let k = spec
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| OracleError::InvalidSpec(format!("unknown label {label:?}")))?;
        let probs = oracle.probabilities(image)?;
        let n = image.len();
        let mut grad = vec![0.0; n];
        for (p, g) in grad.iter_mut().enumerate() {
            let mean_w: f64 = probs.iter().zip(&spec.templates).map(|(q, t)| q * t[p]).sum();
            *g = probs[k] * (spec.templates[k][p] - mean_w) / spec.temperature;
        }
        Ok(GradientBuffer::new(image.height(), image.width(), grad)?)
    }

    /// Score of `label` computed directly from the softmax, bypassing the
    /// oracle interface.
    pub fn exact_score(oracle: &SyntheticOracle, image: &ImageTensor, label: &str) -> f64 {
        let k = oracle.spec().labels.iter().position(|l| l == label).unwrap();
        oracle.probabilities(image).unwrap()[k]
    }
}
