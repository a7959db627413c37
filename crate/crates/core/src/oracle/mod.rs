//! The black-box classifier abstraction.
//!
//! Attacks only ever see an [`Oracle`]: something that maps an image to
//! per-label confidence scores. [`Counted`] and [`Cached`] wrap any oracle
//! to provide exact query accounting and content-addressed memoization.

mod remote;
mod synthetic;
mod wrappers;

pub use remote::{encode_request, parse_response, OracleEndpointConfig, RemoteOracle, AUTH_TOKEN_ENV};
pub use synthetic::{SyntheticOracle, SyntheticOracleSpec};
pub use wrappers::{content_key, Cached, Counted, QueryLedger};

#[cfg(any(test, feature = "test-support"))]
pub use synthetic::test_support;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorops::{ImageTensor, TensorError};

pub type Label = String;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle request timed out")]
    Timeout,
    #[error("oracle returned HTTP status {0}")]
    Status(u16),
    #[error("oracle response violates the schema: {0}")]
    Schema(String),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("image shape {actual:?} does not match the oracle input shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid oracle specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Image(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Why a query was issued. Only used for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Score of the unmodified starting point.
    Initial,
    /// Score of the current best solution, used as the finite-difference base.
    Baseline,
    /// Perturbed copy of the current best solution.
    GradientProbe,
    /// Score of a full candidate update.
    FitnessCheck,
    Other,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Initial,
        Phase::Baseline,
        Phase::GradientProbe,
        Phase::FitnessCheck,
        Phase::Other,
    ];

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

/// Per-label confidences returned by one oracle call. May be a top-k subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResult {
    scores: BTreeMap<Label, f64>,
}

impl ConfidenceResult {
    pub fn new(scores: BTreeMap<Label, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(OracleError::Schema("empty score map".into()));
        }
        if let Some((label, score)) = scores.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(OracleError::Schema(format!(
                "score {score} for label {label:?} is outside [0, 1]"
            )));
        }
        Ok(Self { scores })
    }

    /// Confidence of `label`; a label missing from a top-k response scores 0.
    pub fn score(&self, label: &str) -> f64 {
        self.scores.get(label).copied().unwrap_or(0.0)
    }

    pub fn scores(&self) -> &BTreeMap<Label, f64> {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Label with the highest confidence (ties broken by label order).
    pub fn top_label(&self) -> &str {
        self.scores
            .iter()
            .fold(None::<(&Label, f64)>, |best, (l, &s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((l, s)),
            })
            .map(|(l, _)| l.as_str())
            .expect("non-empty by construction")
    }
}

/// Query-only access to a classifier.
pub trait Oracle: Send + Sync {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult>;

    /// Same as [`Oracle::confidences`], with the reason for the call attached.
    /// Accounting wrappers override this; everything else can ignore the phase.
    fn confidences_in_phase(&self, image: &ImageTensor, _phase: Phase) -> Result<ConfidenceResult> {
        self.confidences(image)
    }
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        (**self).confidences(image)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        (**self).confidences_in_phase(image, phase)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        (**self).confidences(image)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        (**self).confidences_in_phase(image, phase)
    }
}

impl<T: Oracle + ?Sized> Oracle for Arc<T> {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        (**self).confidences(image)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        (**self).confidences_in_phase(image, phase)
    }
}

/// Confidence of `target` for `image`, or 0 when the oracle's top-k omits it.
pub fn query<O: Oracle + ?Sized>(oracle: &O, image: &ImageTensor, target: &str, phase: Phase) -> Result<f64> {
    Ok(oracle.confidences_in_phase(image, phase)?.score(target))
}
