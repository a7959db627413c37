//! Robustness to JPEG compression.
//!
//! Each adversarial example is scored before and after a JPEG round-trip;
//! the per-example loss `pre - post` is aggregated into a median plus the
//! share of examples losing less than 0.3 ("low loss") and less than 0.05
//! ("surviving"). Negative losses are valid: compression may help.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{query, Oracle, OracleError, Phase};
use crate::stats::median;
use crate::tensorops::{jpeg_roundtrip, ImageTensor, TensorError};

pub const LOW_LOSS_THRESHOLD: f64 = 0.3;
pub const SURVIVAL_THRESHOLD: f64 = 0.05;
pub const DEFAULT_QUALITY: u8 = 75;

#[derive(Debug, Error)]
pub enum P1Error {
    #[error("no compression records to aggregate")]
    Empty,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Image(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub image_id: String,
    pub pre_score: f64,
    pub post_score: f64,
    pub loss: f64,
    pub quality: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Report {
    pub median_loss: f64,
    pub low_loss_pct: f64,
    pub surviving_pct: f64,
    pub n: usize,
    pub quality: u8,
}

/// Scores `adversarial` before and after a JPEG round-trip. Exactly two
/// oracle queries.
pub fn compression_loss<O: Oracle + ?Sized>(
    oracle: &O,
    image_id: &str,
    adversarial: &ImageTensor,
    target: &str,
    quality: u8,
) -> Result<CompressionRecord, P1Error> {
    let compressed = jpeg_roundtrip(adversarial, quality)?;
    let pre_score = query(oracle, adversarial, target, Phase::Other)?;
    let post_score = query(oracle, &compressed, target, Phase::Other)?;
    Ok(CompressionRecord {
        image_id: image_id.to_string(),
        pre_score,
        post_score,
        loss: pre_score - post_score,
        quality,
    })
}

/// Aggregates records that share one quality setting.
pub fn p1_metrics(records: &[CompressionRecord]) -> Result<P1Report, P1Error> {
    if records.is_empty() {
        return Err(P1Error::Empty);
    }
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let n = records.len();
    let pct = |threshold: f64| 100.0 * losses.iter().filter(|&&l| l < threshold).count() as f64 / n as f64;
    Ok(P1Report {
        median_loss: median(&losses).expect("non-empty"),
        low_loss_pct: pct(LOW_LOSS_THRESHOLD),
        surviving_pct: pct(SURVIVAL_THRESHOLD),
        n,
        quality: records[0].quality,
    })
}
