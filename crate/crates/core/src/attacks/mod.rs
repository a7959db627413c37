//! Score-based black-box attacks sharing one configuration and outcome model.
//!
//! All four attacks are accept-if-improved searches over the L∞ ball of
//! radius `beta` around the original image, intersected with `[0, 1]`.

mod eclipse;
mod simba;
mod square;

pub use eclipse::{
    eclipse_attack, eclipse_attack_observed, estimate_gradients, EclipseConfig, EclipseState,
    HeatmapSource,
};
pub use simba::{simba_attack, simba_dct_attack, SimbaConfig, SimbaDctConfig};
pub use square::{square_attack_linf, square_p_schedule, square_side, SquareConfig};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{OracleError, QueryLedger};
use crate::saliency::SaliencyError;
use crate::tensorops::{ImageTensor, TensorError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle failure: {0}")]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Image(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

pub(crate) fn invalid(msg: impl Into<String>) -> AttackError {
    AttackError::InvalidConfig(msg.into())
}

/// One line of an attack trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub fitness: f64,
    pub accepted: bool,
    /// Underlying oracle calls so far.
    pub queries_so_far: u64,
    /// What the count would be if the current best's score were re-queried
    /// instead of reused.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries_without_reuse: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<usize>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub mask_reset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub attack: String,
    pub success: bool,
    pub adversarial_image: ImageTensor,
    pub final_fitness: f64,
    pub queries: QueryLedger,
    /// `(t, fitness)` starting at `t = 0`.
    pub fitness_trace: Vec<(usize, f64)>,
    pub iterations_used: usize,
    pub trace: Vec<IterationRecord>,
}

#[derive(Serialize)]
struct FinalRecord<'a> {
    #[serde(rename = "final")]
    is_final: bool,
    attack: &'a str,
    success: bool,
    final_fitness: f64,
    iterations_used: usize,
    queries: &'a QueryLedger,
    #[serde(skip_serializing_if = "Option::is_none")]
    adversarial_image: Option<&'a str>,
}

impl AttackOutcome {
    /// JSON lines: one record per iteration, then a final summary record.
    pub fn write_trace(&self, mut out: impl Write, image_path: Option<&str>) -> std::io::Result<()> {
        for rec in &self.trace {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut out,
            &FinalRecord {
                is_final: true,
                attack: &self.attack,
                success: self.success,
                final_fitness: self.final_fitness,
                iterations_used: self.iterations_used,
                queries: &self.queries,
                adversarial_image: image_path,
            },
        )?;
        out.write_all(b"\n")
    }
}

pub(crate) fn check_unit(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && v <= 1.0 && if allow_zero { v >= 0.0 } else { v > 0.0 };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} is out of range")))
    }
}
