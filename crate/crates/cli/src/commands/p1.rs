use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eclipse_core::eval_p1::{compression_loss, p1_metrics, CompressionRecord, P1Report};
use eclipse_core::oracle::Oracle;
use eclipse_core::tensorops::ImageTensor;
use serde::Serialize;

use super::{cell, victim, write_json};
use crate::config::RunConfig;
use crate::corpus;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P1Row {
    pub attack: String,
    pub quality: u8,
    /// Absent when the attack produced no adversarial examples.
    pub report: Option<P1Report>,
}

/// Compression records and one report row per quality for a set of
/// `(id, target, adversarial)` examples.
pub fn p1_rows(
    oracle: &dyn Oracle,
    attack: &str,
    examples: &[(String, String, ImageTensor)],
    qualities: &[u8],
) -> Result<(Vec<CompressionRecord>, Vec<P1Row>)> {
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for &q in qualities {
        let records = examples
            .iter()
            .map(|(id, target, img)| compression_loss(oracle, id, img, target, q))
            .collect::<Result<Vec<_>, _>>()?;
        let report = if records.is_empty() { None } else { Some(p1_metrics(&records)?) };
        rows.push(P1Row {
            attack: attack.to_string(),
            quality: q,
            report,
        });
        all.extend(records);
    }
    Ok((all, rows))
}

pub const P1_COLUMNS: [&str; 6] = ["Attack", "Quality", "Median Loss", "Low-loss%", "Surviving%", "N"];

/// Scores the successful examples of each run directory before and after
/// JPEG compression at every configured quality.
pub fn cmd_eval_p1(cfg: &RunConfig, runs: &[PathBuf], out: &Path) -> Result<Vec<P1Row>> {
    cfg.validate()?;
    anyhow::ensure!(!runs.is_empty(), "no run directories given");
    let oracle = victim(&cfg.oracle)?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for dir in runs {
        let attack = corpus::read_runs(dir)?[0].attack.clone();
        let examples: Vec<_> = corpus::load_successes(dir)?
            .into_iter()
            .map(|(r, img)| (r.id, r.target, img))
            .collect();
        let (rec, row) = p1_rows(oracle.as_ref(), &attack, &examples, &cfg.eval.quality)
            .with_context(|| format!("evaluating {}", dir.display()))?;
        records.extend(rec.into_iter().map(|r| (attack.clone(), r)));
        rows.extend(row);
    }

    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("p1_records.csv"))?;
    w.write_record(["attack", "id", "quality", "pre_score", "post_score", "loss"])?;
    for (attack, r) in &records {
        w.write_record([
            attack.clone(),
            r.image_id.clone(),
            r.quality.to_string(),
            r.pre_score.to_string(),
            r.post_score.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush()?;
    write_p1_table(&out.join("p1_report.csv"), &rows)?;
    write_json(&out.join("p1_report.json"), &rows)?;
    Ok(rows)
}

pub(crate) fn write_p1_table(path: &Path, rows: &[P1Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(P1_COLUMNS)?;
    for row in rows {
        let r = row.report.as_ref();
        w.write_record([
            row.attack.clone(),
            row.quality.to_string(),
            cell(r.map(|r| r.median_loss), 4),
            cell(r.map(|r| r.low_loss_pct), 2),
            cell(r.map(|r| r.surviving_pct), 2),
            r.map_or(0, |r| r.n).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
