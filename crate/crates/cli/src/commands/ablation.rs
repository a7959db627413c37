use std::path::Path;

use anyhow::{bail, Context, Result};
use eclipse_core::eval_p1::P1Report;
use eclipse_core::eval_p2::{spectral_features, FeatureRow, MeanStd, QueryStats};
use serde::Serialize;

use super::p2::{stats_from_records, write_query_stats};
use super::{benign_features, cell, detector_for, p1_rows, run_corpus, victim, worker_pool, write_json};
use crate::config::{AttackKind, RunConfig};
use crate::corpus;

/// `(row label, output subdirectory, blur, surrogate mask)`.
pub const ABLATION_VARIANTS: [(&str, &str, bool, bool); 3] = [
    ("ECLIPSE", "eclipse", true, true),
    ("No Gaussian blur", "no-blur", false, true),
    ("No Local Surrogate", "no-surrogate", true, false),
];

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub quality: u8,
    pub compression: Option<P1Report>,
    /// Absent when too few examples succeeded to cross-validate a detector.
    pub roc_auc: Option<MeanStd>,
    pub queries: QueryStats,
}

/// Runs full ECLIPSE and its two ablations over the corpus and combines
/// compression robustness, detector AUC and query statistics per variant.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let corpus_dir = cfg.attack.corpus.as_ref().context("no corpus given; pass --corpus or set [attack] corpus")?;
    let out = cfg.attack.out.as_ref().context("no output directory; pass --out or set [attack] out")?;
    let benign_dir = cfg.eval.benign.as_ref().context("no benign corpus; pass --benign or set [eval] benign")?;
    if corpus::read_manifest(corpus_dir)?.is_empty() {
        bail!("corpus {} is empty", corpus_dir.display());
    }
    let oracle = victim(&cfg.oracle)?;
    let pool = worker_pool(cfg.attack.workers)?;
    let benign = pool.install(|| benign_features(benign_dir, cfg.eval.bands))?;
    if benign.is_empty() {
        bail!("benign corpus {} has no images", benign_dir.display());
    }

    let mut rows = Vec::new();
    for (label, slug, blur, use_mask) in ABLATION_VARIANTS {
        let mut vcfg = cfg.clone();
        vcfg.attack.name = AttackKind::Eclipse;
        vcfg.attack.eclipse.blur = blur;
        vcfg.attack.eclipse.use_mask = use_mask;
        let run = run_corpus(&vcfg, corpus_dir, &out.join(slug))?;

        // Evaluate exactly what was stored on disk.
        let examples: Vec<_> = run
            .outcomes
            .iter()
            .zip(&run.records)
            .filter(|(o, _)| o.success)
            .map(|(o, r)| (r.id.clone(), r.target.clone(), corpus::quantize(&o.adversarial_image)))
            .collect();
        let (_, p1) = p1_rows(oracle.as_ref(), label, &examples, &cfg.eval.quality)?;
        let adversarial: Vec<FeatureRow> = examples
            .iter()
            .map(|(id, _, img)| FeatureRow {
                id: id.clone(),
                adversarial: true,
                features: spectral_features(img, cfg.eval.bands),
            })
            .collect();
        let auc = match detector_for(cfg, label, &benign, &adversarial) {
            Ok((_, det, _)) => Some(det.report.roc_auc),
            Err(e) => {
                eprintln!("warning: no detector for {label}: {e:#}");
                None
            }
        };
        let queries = stats_from_records(&run.records);
        for row in p1 {
            rows.push(AblationRow {
                variant: label.to_string(),
                quality: row.quality,
                compression: row.report,
                roc_auc: auc,
                queries: queries.clone(),
            });
        }
    }

    write_table(&out.join("ablation.csv"), &rows)?;
    write_json(&out.join("ablation.json"), &rows)?;
    let stats: Vec<_> = rows
        .iter()
        .filter(|r| r.quality == cfg.eval.quality[0])
        .map(|r| (&r.variant, &r.queries))
        .collect();
    write_query_stats(&out.join("query_stats.csv"), &stats)?;
    Ok(rows)
}

fn write_table(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "Variant",
        "Quality",
        "Median Loss",
        "Low-loss%",
        "Surviving%",
        "ROC AUC",
        "Median Queries",
        "IQR Queries",
        "Failures",
    ])?;
    for r in rows {
        let c = r.compression.as_ref();
        w.write_record([
            r.variant.clone(),
            r.quality.to_string(),
            cell(c.map(|c| c.median_loss), 4),
            cell(c.map(|c| c.low_loss_pct), 2),
            cell(c.map(|c| c.surviving_pct), 2),
            r.roc_auc.map_or_else(String::new, |a| a.to_string()),
            cell(r.queries.median, 1),
            cell(r.queries.iqr, 1),
            r.queries.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
