use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eclipse_core::eval_p2::{
    read_features_csv, spectral_features, train_detector, write_features_csv, CvReport, DetectorModel,
    FeatureRow, QueryStats, SpectralFeatureVector,
};
use eclipse_core::tensorops::ImageTensor;
use rayon::prelude::*;
use serde::Serialize;

use super::{cell, create_file, worker_pool, write_json};
use crate::config::RunConfig;
use crate::corpus;

#[derive(Debug, Clone, Serialize)]
pub struct DetectorRow {
    pub attack: String,
    pub benign: usize,
    pub adversarial: usize,
    pub report: CvReport,
}

fn features_of(images: &[(String, ImageTensor)], adversarial: bool, bands: usize) -> Vec<FeatureRow> {
    images
        .par_iter()
        .map(|(id, img)| FeatureRow {
            id: id.clone(),
            adversarial,
            features: spectral_features(img, bands),
        })
        .collect()
}

/// Features of every image in `dir`, sorted by id.
pub fn benign_features(dir: &Path, bands: usize) -> Result<Vec<FeatureRow>> {
    let images = corpus::list_images(dir)?
        .into_iter()
        .map(|(id, p)| Ok((id, corpus::load(&p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(features_of(&images, false, bands))
}

/// Trains on `benign` (truncated to `benign_ratio` per adversarial example)
/// against `adversarial`; returns the model, its CV report and the rows used.
pub fn detector_for(
    cfg: &RunConfig,
    attack: &str,
    benign: &[FeatureRow],
    adversarial: &[FeatureRow],
) -> Result<(DetectorModel, DetectorRow, Vec<FeatureRow>)> {
    let n_benign = benign.len().min(cfg.eval.benign_ratio * adversarial.len());
    let b: Vec<SpectralFeatureVector> = benign[..n_benign].iter().map(|r| r.features.clone()).collect();
    let a: Vec<SpectralFeatureVector> = adversarial.iter().map(|r| r.features.clone()).collect();
    let (model, report) = train_detector(&b, &a, &cfg.eval.detector)
        .with_context(|| format!("training the {attack} detector"))?;
    let used = benign[..n_benign].iter().chain(adversarial).cloned().collect();
    let row = DetectorRow {
        attack: attack.to_string(),
        benign: n_benign,
        adversarial: adversarial.len(),
        report,
    };
    Ok((model, row, used))
}

struct Dataset {
    attack: String,
    benign: Vec<FeatureRow>,
    adversarial: Vec<FeatureRow>,
    stats: Option<QueryStats>,
}

/// Trains one detector per run directory (benign images vs the run's
/// successful adversarial examples) or per features file, and writes
/// features, detector models, the CV table and query statistics.
pub fn cmd_eval_p2(cfg: &RunConfig, runs: &[PathBuf], feature_files: &[PathBuf], out: &Path) -> Result<Vec<DetectorRow>> {
    cfg.validate()?;
    if runs.is_empty() && feature_files.is_empty() {
        bail!("give run directories or features files");
    }
    let bands = cfg.eval.bands;
    let pool = worker_pool(cfg.attack.workers)?;
    let mut datasets = Vec::new();

    if !runs.is_empty() {
        let benign_dir = cfg.eval.benign.as_ref().context("no benign corpus; pass --benign or set [eval] benign")?;
        let benign = pool.install(|| benign_features(benign_dir, bands))?;
        if benign.is_empty() {
            bail!("benign corpus {} has no images", benign_dir.display());
        }
        for dir in runs {
            let records = corpus::read_runs(dir)?;
            let attack = records[0].attack.clone();
            let images: Vec<(String, ImageTensor)> =
                corpus::load_successes(dir)?.into_iter().map(|(r, img)| (r.id, img)).collect();
            if images.is_empty() {
                bail!("{} has no successful adversarial examples", dir.display());
            }
            datasets.push(Dataset {
                attack,
                benign: benign.clone(),
                adversarial: pool.install(|| features_of(&images, true, bands)),
                stats: Some(stats_from_records(&records)),
            });
        }
    }
    for path in feature_files {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (rows, _) = read_features_csv(std::io::BufReader::new(file))?;
        let attack = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let (adversarial, benign): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.adversarial);
        if adversarial.is_empty() || benign.is_empty() {
            bail!("{} must contain both classes", path.display());
        }
        datasets.push(Dataset {
            attack,
            benign,
            adversarial,
            stats: None,
        });
    }

    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for ds in &datasets {
        let (model, row, used) = detector_for(cfg, &ds.attack, &ds.benign, &ds.adversarial)?;
        let dim = used[0].features.len();
        write_features_csv(create_file(&out.join(format!("features-{}.csv", ds.attack)))?, &used, dim)?;
        std::fs::write(out.join(format!("detector-{}.json", ds.attack)), model.to_json()? + "\n")?;
        rows.push(row);
    }

    let mut w = csv::Writer::from_path(out.join("cv_report.csv"))?;
    let mut header = vec!["Attack".to_string()];
    header.extend(CvReport::COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for row in &rows {
        let mut rec = vec![row.attack.clone()];
        rec.extend(row.report.formatted_row());
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&out.join("cv_report.json"), &rows)?;

    let with_stats: Vec<_> = datasets.iter().filter_map(|d| d.stats.as_ref().map(|s| (&d.attack, s))).collect();
    if !with_stats.is_empty() {
        write_query_stats(&out.join("query_stats.csv"), &with_stats)?;
    }
    Ok(rows)
}

pub(crate) fn stats_from_records(records: &[corpus::RunRecord]) -> QueryStats {
    let ok: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.total_queries as f64).collect();
    QueryStats {
        median: eclipse_core::stats::median(&ok),
        iqr: eclipse_core::stats::iqr(&ok),
        successes: ok.len(),
        failures: records.len() - ok.len(),
    }
}

pub(crate) fn write_query_stats(path: &Path, rows: &[(&String, &QueryStats)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["Attack", "Median Queries", "IQR Queries", "Successes", "Failures"])?;
    for (attack, s) in rows {
        w.write_record([
            attack.to_string(),
            cell(s.median, 1),
            cell(s.iqr, 1),
            s.successes.to_string(),
            s.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

