//! Corpus manifests and the per-run records that link attack outputs to
//! the evaluators.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eclipse_core::tensorops::{read_image, ImageTensor};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.csv";
pub const RUNS: &str = "runs.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub filename: String,
    pub ground_truth_label: String,
    pub target_label: String,
}

impl ManifestEntry {
    /// File stem, used as the image id in every report.
    pub fn id(&self) -> String {
        Path::new(&self.filename)
            .file_stem()
            .map_or_else(|| self.filename.clone(), |s| s.to_string_lossy().into_owned())
    }
}

/// Reads `<dir>/manifest.csv`, sorted by id. Duplicate ids are rejected.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    entries.sort_by_key(|e| e.id());
    if let Some(w) = entries.windows(2).find(|w| w[0].id() == w[1].id()) {
        bail!("duplicate image id {:?} in {}", w[0].id(), path.display());
    }
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// PNG and JPEG files directly inside `dir`, sorted by name, as `(id, path)`.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load(path: &Path) -> Result<ImageTensor> {
    read_image(path).with_context(|| format!("reading image {}", path.display()))
}

/// Rounds to 8-bit channels, as happens when an image is stored as PNG.
pub fn quantize(image: &ImageTensor) -> ImageTensor {
    let (h, w) = image.shape();
    ImageTensor::from_rgb8(h, w, &image.to_rgb8()).expect("same shape")
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub attack: String,
    pub ground_truth: String,
    pub target: String,
    pub success: bool,
    pub final_fitness: f64,
    pub total_queries: u64,
    pub iterations: usize,
    /// Relative to the run directory.
    pub adversarial: String,
}

pub fn read_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RUNS);
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let runs = reader
        .deserialize()
        .collect::<std::result::Result<Vec<RunRecord>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if runs.is_empty() {
        bail!("{} lists no runs", path.display());
    }
    let attack = &runs[0].attack;
    if runs.iter().any(|r| &r.attack != attack) {
        bail!("{} mixes several attacks", path.display());
    }
    Ok(runs)
}

pub fn write_runs(dir: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(RUNS))?;
    for r in runs {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Successful adversarial examples of a run directory, as `(record, image)`.
pub fn load_successes(dir: &Path) -> Result<Vec<(RunRecord, ImageTensor)>> {
    read_runs(dir)?
        .into_iter()
        .filter(|r| r.success)
        .map(|r| {
            let img = load(&dir.join(&r.adversarial))?;
            Ok((r, img))
        })
        .collect()
}
