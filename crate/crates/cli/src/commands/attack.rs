use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eclipse_core::attacks::{
    eclipse_attack, simba_attack, simba_dct_attack, square_attack_linf, AttackOutcome, HeatmapSource,
};
use eclipse_core::eval_p2::query_stats;
use eclipse_core::oracle::Oracle;
use eclipse_core::saliency::{load_heatmap, Heatmap};
use eclipse_core::tensorops::{write_png, ImageTensor};
use rayon::prelude::*;

use super::{build_oracle, cell, create_file, victim, worker_pool};
use crate::config::{AttackKind, HeatmapSpec, RunConfig};
use crate::corpus::{self, ManifestEntry, RunRecord};

/// Results of attacking a corpus, in manifest order.
pub struct AttackRun {
    pub attack: String,
    pub entries: Vec<ManifestEntry>,
    pub originals: Vec<ImageTensor>,
    pub outcomes: Vec<AttackOutcome>,
    pub records: Vec<RunRecord>,
}

enum HeatmapPlan {
    None,
    Occlusion(Box<dyn Oracle>),
    Shared(Heatmap),
    PerImage(PathBuf),
}

impl HeatmapPlan {
    fn new(cfg: &RunConfig) -> Result<Self> {
        if cfg.attack.name != AttackKind::Eclipse || !cfg.attack.eclipse.use_mask {
            return Ok(Self::None);
        }
        Ok(match &cfg.attack.heatmap {
            HeatmapSpec::Occlusion => {
                let src = cfg
                    .oracle
                    .surrogate
                    .as_ref()
                    .context("occlusion heatmaps need a local model; pass --surrogate or set [oracle] surrogate")?;
                Self::Occlusion(build_oracle(src, &cfg.oracle)?)
            }
            HeatmapSpec::File(p) if p.is_dir() => Self::PerImage(p.clone()),
            // Shape is checked per image once the corpus is loaded.
            HeatmapSpec::File(p) => Self::Shared(load_any_heatmap(p)?),
        })
    }

    fn source(&self, id: &str, image: &ImageTensor, patch: usize, stride: usize) -> Result<HeatmapSource<'_>> {
        let (h, w) = image.shape();
        Ok(match self {
            Self::None => HeatmapSource::Uniform,
            Self::Occlusion(local) => HeatmapSource::Occlusion {
                local: local.as_ref(),
                patch,
                stride,
            },
            Self::Shared(hm) => HeatmapSource::Precomputed(hm.clone()),
            Self::PerImage(dir) => {
                let path = ["png", "csv"]
                    .iter()
                    .map(|ext| dir.join(format!("{id}.{ext}")))
                    .find(|p| p.exists())
                    .with_context(|| format!("no heatmap for {id} in {}", dir.display()))?;
                HeatmapSource::Precomputed(load_heatmap(&path, (h, w))?)
            }
        })
    }
}

/// Loads a heatmap whose shape is taken from the file itself.
fn load_any_heatmap(path: &Path) -> Result<Heatmap> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let shape = if is_csv {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        (rows.len(), rows.first().map_or(0, |r| r.split(',').count()))
    } else {
        let img = corpus::load(path)?;
        img.shape()
    };
    Ok(load_heatmap(path, shape)?)
}

fn attack_one(
    cfg: &RunConfig,
    plan: &HeatmapPlan,
    oracle: &dyn Oracle,
    id: &str,
    image: &ImageTensor,
    target: &str,
    seed: u64,
) -> Result<AttackOutcome> {
    let a = &cfg.attack;
    Ok(match a.name {
        AttackKind::Eclipse => {
            let source = plan.source(id, image, a.occlusion_patch, a.occlusion_stride)?;
            let c = eclipse_core::attacks::EclipseConfig { seed, ..a.eclipse.clone() };
            eclipse_attack(oracle, &source, image, target, &c)?
        }
        AttackKind::Simba => {
            let c = eclipse_core::attacks::SimbaConfig { seed, ..a.simba.clone() };
            simba_attack(oracle, image, target, &c)?
        }
        AttackKind::SimbaDct => {
            let mut c = a.simba_dct.clone();
            c.base.seed = seed;
            simba_dct_attack(oracle, image, target, &c)?
        }
        AttackKind::Square => {
            let c = eclipse_core::attacks::SquareConfig { seed, ..a.square.clone() };
            square_attack_linf(oracle, image, target, &c)?
        }
    })
}

/// Attacks every manifest entry of `corpus_dir` and writes adversarial PNGs,
/// JSON-lines traces, `runs.csv`, `summary.csv` and the resolved config into
/// `out`. Per-image failures are written to `errors.csv` and fail the run.
pub fn run_corpus(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<AttackRun> {
    cfg.validate()?;
    let entries = corpus::read_manifest(corpus_dir)?;
    if entries.is_empty() {
        bail!("corpus {} is empty", corpus_dir.display());
    }
    let oracle = victim(&cfg.oracle)?;
    let plan = HeatmapPlan::new(cfg)?;
    let pool = worker_pool(cfg.attack.workers)?;

    let results: Vec<Result<(ImageTensor, AttackOutcome)>> = pool.install(|| {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let image = corpus::load(&corpus_dir.join(&e.filename))?;
                let seed = cfg.attack.seed.wrapping_add(i as u64);
                let outcome = attack_one(cfg, &plan, oracle.as_ref(), &e.id(), &image, &e.target_label, seed)
                    .with_context(|| format!("attacking {}", e.id()))?;
                Ok((image, outcome))
            })
            .collect()
    });

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut errors = Vec::new();
    let mut run = AttackRun {
        attack: String::new(),
        entries: Vec::new(),
        originals: Vec::new(),
        outcomes: Vec::new(),
        records: Vec::new(),
    };
    for (entry, result) in entries.into_iter().zip(results) {
        match result {
            Ok((image, outcome)) => {
                let id = entry.id();
                let png = format!("adversarial/{id}.png");
                let png_path = out.join(&png);
                std::fs::create_dir_all(png_path.parent().expect("has parent"))?;
                write_png(&outcome.adversarial_image, &png_path)?;
                let mut trace = create_file(&out.join(format!("traces/{id}.jsonl")))?;
                outcome.write_trace(&mut trace, Some(&png))?;
                trace.flush()?;
                run.records.push(RunRecord {
                    id,
                    attack: outcome.attack.clone(),
                    ground_truth: entry.ground_truth_label.clone(),
                    target: entry.target_label.clone(),
                    success: outcome.success,
                    final_fitness: outcome.final_fitness,
                    total_queries: outcome.queries.total_queries,
                    iterations: outcome.iterations_used,
                    adversarial: png,
                });
                run.entries.push(entry);
                run.originals.push(image);
                run.outcomes.push(outcome);
            }
            Err(e) => errors.push((entry.id(), format!("{e:#}"))),
        }
    }
    run.attack = run
        .outcomes
        .first()
        .map_or_else(|| cfg.attack.name.as_str().to_string(), |o| o.attack.clone());

    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    if !run.records.is_empty() {
        corpus::write_runs(out, &run.records)?;
        write_summary(out, &run)?;
    }
    if !errors.is_empty() {
        let mut w = csv::Writer::from_path(out.join("errors.csv"))?;
        w.write_record(["id", "error"])?;
        for (id, msg) in &errors {
            w.write_record([id, msg])?;
        }
        w.flush()?;
        bail!("{} of {} images failed; first: {}: {}", errors.len(), errors.len() + run.records.len(), errors[0].0, errors[0].1);
    }
    Ok(run)
}

fn write_summary(out: &Path, run: &AttackRun) -> Result<()> {
    let stats = query_stats(&run.outcomes)?;
    let n = run.outcomes.len();
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["attack", "images", "successes", "success_rate", "median_queries", "iqr_queries", "failures"])?;
    w.write_record([
        run.attack.clone(),
        n.to_string(),
        stats.successes.to_string(),
        format!("{:.4}", stats.successes as f64 / n as f64),
        cell(stats.median, 1),
        cell(stats.iqr, 1),
        stats.failures.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<AttackRun> {
    let corpus = cfg.attack.corpus.as_ref().context("no corpus given; pass --corpus or set [attack] corpus")?;
    let out = cfg.attack.out.as_ref().context("no output directory; pass --out or set [attack] out")?;
    run_corpus(cfg, corpus, out)
}
