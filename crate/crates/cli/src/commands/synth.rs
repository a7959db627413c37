use std::path::Path;

use anyhow::Result;
use eclipse_core::synthetic::{Scenario, ScenarioConfig};
use eclipse_core::tensorops::write_png;

use crate::config::{HeatmapSpec, OracleSource, RunConfig};
use crate::corpus::{self, ManifestEntry};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub images: usize,
    pub benign: usize,
    pub scenario: ScenarioConfig,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            images: 20,
            benign: 120,
            scenario: ScenarioConfig::default(),
        }
    }
}

/// Writes a synthetic victim and surrogate, a labelled attack corpus, a
/// benign corpus and a `run.toml` wiring them together.
pub fn cmd_synth(opts: &SynthOptions, out: &Path) -> Result<RunConfig> {
    let sc = Scenario::new(opts.scenario.clone())?;
    std::fs::create_dir_all(out.join("corpus"))?;
    std::fs::create_dir_all(out.join("benign"))?;
    sc.victim.save(out.join("victim.json"))?;
    sc.surrogate.save(out.join("surrogate.json"))?;

    let mut manifest = Vec::new();
    for item in sc.corpus(opts.images, 0) {
        let filename = format!("{}.png", item.id);
        write_png(&item.image, out.join("corpus").join(&filename))?;
        manifest.push(ManifestEntry {
            filename,
            ground_truth_label: item.ground_truth,
            target_label: item.target,
        });
    }
    corpus::write_manifest(&out.join("corpus"), &manifest)?;
    for (i, img) in sc.benign(opts.benign, 0).iter().enumerate() {
        write_png(img, out.join("benign").join(format!("ben{i:04}.png")))?;
    }

    let mut cfg = RunConfig::default();
    cfg.attack.corpus = Some("corpus".into());
    cfg.attack.out = Some("runs".into());
    cfg.attack.heatmap = HeatmapSpec::Occlusion;
    cfg.oracle.source = Some(OracleSource::Synthetic("victim.json".into()));
    cfg.oracle.surrogate = Some(OracleSource::Synthetic("surrogate.json".into()));
    cfg.eval.benign = Some("benign".into());
    std::fs::write(out.join("run.toml"), cfg.to_toml())?;
    RunConfig::load(&out.join("run.toml"))
}
