//! Command-line front end: attack corpora, evaluate compression robustness
//! and detectability, run the ablation matrix, and generate synthetic setups.

pub mod commands;
pub mod config;
pub mod corpus;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{AttackKind, HeatmapSpec, OracleSource, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "eclipse", version, about = "Black-box adversarial attacks and their evaluation")]
pub struct Cli {
    /// TOML file with [attack], [oracle] and [eval] sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attack every image of a corpus.
    Attack(AttackArgs),
    /// JPEG robustness of the successful examples of one or more runs.
    EvalP1(EvalP1Args),
    /// Spectral detectors and query statistics for one or more runs.
    EvalP2(EvalP2Args),
    /// Full ECLIPSE vs. no blur vs. no surrogate mask.
    Ablation(AblationArgs),
    /// Write a synthetic victim, surrogate and corpora.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// synthetic:<spec.json> or http:<url>
    #[arg(long)]
    pub oracle: Option<OracleSource>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub attack: Option<AttackKind>,
    /// file:<path> or occlusion
    #[arg(long)]
    pub heatmap: Option<HeatmapSpec>,
    /// Local model for occlusion heatmaps, same syntax as --oracle.
    #[arg(long)]
    pub surrogate: Option<OracleSource>,
    /// Directory holding manifest.csv and the images it lists.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalP1Args {
    #[command(flatten)]
    pub common: Common,
    /// Output directories of earlier `attack` runs.
    #[arg(long = "runs", num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Comma-separated JPEG qualities, e.g. 50,75,95.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: Option<Vec<u8>>,
}

#[derive(Debug, Args)]
pub struct EvalP2Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "runs", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Precomputed features files with both classes; the file stem names the row.
    #[arg(long = "features", num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Directory of unattacked images.
    #[arg(long)]
    pub benign: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub heatmap: Option<HeatmapSpec>,
    #[arg(long)]
    pub surrogate: Option<OracleSource>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub benign: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: Option<Vec<u8>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 120)]
    pub benign: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub labels: usize,
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(o) = &c.oracle {
        cfg.oracle.source = Some(o.clone());
    }
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.attack.out = Some(o.clone());
    }
    if let Some(w) = c.workers {
        cfg.attack.workers = w;
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.attack
        .out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no output directory; pass --out or set [attack] out"))
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Attack(a) => {
            apply_common(&mut cfg, &a.common);
            if let Some(k) = a.attack {
                cfg.attack.name = k;
            }
            if let Some(h) = a.heatmap {
                cfg.attack.heatmap = h;
            }
            if let Some(s) = a.surrogate {
                cfg.oracle.surrogate = Some(s);
            }
            if let Some(c) = a.corpus {
                cfg.attack.corpus = Some(c);
            }
            let run = commands::cmd_attack(&cfg)?;
            let ok = run.records.iter().filter(|r| r.success).count();
            println!("{}: {ok}/{} successful", run.attack, run.records.len());
        }
        Command::EvalP1(a) => {
            apply_common(&mut cfg, &a.common);
            if let Some(q) = a.quality {
                cfg.eval.quality = q;
            }
            let rows = commands::cmd_eval_p1(&cfg, &a.runs, &out_dir(&cfg)?)?;
            println!("{} report rows", rows.len());
        }
        Command::EvalP2(a) => {
            apply_common(&mut cfg, &a.common);
            if let Some(b) = a.benign {
                cfg.eval.benign = Some(b);
            }
            for row in commands::cmd_eval_p2(&cfg, &a.runs, &a.features, &out_dir(&cfg)?)? {
                println!("{}: ROC AUC {}", row.attack, row.report.roc_auc);
            }
        }
        Command::Ablation(a) => {
            apply_common(&mut cfg, &a.common);
            if let Some(h) = a.heatmap {
                cfg.attack.heatmap = h;
            }
            if let Some(s) = a.surrogate {
                cfg.oracle.surrogate = Some(s);
            }
            if let Some(c) = a.corpus {
                cfg.attack.corpus = Some(c);
            }
            if let Some(b) = a.benign {
                cfg.eval.benign = Some(b);
            }
            if let Some(q) = a.quality {
                cfg.eval.quality = q;
            }
            let rows = commands::cmd_ablation(&cfg)?;
            println!("{} ablation rows", rows.len());
        }
        Command::Synth(a) => {
            let opts = commands::SynthOptions {
                images: a.images,
                benign: a.benign,
                scenario: eclipse_core::synthetic::ScenarioConfig {
                    height: a.size,
                    width: a.size,
                    labels: a.labels,
                    seed: a.seed,
                    ..Default::default()
                },
            };
            commands::cmd_synth(&opts, &a.out)?;
            println!("wrote {}", a.out.join("run.toml").display());
        }
    }
    Ok(())
}
