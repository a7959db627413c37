mod ablation;
mod attack;
mod p1;
mod p2;
mod synth;

pub use ablation::{cmd_ablation, AblationRow, ABLATION_VARIANTS};
pub use attack::{cmd_attack, run_corpus, AttackRun};
pub use p1::{cmd_eval_p1, p1_rows, P1Row};
pub use p2::{benign_features, cmd_eval_p2, detector_for, DetectorRow};
pub use synth::{cmd_synth, SynthOptions};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use eclipse_core::oracle::{Oracle, OracleEndpointConfig, RemoteOracle, SyntheticOracle, SyntheticOracleSpec};

use crate::config::{OracleSection, OracleSource};

pub fn build_oracle(source: &OracleSource, section: &OracleSection) -> Result<Box<dyn Oracle>> {
    Ok(match source {
        OracleSource::Synthetic(path) => {
            let spec = SyntheticOracleSpec::load(path).with_context(|| format!("loading oracle {}", path.display()))?;
            Box::new(SyntheticOracle::new(spec)?)
        }
        OracleSource::Http(url) => {
            let endpoint = OracleEndpointConfig {
                timeout_secs: section.timeout_secs,
                top_k: section.top_k,
                ..OracleEndpointConfig::new(url.clone())
            }
            .with_env_token();
            Box::new(RemoteOracle::new(endpoint)?)
        }
    })
}

pub(crate) fn victim(section: &OracleSection) -> Result<Box<dyn Oracle>> {
    let src = section
        .source
        .as_ref()
        .context("no oracle given; pass --oracle or set [oracle] source")?;
    build_oracle(src, section)
}

pub(crate) fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Blank cell for absent values.
pub(crate) fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(String::new, |v| format!("{v:.decimals$}"))
}
