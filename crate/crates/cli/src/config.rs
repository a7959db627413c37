//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use eclipse_core::attacks::{EclipseConfig, SimbaConfig, SimbaDctConfig, SquareConfig};
use eclipse_core::eval_p1::DEFAULT_QUALITY;
use eclipse_core::eval_p2::{DetectorParams, DEFAULT_BANDS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Eclipse,
    Simba,
    SimbaDct,
    Square,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Eclipse => "eclipse",
            AttackKind::Simba => "simba",
            AttackKind::SimbaDct => "simba-dct",
            AttackKind::Square => "square",
        }
    }
}

/// `synthetic:<spec.json>` or `http:<url>` (also accepts a bare `http://` or `https://` URL).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSource {
    Synthetic(PathBuf),
    Http(String),
}

impl FromStr for OracleSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Self::Http(s.to_string()));
        }
        match s.split_once(':') {
            Some(("synthetic", p)) if !p.is_empty() => Ok(Self::Synthetic(PathBuf::from(p))),
            Some(("http", u)) if !u.is_empty() => Ok(Self::Http(u.to_string())),
            _ => Err(format!("expected synthetic:<path> or http:<url>, got {s:?}")),
        }
    }
}

impl fmt::Display for OracleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic(p) => write!(f, "synthetic:{}", p.display()),
            Self::Http(u) if u.contains("://") => f.write_str(u),
            Self::Http(u) => write!(f, "http:{u}"),
        }
    }
}

/// `file:<path>` (one heatmap for all images, or a directory of per-image
/// `<id>.png` / `<id>.csv` files) or `occlusion` against the surrogate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeatmapSpec {
    File(PathBuf),
    Occlusion,
}

impl FromStr for HeatmapSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "occlusion" => Ok(Self::Occlusion),
            Some(("file", p)) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
            _ => Err(format!("expected file:<path> or occlusion, got {s:?}")),
        }
    }
}

impl fmt::Display for HeatmapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::File(p) => write!(f, "file:{}", p.display()),
            Self::Occlusion => f.write_str("occlusion"),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}
string_serde!(OracleSource);
string_serde!(HeatmapSpec);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub name: AttackKind,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Base seed; image `i` of the manifest runs with `seed + i`.
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    pub heatmap: HeatmapSpec,
    pub occlusion_patch: usize,
    pub occlusion_stride: usize,
    pub eclipse: EclipseConfig,
    pub simba: SimbaConfig,
    pub simba_dct: SimbaDctConfig,
    pub square: SquareConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            name: AttackKind::Eclipse,
            corpus: None,
            out: None,
            seed: 0,
            workers: 0,
            heatmap: HeatmapSpec::Occlusion,
            occlusion_patch: 4,
            occlusion_stride: 2,
            eclipse: EclipseConfig::default(),
            simba: SimbaConfig::default(),
            simba_dct: SimbaDctConfig::default(),
            square: SquareConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub source: Option<OracleSource>,
    /// Local model used for occlusion heatmaps; never charged to the ledger.
    pub surrogate: Option<OracleSource>,
    pub timeout_secs: f64,
    pub top_k: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            source: None,
            surrogate: None,
            timeout_secs: 30.0,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub quality: Vec<u8>,
    pub bands: usize,
    /// Directory of unattacked images for the detector's negative class.
    pub benign: Option<PathBuf>,
    /// Benign samples per adversarial sample (at most).
    pub benign_ratio: usize,
    pub detector: DetectorParams,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            quality: vec![DEFAULT_QUALITY],
            bands: DEFAULT_BANDS,
            benign: None,
            benign_ratio: 6,
            detector: DetectorParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub attack: AttackSection,
    pub oracle: OracleSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.attack.corpus.as_mut().map(fix);
        cfg.attack.out.as_mut().map(fix);
        cfg.eval.benign.as_mut().map(fix);
        if let HeatmapSpec::File(p) = &mut cfg.attack.heatmap {
            fix(p);
        }
        for src in [&mut cfg.oracle.source, &mut cfg.oracle.surrogate].into_iter().flatten() {
            if let OracleSource::Synthetic(p) = src {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.attack.seed = seed;
        self.eval.detector.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.quality.is_empty() {
            bail!("quality list is empty");
        }
        for &q in &self.eval.quality {
            if !(1..=100).contains(&q) {
                bail!("JPEG quality {q} outside 1..=100");
            }
        }
        if self.eval.bands < 2 {
            bail!("need at least 2 spectral bands");
        }
        if self.eval.benign_ratio == 0 {
            bail!("benign_ratio must be at least 1");
        }
        if self.attack.occlusion_patch == 0 || self.attack.occlusion_stride == 0 {
            bail!("occlusion patch and stride must be positive");
        }
        self.attack.eclipse.validate()?;
        self.attack.simba.validate()?;
        self.attack.simba_dct.base.validate()?;
        self.attack.square.validate()?;
        Ok(())
    }
}
