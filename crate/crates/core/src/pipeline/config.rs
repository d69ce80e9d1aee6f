use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierConfig;
use crate::cluster::KMeansParams;
use crate::error::{Error, Result};
use crate::nmt::NmtConfig;
use crate::sentvec::EmbeddingConfig;
use crate::synthetic::SyntheticSpec;
use crate::util::sha256_hex;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Known,
    UnsupSingle,
    UnsupMulti,
    SupervisedPropagate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Argument(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    Tag,
    Feat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub src: PathBuf,
    pub tgt: PathBuf,
    #[serde(default)]
    pub label: Option<String>,
    /// One label per line; empty lines mark unlabeled pairs. Read by
    /// `supervised_propagate` only.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// One ground-truth label per line, used only for reporting.
    #[serde(default)]
    pub latent: Option<PathBuf>,
}

/// Every field left out takes the preset's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmtOverrides {
    pub embed_dim: Option<usize>,
    pub factor_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_steps: Option<usize>,
    pub lr: Option<f64>,
    pub clip_norm: Option<f64>,
    pub max_len: Option<usize>,
    pub beam: Option<usize>,
    pub fine_tune_steps: Option<usize>,
}

fn default_conditioning() -> Vec<Conditioning> {
    vec![Conditioning::Tag, Conditioning::Feat]
}

fn default_seed() -> u64 {
    1
}

fn default_n_dev() -> usize {
    100
}

fn default_n_test() -> usize {
    200
}

fn default_resamples() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u32,
    pub mode: PipelineMode,
    #[serde(default)]
    pub preset: Preset,
    pub work_dir: PathBuf,
    #[serde(default)]
    pub corpora: Vec<CorpusEntry>,
    /// Generated data used instead of `corpora`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_conditioning")]
    pub conditioning: Vec<Conditioning>,
    #[serde(default)]
    pub ks: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_dev")]
    pub n_dev: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_true")]
    pub bpe: bool,
    #[serde(default)]
    pub bpe_vocab_limit: Option<usize>,
    #[serde(default)]
    pub nmt: NmtOverrides,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub kmeans: KMeansParams,
    /// Fraction of labeled pairs kept as the seed labeling in
    /// `supervised_propagate`.
    #[serde(default)]
    pub seed_fraction: Option<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

/// Preset values with the config's overrides applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedScale {
    pub nmt: NmtConfig,
    pub fine_tune_steps: usize,
    pub bpe_vocab_limit: usize,
}

impl Preset {
    pub fn defaults(self) -> ResolvedScale {
        let nmt = NmtConfig::default();
        match self {
            Preset::Desk => ResolvedScale {
                nmt: NmtConfig { max_steps: 2_000, batch_size: 16, ..nmt },
                fine_tune_steps: 400,
                bpe_vocab_limit: 1_000,
            },
            Preset::Paper => ResolvedScale {
                nmt: NmtConfig { max_steps: 800_000, batch_size: 50, ..nmt },
                fine_tune_steps: 60_000,
                bpe_vocab_limit: 65_000,
            },
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative paths in a config file are relative to the file.
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut config.work_dir);
            for c in &mut config.corpora {
                fix(&mut c.src);
                fix(&mut c.tgt);
                c.labels.as_mut().map(fix);
                c.latent.as_mut().map(fix);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.corpora.is_empty() == self.synthetic.is_none() {
            return Err(Error::Config("give either corpora or a synthetic spec".into()));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let unsup = matches!(self.mode, PipelineMode::UnsupSingle | PipelineMode::UnsupMulti);
        if unsup && self.ks.is_empty() {
            return Err(Error::Config("ks must be non-empty for unsupervised modes".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("every k must be positive".into()));
        }
        if self.n_dev == 0 || self.n_test == 0 || self.resamples == 0 {
            return Err(Error::Config("n_dev, n_test and resamples must be positive".into()));
        }
        if self.mode == PipelineMode::UnsupMulti && self.corpora.len() == 1 {
            return Err(Error::Config("unsup_multi needs at least two corpora".into()));
        }
        if !unsup && self.conditioning.is_empty() {
            return Err(Error::Config("conditioning must name tag and/or feat".into()));
        }
        if let Some(f) = self.seed_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("seed_fraction must lie in [0, 1], got {f}")));
            }
        }
        self.scale().nmt.validate()
    }

    pub fn scale(&self) -> ResolvedScale {
        let mut s = self.preset.defaults();
        let o = &self.nmt;
        let n = &mut s.nmt;
        n.embed_dim = o.embed_dim.unwrap_or(n.embed_dim);
        n.factor_dim = o.factor_dim.unwrap_or(n.factor_dim);
        n.hidden_dim = o.hidden_dim.unwrap_or(n.hidden_dim);
        n.batch_size = o.batch_size.unwrap_or(n.batch_size);
        n.max_steps = o.max_steps.unwrap_or(n.max_steps);
        n.lr = o.lr.unwrap_or(n.lr);
        n.clip_norm = o.clip_norm.unwrap_or(n.clip_norm);
        n.max_len = o.max_len.unwrap_or(n.max_len);
        n.beam = o.beam.unwrap_or(n.beam);
        n.seed = self.seed;
        s.fine_tune_steps = o.fine_tune_steps.unwrap_or(s.fine_tune_steps);
        s.bpe_vocab_limit = self.bpe_vocab_limit.unwrap_or(s.bpe_vocab_limit);
        s
    }

    /// Hash of the canonical JSON form, excluding `work_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.work_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
