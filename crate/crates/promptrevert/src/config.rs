//! One YAML-or-JSON file with a section per stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use promptrevert_core::backend::{make_toy_backend, ToyBackend, ToyBackendSpec};
use promptrevert_core::e2t::TrainConfig;
use promptrevert_core::types::InversionConfig;
use serde::{Deserialize, Serialize};

use crate::remote::RemoteConfig;

pub const CONFIG_ENV: &str = "PROMPTREVERT_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub captioner: CaptionerConfig,
    pub optimizer: InversionConfig,
    pub e2t: E2tConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub plugin: String,
    pub toy: ToyBackendSpec,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            plugin: "toy".into(),
            toy: ToyBackendSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaptionerConfig {
    /// JSON object mapping image hashes to captions.
    Fixture { path: Option<PathBuf> },
    Remote(RemoteConfig),
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        CaptionerConfig::Fixture { path: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2tConfig {
    /// Trained checkpoint directory. Without one, models are trained on the
    /// synthetic corpus at startup.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub corpus_size: usize,
    pub corpus_seed: u64,
}

impl Default for E2tConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            train: TrainConfig::default(),
            corpus_size: 500,
            corpus_seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// JSONL prompt corpus for the bigram scorer; the synthetic training
    /// corpus when absent.
    pub corpus: Option<PathBuf>,
    pub smoothing: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            smoothing: promptrevert_core::eval::BigramLm::DEFAULT_SMOOTHING,
        }
    }
}

impl Config {
    pub fn from_str(text: &str) -> anyhow::Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        Ok(serde_yaml::from_str(text)?)
    }

    /// Parse a file; relative paths inside are resolved against its
    /// directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut cfg.e2t.checkpoint);
        fix(&mut cfg.eval.corpus);
        if let CaptionerConfig::Fixture { path } = &mut cfg.captioner {
            fix(path);
        }
        Ok(cfg)
    }

    /// `explicit`, else the path in `PROMPTREVERT_CONFIG`, else defaults.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env) {
            Some(p) => Self::from_file(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.optimizer.validate()?;
        self.e2t.train.validate()?;
        if self.e2t.corpus_size == 0 {
            bail!("e2t.corpus_size must be positive");
        }
        Ok(())
    }

    pub fn build_backend(&self) -> anyhow::Result<ToyBackend> {
        match self.backend.plugin.as_str() {
            "toy" => Ok(make_toy_backend(self.backend.toy.clone())?),
            other => bail!("unknown backend plugin {other:?} (available: toy)"),
        }
    }
}
