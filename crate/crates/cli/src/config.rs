//! The declarative run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use coref_core::config::{ModelConfig, TrainConfig};

/// Relative paths resolve against this directory when it is set, and
/// against the configuration file's directory otherwise.
pub const DATA_ROOT_ENV: &str = "COREF_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFile {
    pub path: PathBuf,
    pub dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Fixed embedding tables, concatenated in this order.
    pub embeddings: Vec<EmbeddingFile>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Checkpoints averaged at prediction time.
    pub members: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: Paths::default(),
            model: ModelConfig {
                embedding_dims: Vec::new(),
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.model.embedding_dims = config.paths.embeddings.iter().map(|e| e.dim).collect();
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialise")
    }

    /// Reads `path`, makes every referenced path absolute and checks that
    /// the referenced input files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = RunConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        config.resolve(&base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.train, &mut paths.dev, &mut paths.test, &mut paths.checkpoint_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for e in &mut paths.embeddings {
            fix(&mut e.path);
        }
        for m in &mut self.ensemble.members {
            fix(m);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(anyhow::Error::msg).context("invalid [model] section")?;
        self.train.validate().map_err(anyhow::Error::msg).context("invalid [train] section")?;
        let inputs = [&self.paths.train, &self.paths.dev, &self.paths.test]
            .into_iter()
            .flatten()
            .chain(self.paths.embeddings.iter().map(|e| &e.path))
            .chain(&self.ensemble.members);
        for p in inputs {
            if !p.is_file() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> Result<&Path> {
        self.paths
            .checkpoint_dir
            .as_deref()
            .context("the config needs paths.checkpoint_dir")
    }
}
