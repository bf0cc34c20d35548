//! Experiment configuration.
//!
//! One TOML file per experiment. Top-level keys:
//!
//! | key           | type    | default       | meaning                                              |
//! |---------------|---------|---------------|------------------------------------------------------|
//! | `name`        | string  | `"experiment"`| label copied into reports                            |
//! | `suite`       | string  | `"scripted"`  | `scripted` (synthetic world) or `llm` (HTTP agents)  |
//! | `seed`        | integer | `0`           | master seed; every other seed is derived from it     |
//! | `variant`     | string  | `"standard"`  | `standard` or `efficiency`                           |
//! | `attack`      | bool    | `false`       | insert the adversarial role into the catalog         |
//! | `policy`      | string  | `"learned"`   | `learned`, `oracle` (scripted only) or `random`      |
//! | `out_dir`     | path    | `"runs/out"`  | output directory                                     |
//! | `checkpoint`  | path    | unset         | checkpoint for `eval`/`route`; default `out_dir/checkpoint.json` |
//! | `workers`     | integer | `4`           | concurrent evaluation episodes                       |
//! | `train_tasks` | integer | `80`          | training questions                                   |
//! | `test_tasks`  | integer | `100`         | held-out questions (scripted suite)                  |
//! | `catalog`     | path    | unset         | role catalog JSON (`llm` suite)                      |
//! | `queries`     | path    | unset         | query JSONL (`llm` suite)                            |
//!
//! Tables: `[world]` ([`WorldConfig`]), `[router]` ([`RouterConfig`]),
//! `[train]` ([`TrainConfig`], with `[train.optimizer]`), `[episode]`
//! ([`EpisodeConfig`]), `[encoder]` ([`EncoderConfig`]) and `[endpoint]`
//! ([`EndpointConfig`], `llm` suite).
//!
//! The `efficiency` variant defaults `train.gamma = 0.9`,
//! `train.lambda = 0.001` and `episode.window_cap = 2`; explicit values win.
//! Seed fields inside tables and `router.embed_dim` are overwritten: seeds
//! come from the master seed and the embedding width from the encoder.
//!
//! Relative paths resolve against the config file's directory.
//!
//! The catalog file holds `{"roles": [{"id", "role_prompt", "tools",
//! "is_decision"}]}`. Query JSONL lines hold `{"id", "text", "answer"}`;
//! the first `train_tasks` lines train, the rest evaluate (all lines when
//! none remain).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{EndpointConfig, WorldConfig};
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::orchestrator::EpisodeConfig;
use crate::router::RouterConfig;
use crate::trainer::{TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    #[default]
    Scripted,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Learned,
    Oracle,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub suite: SuiteKind,
    pub seed: u64,
    pub variant: Variant,
    pub attack: bool,
    pub policy: PolicyKind,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub workers: usize,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub catalog: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub world: WorldConfig,
    pub router: RouterConfig,
    pub train: TrainConfig,
    pub episode: EpisodeConfig,
    pub encoder: EncoderConfig,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            suite: SuiteKind::Scripted,
            seed: 0,
            variant: Variant::Standard,
            attack: false,
            policy: PolicyKind::Learned,
            out_dir: PathBuf::from("runs/out"),
            checkpoint: None,
            workers: 4,
            train_tasks: 80,
            test_tasks: 100,
            catalog: None,
            queries: None,
            world: WorldConfig::default(),
            router: RouterConfig::default(),
            train: TrainConfig::default(),
            episode: EpisodeConfig::default(),
            encoder: EncoderConfig::default(),
            endpoint: None,
        }
    }
}

/// Seeds derived from the master seed.
pub mod seeds {
    pub fn world(seed: u64) -> u64 {
        seed
    }
    pub fn train_tasks(seed: u64) -> u64 {
        seed.wrapping_add(1)
    }
    pub fn test_tasks(seed: u64) -> u64 {
        seed.wrapping_add(2)
    }
    pub fn router_init(seed: u64) -> u64 {
        seed.wrapping_add(3)
    }
    pub fn train(seed: u64) -> u64 {
        seed.wrapping_add(4)
    }
    pub fn eval(seed: u64) -> u64 {
        seed.wrapping_add(5)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        if value.get("variant").and_then(|v| v.as_str()) == Some("efficiency") {
            let train = table(&mut value, "train")?;
            train.entry("gamma").or_insert(toml::Value::Float(0.9));
            train.entry("lambda").or_insert(toml::Value::Float(1e-3));
            let episode = table(&mut value, "episode")?;
            episode.entry("window_cap").or_insert(toml::Value::Integer(2));
        }
        let mut config: ExperimentConfig =
            value.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.resolve();
        config.validate()?;
        Ok(config)
    }

    /// Loads and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in
            [Some(&mut config.out_dir), config.checkpoint.as_mut(), config.catalog.as_mut(), config.queries.as_mut()]
                .into_iter()
                .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.check_files()?;
        Ok(config)
    }

    /// Applies the master seed and derived fields.
    pub fn resolve(&mut self) {
        self.world.seed = seeds::world(self.seed);
        self.router.init_seed = seeds::router_init(self.seed);
        self.router.embed_dim = self.encoder.output_dim();
        self.train.seed = seeds::train(self.seed);
        self.train.variant = self.variant;
        self.train.questions = self.train_tasks;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolve();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.train_tasks == 0 {
            return Err(Error::Config("workers and train_tasks must be >= 1".into()));
        }
        self.router.validate()?;
        self.train.validate()?;
        self.episode.validate()?;
        match self.suite {
            SuiteKind::Scripted => {
                self.world.validate()?;
                if self.test_tasks == 0 {
                    return Err(Error::Config("test_tasks must be >= 1".into()));
                }
            }
            SuiteKind::Llm => {
                if self.catalog.is_none() || self.queries.is_none() || self.endpoint.is_none() {
                    return Err(Error::Config("llm suite needs catalog, queries and [endpoint]".into()));
                }
                if self.policy == PolicyKind::Oracle {
                    return Err(Error::Config("oracle policy needs the scripted suite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<()> {
        for p in [&self.catalog, &self.queries].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join(crate::trainer::TrainOutputs::CHECKPOINT))
    }

    /// SHA-256 of the resolved config, excluding output locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.checkpoint = None;
        let text = serde_json::to_string(&c).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn table<'a>(root: &'a mut toml::Table, key: &str) -> Result<&'a mut toml::Table> {
    root.entry(key)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a table")))
}
