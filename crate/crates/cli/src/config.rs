//! Experiment configuration file.
//!
//! Values are resolved in three layers: the TOML file, then command-line
//! flags, then environment variables. Example:
//!
//! ```toml
//! seed = 13
//!
//! [paths]
//! corpus = "data/corpus.jsonl"
//! conversations = "data/test.jsonl"
//! index = "data/index"
//! qrels = "data/qrels.tsv"
//!
//! [bm25]
//! k1 = 1.2
//! b = 0.75
//!
//! [policy]
//! tau = 0.5
//! scores = "scores.tsv"
//!
//! [lmgr]
//! n = 20
//! k = 5
//! concurrency = 4
//! embedding_batch = 64
//! embedding_cache = "data/embeddings.json"
//!
//! [lmgr.chat]          # POST {base_url}/chat/completions
//! base_url = "http://localhost:8000/v1"
//! model = "openchat-3.5"
//! api_key = "..."
//!
//! [lmgr.embedding]     # POST {base_url}/embeddings
//! base_url = "http://localhost:8001/v1"
//! model = "all-MiniLM-L6-v2"
//! ```
//!
//! Environment overrides: `PROACT_SEED`, `PROACT_CHAT_BASE_URL`,
//! `PROACT_CHAT_MODEL`, `PROACT_CHAT_API_KEY`, `PROACT_EMBEDDING_BASE_URL`,
//! `PROACT_EMBEDDING_MODEL`, `PROACT_EMBEDDING_API_KEY`.

use std::path::{Path, PathBuf};

use proact_core::index::Bm25Params;
use proact_core::lmgr::PromptTemplates;
use proact_core::{Error, Result};
use proact_providers::EndpointConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub conversations: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub runs: Vec<PathBuf>,
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tau: Option<f64>,
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmgrSection {
    pub n: usize,
    pub k: usize,
    pub concurrency: usize,
    pub embedding_batch: usize,
    pub embedding_cache: Option<PathBuf>,
    pub generation_temperature: f64,
    pub max_retries: u32,
    pub chat: EndpointConfig,
    pub embedding: EndpointConfig,
    pub templates: PromptTemplates,
}

impl Default for LmgrSection {
    fn default() -> Self {
        LmgrSection {
            n: 20,
            k: 5,
            concurrency: 4,
            embedding_batch: 64,
            embedding_cache: None,
            generation_temperature: 0.7,
            max_retries: 3,
            chat: EndpointConfig::default(),
            embedding: EndpointConfig::default(),
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub paths: Paths,
    pub bm25: Bm25Params,
    pub policy: PolicyConfig,
    pub lmgr: LmgrSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 13,
            paths: Paths::default(),
            bm25: Bm25Params::default(),
            policy: PolicyConfig::default(),
            lmgr: LmgrSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Config = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            reason: e.message().to_string(),
        })?;
        Bm25Params::new(config.bm25.k1, config.bm25.b)?;
        Ok(config)
    }

    /// Applies environment overrides through `lookup` (normally
    /// `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seed) = lookup("PROACT_SEED") {
            self.seed = seed
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("PROACT_SEED is not an integer: {seed}")))?;
        }
        for (prefix, endpoint) in [("CHAT", &mut self.lmgr.chat), ("EMBEDDING", &mut self.lmgr.embedding)] {
            if let Some(v) = lookup(&format!("PROACT_{prefix}_BASE_URL")) {
                endpoint.base_url = v;
            }
            if let Some(v) = lookup(&format!("PROACT_{prefix}_MODEL")) {
                endpoint.model = v;
            }
            if let Some(v) = lookup(&format!("PROACT_{prefix}_API_KEY")) {
                endpoint.api_key = Some(v);
            }
        }
        Ok(())
    }
}

/// Picks a flag value over the config value and fails naming both sources
/// when neither is set.
pub fn require_path(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        Error::InvalidArgument(format!("--{name} is required (or set paths.{name} in the config file)"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn parses_partial_file_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 7\n[bm25]\nk1 = 0.9\nb = 0.4\n[lmgr.chat]\nmodel = \"m\"\n").unwrap();
        let c = Config::load(Some(&path)).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.bm25.k1, 0.9);
        assert_eq!(c.lmgr.n, 20);
        assert_eq!(c.lmgr.chat.model, "m");
        assert_eq!(c.lmgr.chat.base_url, "http://localhost:8000/v1");
    }

    #[test]
    fn unknown_keys_and_bad_params_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "\n[bm25]\nk2 = 1.0\n").unwrap();
        let err = Config::load(Some(&path)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        std::fs::write(&path, "[bm25]\nk1 = -1.0\nb = 0.5\n").unwrap();
        assert!(Config::load(Some(&path)).unwrap_err().is_validation());
    }

    #[test]
    fn environment_wins() {
        let env: HashMap<&str, &str> = [("PROACT_SEED", "99"), ("PROACT_CHAT_MODEL", "env-model")].into();
        let mut c = Config::default();
        c.lmgr.chat.model = "file-model".into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(c.lmgr.chat.model, "env-model");
        assert!(c.apply_env(|k| (k == "PROACT_SEED").then(|| "x".to_string())).is_err());
    }
}
