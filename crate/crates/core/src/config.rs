//! The shared pipeline configuration file (TOML).
//!
//! ```toml
//! version = 1
//! seed = 0
//! concurrency = 8
//! cache_dir = "cache"        # optional
//! templates_dir = "prompts"  # optional, overrides built-in templates
//!
//! [paths]
//! store = "store"
//! index = "index"
//!
//! [retrieval]
//! sparse_depth = 32
//! dense_depth = 32
//! final_depth = 32
//! bm25_depth = 32
//!
//! [stages]
//! rewrite = true
//! expand = true
//! retriever = "hybrid"       # or "none", "bm25", "sparse", "dense", ...
//! relevance = true
//! usefulness = true
//!
//! [providers]
//! kind = "mock"              # or "http"
//! mock_script = "script.jsonl"
//! mock_scorer = "dense"      # or "lexical"
//!
//! [providers.chat]           # http only, likewise dense, sparse, scorer
//! endpoint = "https://..."
//! api_key_env = "RAGMED_API_KEY"
//! model = "..."
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::providers::{
    CachedChat, CachedScorer, ChatProvider, HttpChat, HttpDense, HttpScorer, HttpSparse, MockChat,
    MockDense, MockScorer, MockSparse, PairScorer, ProviderConfig, Providers, Transport, Truncation,
    UreqTransport, DEFAULT_DENSE_DIM, DEFAULT_VOCAB_SIZE,
};
use crate::reader::{Pipeline, StageToggles};
use crate::retrieval::{HybridIndex, RetrievalParams, RetrieverVariant};
use crate::templates::TemplateSet;
use crate::corpus::ChunkStore;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub store: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockScorerKind {
    #[default]
    Dense,
    Lexical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub kind: ProviderKind,
    pub mock_script: Option<PathBuf>,
    pub mock_scorer: MockScorerKind,
    pub dense_dim: usize,
    pub vocab_size: u32,
    pub chat: Option<ProviderConfig>,
    pub dense: Option<ProviderConfig>,
    pub sparse: Option<ProviderConfig>,
    pub scorer: Option<ProviderConfig>,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            mock_script: None,
            mock_scorer: MockScorerKind::Dense,
            dense_dim: DEFAULT_DENSE_DIM,
            vocab_size: DEFAULT_VOCAB_SIZE,
            chat: None,
            dense: None,
            sparse: None,
            scorer: None,
        }
    }
}

/// Stage toggles as written in the file; `retriever = "none"` disables
/// retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub rewrite: bool,
    pub expand: bool,
    #[serde(serialize_with = "ser_retriever", deserialize_with = "de_retriever")]
    pub retriever: Option<RetrieverVariant>,
    pub relevance: bool,
    pub usefulness: bool,
}

impl Default for StagesConfig {
    fn default() -> Self {
        StageToggles::default().into()
    }
}

impl From<StageToggles> for StagesConfig {
    fn from(t: StageToggles) -> Self {
        Self {
            rewrite: t.rewrite,
            expand: t.expand,
            retriever: t.retriever,
            relevance: t.relevance,
            usefulness: t.usefulness,
        }
    }
}

impl From<StagesConfig> for StageToggles {
    fn from(t: StagesConfig) -> Self {
        Self {
            rewrite: t.rewrite,
            expand: t.expand,
            retriever: t.retriever,
            relevance: t.relevance,
            usefulness: t.usefulness,
        }
    }
}

fn ser_retriever<S: Serializer>(v: &Option<RetrieverVariant>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(v.map(RetrieverVariant::as_str).unwrap_or("none"))
}

fn de_retriever<'de, D: Deserializer<'de>>(d: D) -> Result<Option<RetrieverVariant>, D::Error> {
    let s = String::deserialize(d)?;
    if s == "none" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        serde::de::Error::custom(format!(
            "unknown retriever {s:?}; expected none, bm25, sparse, dense, sparse+dense, sparse+rerank, dense+rerank or hybrid"
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub paths: Paths,
    pub retrieval: RetrievalParams,
    pub stages: StagesConfig,
    pub providers: ProvidersConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            concurrency: crate::eval::DEFAULT_CONCURRENCY,
            cache_dir: None,
            templates_dir: None,
            paths: Paths::default(),
            retrieval: RetrievalParams::default(),
            stages: StagesConfig::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

/// What a command is about to use, for path checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub store: bool,
    pub index: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.cache_dir);
        fix(&mut self.templates_dir);
        fix(&mut self.paths.store);
        fix(&mut self.paths.index);
        fix(&mut self.providers.mock_script);
    }

    /// Every problem with the configuration, not just the first.
    pub fn violations(&self, needs: Needs) -> Vec<String> {
        let mut v = Vec::new();
        if self.version != CONFIG_VERSION {
            v.push(format!("version must be {CONFIG_VERSION}, found {}", self.version));
        }
        if self.concurrency == 0 {
            v.push("concurrency must be >= 1".into());
        }
        v.extend(self.retrieval.violations());
        let mut need_path = |name: &str, p: &Option<PathBuf>| match p {
            None => v.push(format!("paths.{name} is required")),
            Some(p) if !p.exists() => v.push(format!("paths.{name} does not exist: {}", p.display())),
            _ => {}
        };
        if needs.store {
            need_path("store", &self.paths.store);
        }
        if needs.index {
            need_path("index", &self.paths.index);
        }
        if let Some(t) = &self.templates_dir {
            if !t.is_dir() {
                v.push(format!("templates_dir does not exist: {}", t.display()));
            }
        }
        let p = &self.providers;
        if p.dense_dim == 0 {
            v.push("providers.dense_dim must be >= 1".into());
        }
        if p.vocab_size == 0 {
            v.push("providers.vocab_size must be >= 1".into());
        }
        match p.kind {
            ProviderKind::Mock => {
                if let Some(s) = &p.mock_script {
                    if !s.is_file() {
                        v.push(format!("providers.mock_script does not exist: {}", s.display()));
                    }
                }
            }
            ProviderKind::Http => {
                for (name, c) in [("chat", &p.chat), ("dense", &p.dense), ("sparse", &p.sparse), ("scorer", &p.scorer)] {
                    match c {
                        None => v.push(format!("providers.{name} is required for kind = \"http\"")),
                        Some(c) => v.extend(c.validate(name)),
                    }
                }
            }
        }
        v
    }

    pub fn validate(&self, needs: Needs) -> Result<()> {
        let v = self.violations(needs);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn stage_toggles(&self) -> StageToggles {
        self.stages.into()
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir),
            None => Ok(TemplateSet::default()),
        }
    }

    /// Construct the four services, with the chat and scorer behind the
    /// on-disk cache when `cache_dir` is set.
    pub fn providers(&self) -> Result<Providers> {
        let p = &self.providers;
        let seed = self.seed;
        let (chat, dense, sparse, scorer): (
            Arc<dyn ChatProvider>,
            Arc<dyn crate::providers::DenseEmbedder>,
            Arc<dyn crate::providers::SparseEncoder>,
            Arc<dyn PairScorer>,
        ) = match p.kind {
            ProviderKind::Mock => {
                let chat = match &p.mock_script {
                    Some(path) => MockChat::from_script_file(path)?,
                    None => MockChat::new(),
                };
                let d = MockDense::new(p.dense_dim, seed);
                let s = MockSparse::new(p.vocab_size, seed);
                let scorer = match p.mock_scorer {
                    MockScorerKind::Dense => MockScorer::dense(d.clone()),
                    MockScorerKind::Lexical => MockScorer::lexical(s.clone()),
                };
                (Arc::new(chat), Arc::new(d), Arc::new(s), Arc::new(scorer))
            }
            ProviderKind::Http => {
                let t: Arc<dyn Transport> = Arc::new(UreqTransport);
                let cfg = |c: &Option<ProviderConfig>, name: &str| {
                    c.clone()
                        .ok_or_else(|| Error::Config(vec![format!("providers.{name} is required")]))
                };
                (
                    Arc::new(HttpChat::new(cfg(&p.chat, "chat")?, t.clone())?),
                    Arc::new(HttpDense::new(cfg(&p.dense, "dense")?, t.clone(), p.dense_dim)?),
                    Arc::new(HttpSparse::new(cfg(&p.sparse, "sparse")?, t.clone(), p.vocab_size)?),
                    Arc::new(HttpScorer::new(cfg(&p.scorer, "scorer")?, t, Truncation::default())?),
                )
            }
        };
        let (chat, scorer): (Arc<dyn ChatProvider>, Arc<dyn PairScorer>) = match &self.cache_dir {
            Some(dir) => (
                Arc::new(CachedChat::new(chat, dir.clone())),
                Arc::new(CachedScorer::new(scorer, dir.clone())),
            ),
            None => (chat, scorer),
        };
        Ok(Providers {
            chat,
            dense,
            sparse,
            scorer,
        })
    }

    pub fn load_store(&self) -> Result<Arc<ChunkStore>> {
        let dir = self
            .paths
            .store
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["paths.store is required".into()]))?;
        Ok(Arc::new(ChunkStore::load(dir)?))
    }

    pub fn load_index(&self) -> Result<Arc<HybridIndex>> {
        let dir = self
            .paths
            .index
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["paths.index is required".into()]))?;
        Ok(Arc::new(HybridIndex::load(dir, self.load_store()?)?))
    }

    /// A ready pipeline; the index is loaded only when retrieval is on.
    pub fn pipeline(&self) -> Result<Pipeline> {
        let stages = self.stage_toggles();
        let index = match stages.retriever {
            Some(_) => Some(self.load_index()?),
            None => None,
        };
        let mut p = Pipeline::new(self.providers()?, index, stages);
        p.templates = self.templates()?;
        p.params = self.retrieval;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml(), Path::new("/")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn retriever_none_and_variants() {
        let c = PipelineConfig::from_toml("[stages]\nretriever = \"none\"\n", Path::new(".")).unwrap();
        assert_eq!(c.stages.retriever, None);
        let c = PipelineConfig::from_toml("[stages]\nretriever = \"sparse+rerank\"\n", Path::new(".")).unwrap();
        assert_eq!(c.stages.retriever, Some(RetrieverVariant::SparseRerank));
        assert!(PipelineConfig::from_toml("[stages]\nretriever = \"magic\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn all_violations_listed() {
        let text = "concurrency = 0\n[retrieval]\nsparse_depth = 0\n[providers]\nkind = \"http\"\n";
        let c = PipelineConfig::from_toml(text, Path::new(".")).unwrap();
        let v = c.violations(Needs { store: true, index: false });
        assert!(v.iter().any(|m| m.contains("concurrency")));
        assert!(v.iter().any(|m| m.contains("sparse_depth")));
        assert!(v.iter().any(|m| m.contains("paths.store")));
        assert!(v.iter().any(|m| m.contains("providers.chat")));
        assert!(v.len() >= 7);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let c = PipelineConfig::from_toml("[paths]\nstore = \"s\"\n", Path::new("/cfg")).unwrap();
        assert_eq!(c.paths.store, Some(PathBuf::from("/cfg/s")));
    }
}
