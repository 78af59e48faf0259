//! Run configuration files. Every section is required so that a run is fully
//! described by its config; flags may override individual values.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crsearch::gateway::http::{HttpBackend, HttpConfig, PrefixMode};
use crsearch::gateway::scripted::{OracleUser, RuleBasedCrs};
use crsearch::gateway::{Backend, RetryPolicy};
use crsearch::ranker::{Aggregation, DEFAULT_OUTPUT_LENGTH};
use crsearch::synthesis::SynthesisConfig;
use crsearch::user::RewardTokenConfig;
use crsearch::world::WorldConfig;
use crsearch::{ItemCatalog, ItemId, SearchConfig, Strategy};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub prefix_mode: PrefixMode,
    /// Environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_timeout() -> u64 {
    60_000
}

fn default_key_env() -> String {
    "GATEWAY_API_KEY".into()
}

impl HttpSpec {
    pub fn backend(&self) -> HttpBackend {
        HttpBackend::new(HttpConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key: std::env::var(&self.api_key_env).ok(),
            timeout_ms: self.timeout_ms,
            retry: self.retry,
            prefix_mode: self.prefix_mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CrsBackendSpec {
    /// Attribute-overlap recommender over the catalog.
    RuleBased,
    Http(HttpSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UserBackendSpec {
    /// Scripted user whose hidden preference is the turn's ground truth.
    Oracle,
    Http(HttpSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherBackendSpec {
    /// Scripted critic that reads the preference block of the prompt.
    OracleTeacher,
    Http(HttpSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerConfig {
    pub l_out: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self { l_out: DEFAULT_OUTPUT_LENGTH, aggregation: Aggregation::Max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRunConfig {
    pub catalog: PathBuf,
    pub strategy: Strategy,
    pub search: SearchConfig,
    pub crs_backend: CrsBackendSpec,
    pub user_backend: UserBackendSpec,
    pub ranker: RankerConfig,
    #[serde(default)]
    pub reward_tokens: RewardTokenConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub synthesis: SynthesisConfig,
    pub teacher_backend: TeacherBackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub world: WorldConfig,
    pub episodes: u64,
    pub strategies: Vec<Strategy>,
    pub search: SearchConfig,
    pub ranker: RankerConfig,
    pub cuts: Vec<usize>,
}

/// Reads a JSON config; any parse or schema problem is a usage error that
/// names the offending key.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, UsageError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| UsageError(format!("reading config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
}

/// Resolves a path from a config file relative to the config's directory.
pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn crs_backend(spec: &CrsBackendSpec, catalog: &Arc<ItemCatalog>) -> Box<dyn Backend> {
    match spec {
        CrsBackendSpec::RuleBased => Box::new(RuleBasedCrs::new(Arc::clone(catalog))),
        CrsBackendSpec::Http(h) => Box::new(h.backend()),
    }
}

/// User backends can depend on the turn (the oracle knows its ground truth).
pub enum UserBackends {
    Oracle,
    Shared(Box<dyn Backend>),
}

impl UserBackends {
    pub fn new(spec: &UserBackendSpec) -> Self {
        match spec {
            UserBackendSpec::Oracle => Self::Oracle,
            UserBackendSpec::Http(h) => Self::Shared(Box::new(h.backend())),
        }
    }

    pub fn for_turn(&self, catalog: &ItemCatalog, gt: &[ItemId]) -> Box<dyn Backend + '_> {
        match self {
            Self::Oracle => Box::new(OracleUser::for_items(catalog, gt)),
            Self::Shared(b) => Box::new(b.as_ref()),
        }
    }
}

pub fn teacher_backend(spec: &TeacherBackendSpec) -> Box<dyn Backend> {
    match spec {
        TeacherBackendSpec::OracleTeacher => Box::new(OracleUser::teacher()),
        TeacherBackendSpec::Http(h) => Box::new(h.backend()),
    }
}
