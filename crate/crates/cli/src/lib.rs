//! Commands behind the `crsearch` binary. Each command writes a manifest that
//! records its inputs, seeds, prompt versions and effective configuration.

pub mod ablate;
pub mod config;
pub mod evaluate;
pub mod ingest;
pub mod search;
pub mod synthesize;

use std::path::Path;

use anyhow::Context;
use serde::Serialize;

/// Bad flags or config; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit code for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    crsearch::rng::sha256_hex(bytes)
}

pub fn digest_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(digest_bytes(&bytes))
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    digest_bytes(&serde_json::to_vec(value).expect("value serializes"))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Prompt template versions, echoed into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct PromptVersions {
    pub crs: &'static str,
    pub user: &'static str,
}

pub const PROMPT_VERSIONS: PromptVersions =
    PromptVersions { crs: crsearch::prompts::CRS_PROMPT_VERSION, user: crsearch::prompts::USER_PROMPT_VERSION };
