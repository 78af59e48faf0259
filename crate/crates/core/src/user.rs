//! Simulated-user behaviors: generative item scoring and attribute-based critiquing.
//!
//! An item's score is read from the first-token alternatives after the forced
//! question `Accept the recommendation (Yes/No)?`: the probability mass of
//! `Yes`, renormalized over `Yes` and `No`. A list's score is the mean of its
//! item scores.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::catalog::ItemCatalog;
use crate::domain::{format_item_with_attributes, AttributeKind, ItemId, ScoredItem, Utterance};
use crate::gateway::{self, Backend, GatewayError, GenerationRequest, TokenAlternative};
use crate::num::{mean, renormalized_score};
use crate::prompts::{self, USER_PROMPT_VERSION};
use crate::rng::{derive_seed, sha256_hex};

/// Combined option-token mass below which the score falls back to zero.
pub const MIN_OPTION_MASS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum UserError {
    #[error("item {0} is not in the catalog")]
    UnknownItem(ItemId),
    #[error("cannot score or critique an empty list")]
    EmptyList,
    #[error("{context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("simulated user returned an empty critique twice")]
    EmptyCritique,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardTokenConfig {
    pub question: String,
    pub positive_token: String,
    pub negative_token: String,
}

impl Default for RewardTokenConfig {
    fn default() -> Self {
        Self {
            question: "Accept the recommendation (Yes/No)?".into(),
            positive_token: "Yes".into(),
            negative_token: "No".into(),
        }
    }
}

impl RewardTokenConfig {
    /// Case-insensitive comparison ignoring leading whitespace.
    pub fn token_matches(token: &str, option: &str) -> bool {
        token.trim_start().eq_ignore_ascii_case(option)
    }

    pub fn target(&self, accept: bool) -> String {
        let w = if accept { &self.positive_token } else { &self.negative_token };
        format!("{} {}", self.question, w)
    }
}

/// Score read from one set of alternatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReading {
    pub score: f64,
    /// Neither option token carried meaningful mass; the score is 0.
    pub fell_back: bool,
}

pub fn score_from_alternatives(alternatives: &[TokenAlternative], cfg: &RewardTokenConfig) -> ScoreReading {
    let mass = |option: &str| -> f64 {
        alternatives.iter().filter(|a| RewardTokenConfig::token_matches(&a.token, option)).map(|a| a.probability).sum()
    };
    match renormalized_score(mass(&cfg.positive_token), mass(&cfg.negative_token), MIN_OPTION_MASS) {
        Some(score) => ScoreReading { score, fell_back: false },
        None => ScoreReading { score: 0.0, fell_back: true },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringOutcome {
    pub per_item: Vec<ScoredItem>,
    pub aggregate: f64,
}

impl ScoringOutcome {
    pub fn from_scores(per_item: Vec<ScoredItem>) -> Self {
        let scores: Vec<f64> = per_item.iter().map(|s| s.score).collect();
        let aggregate = mean(&scores).unwrap_or(0.0);
        Self { per_item, aggregate }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ScoreKey {
    history: String,
    item: ItemId,
    version: &'static str,
}

/// Shared score memo keyed by (history digest, item, prompt version).
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: Mutex<HashMap<ScoreKey, f64>>,
    fallbacks: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&self, key: &ScoreKey) -> Option<f64> {
        self.map.lock().expect("score cache poisoned").get(key).copied()
    }

    /// Stores `score` unless the key already has a value; returns the stored value.
    fn get_or_insert(&self, key: ScoreKey, score: f64) -> f64 {
        *self.map.lock().expect("score cache poisoned").entry(key).or_insert(score)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of scoring calls that hit the no-option-token fallback.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::SeqCst)
    }
}

pub fn history_digest(history: &[Utterance]) -> String {
    sha256_hex(&serde_json::to_vec(history).expect("history serializes"))
}

pub fn scoring_request(history: &[Utterance], item_line: &str, cfg: &RewardTokenConfig) -> GenerationRequest {
    GenerationRequest {
        temperature: 0.0,
        max_new_tokens: 1,
        want_token_alternatives: true,
        alternatives_top_k: 10,
        seed: Some(0),
        assistant_prefix: Some(cfg.question.clone()),
        ..GenerationRequest::new(prompts::scoring_messages(history, item_line))
    }
}

fn item_line(catalog: &ItemCatalog, id: ItemId) -> Result<String, UserError> {
    let item = catalog.get(id).ok_or(UserError::UnknownItem(id))?;
    Ok(format_item_with_attributes(item, &AttributeKind::ALL))
}

/// Scores one item without caching.
pub fn score_item(
    backend: &dyn Backend,
    history: &[Utterance],
    catalog: &ItemCatalog,
    item: ItemId,
    cfg: &RewardTokenConfig,
) -> Result<(ScoredItem, ScoreReading), UserError> {
    let request = scoring_request(history, &item_line(catalog, item)?, cfg);
    let result = gateway::generate(backend, &request)
        .map_err(|source| UserError::Gateway { context: format!("scoring item {item}"), source })?;
    let reading = score_from_alternatives(result.first_token_alternatives.as_deref().unwrap_or_default(), cfg);
    Ok((ScoredItem { item_id: item, score: reading.score }, reading))
}

/// Call accounting for a scoring batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringStats {
    /// Item scores requested (sum of list lengths).
    pub requested: u64,
    pub gateway_calls: u64,
    pub cache_hits: u64,
    pub fallbacks: u64,
}

/// Scores several lists for the same history.
///
/// Items already cached, or repeated within the batch, are served without a
/// gateway call, so the number of calls does not depend on scheduling.
pub fn score_lists(
    backend: &dyn Backend,
    history: &[Utterance],
    lists: &[&[ItemId]],
    catalog: &ItemCatalog,
    cfg: &RewardTokenConfig,
    cache: &ScoreCache,
    max_concurrency: usize,
) -> Result<(Vec<ScoringOutcome>, ScoringStats), UserError> {
    let digest = history_digest(history);
    let key = |item: ItemId| ScoreKey { history: digest.clone(), item, version: USER_PROMPT_VERSION };
    let mut stats = ScoringStats::default();
    let mut pending: Vec<ItemId> = Vec::new();
    let mut queued: HashMap<ItemId, usize> = HashMap::new();
    for list in lists {
        if list.is_empty() {
            return Err(UserError::EmptyList);
        }
        for &item in *list {
            stats.requested += 1;
            if cache.get(&key(item)).is_some() || queued.contains_key(&item) {
                stats.cache_hits += 1;
            } else {
                queued.insert(item, pending.len());
                pending.push(item);
            }
        }
    }

    let requests = pending
        .iter()
        .map(|&id| Ok(scoring_request(history, &item_line(catalog, id)?, cfg)))
        .collect::<Result<Vec<_>, UserError>>()?;
    stats.gateway_calls = requests.len() as u64;
    let results = gateway::generate_batch(backend, &requests, max_concurrency);
    let mut fresh = HashMap::with_capacity(pending.len());
    for (id, result) in pending.iter().zip(results.results) {
        let result = result.map_err(|source| UserError::Gateway { context: format!("scoring item {id}"), source })?;
        let reading = score_from_alternatives(result.first_token_alternatives.as_deref().unwrap_or_default(), cfg);
        if reading.fell_back {
            stats.fallbacks += 1;
            cache.fallbacks.fetch_add(1, Ordering::SeqCst);
        }
        fresh.insert(*id, cache.get_or_insert(key(*id), reading.score));
    }

    let outcomes = lists
        .iter()
        .map(|list| {
            let per_item = list
                .iter()
                .map(|&item| {
                    let score = fresh.get(&item).copied().or_else(|| cache.get(&key(item))).expect("scored above");
                    ScoredItem { item_id: item, score }
                })
                .collect();
            ScoringOutcome::from_scores(per_item)
        })
        .collect();
    Ok((outcomes, stats))
}

/// Scores one list through the cache.
pub fn score_list(
    backend: &dyn Backend,
    history: &[Utterance],
    items: &[ItemId],
    catalog: &ItemCatalog,
    cfg: &RewardTokenConfig,
    cache: &ScoreCache,
) -> Result<ScoringOutcome, UserError> {
    let (mut outcomes, _) = score_lists(backend, history, &[items], catalog, cfg, cache, 1)?;
    Ok(outcomes.remove(0))
}

pub fn critique_request(
    history: &[Utterance],
    items: &[ItemId],
    catalog: &ItemCatalog,
    temperature: f64,
    seed: u64,
) -> Result<GenerationRequest, UserError> {
    if items.is_empty() {
        return Err(UserError::EmptyList);
    }
    let lines = items.iter().map(|&i| item_line(catalog, i)).collect::<Result<Vec<_>, _>>()?;
    Ok(GenerationRequest {
        temperature,
        seed: Some(seed),
        max_new_tokens: 256,
        ..GenerationRequest::new(prompts::critique_messages(history, &lines, None))
    })
}

/// One critique per `(items, seed)` job, in job order. Empty replies are
/// retried once with a derived seed.
pub fn critique_lists(
    backend: &dyn Backend,
    history: &[Utterance],
    jobs: &[(&[ItemId], u64)],
    catalog: &ItemCatalog,
    temperature: f64,
    max_concurrency: usize,
) -> Result<Vec<String>, UserError> {
    let requests = jobs
        .iter()
        .map(|(items, seed)| critique_request(history, items, catalog, temperature, *seed))
        .collect::<Result<Vec<_>, _>>()?;
    let results = gateway::generate_batch(backend, &requests, max_concurrency);
    let mut out = Vec::with_capacity(jobs.len());
    for (mut request, result) in requests.into_iter().zip(results.results) {
        let context = || "critiquing list".to_string();
        let mut text = result.map_err(|source| UserError::Gateway { context: context(), source })?.text;
        if text.trim().is_empty() {
            request.seed = Some(derive_seed(request.seed.unwrap_or(0), &[1]));
            text = gateway::generate(backend, &request)
                .map_err(|source| UserError::Gateway { context: context(), source })?
                .text;
            if text.trim().is_empty() {
                return Err(UserError::EmptyCritique);
            }
        }
        out.push(text.trim().to_string());
    }
    Ok(out)
}

pub fn critique_list(
    backend: &dyn Backend,
    history: &[Utterance],
    items: &[ItemId],
    catalog: &ItemCatalog,
    temperature: f64,
    seed: u64,
) -> Result<String, UserError> {
    Ok(critique_lists(backend, history, &[(items, seed)], catalog, temperature, 1)?.remove(0))
}
