//! Reward-guided search over recommended lists.
//!
//! A state is a recommended list, an action is a critique sampled from the
//! simulated user, and the transition asks the recommender to revise the list
//! given that critique. The reward of a state is the mean of its per-item
//! acceptance scores.
//!
//! Beam search starts from `init_count` independently sampled lists. Each
//! iteration scores the new frontier, keeps the best `B`, and (except on the
//! last iteration) expands each kept state into `N` children. Monte Carlo and
//! greedy search are presets of the same loop.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{ItemCatalog, DEFAULT_MATCH_THRESHOLD};
use crate::crs::{self, RecommendationPrompt};
use crate::domain::{Critique, Item, ItemId, SearchState, StateId, Utterance};
use crate::gateway::{self, Backend};
use crate::rng::derive_seed;
use crate::user::{self, RewardTokenConfig, ScoreCache, UserError};

const INIT_STREAM: u64 = 0x1417;
const CRITIQUE_STREAM: u64 = 0xC817;
const REVISE_STREAM: u64 = 0x4E71;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("state {0} has not been scored")]
    Unscored(StateId),
    #[error("conversation history is empty")]
    EmptyHistory,
    #[error(transparent)]
    User(#[from] UserError),
    #[error("{context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: gateway::GatewayError,
    },
}

fn one() -> usize {
    1
}

fn default_threshold() -> f64 {
    DEFAULT_MATCH_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Retained states per iteration (B).
    pub beam_width: usize,
    /// Children per retained state (N), at least B.
    pub expand_width: usize,
    /// Number of scoring iterations (D).
    pub depth: usize,
    /// Initial sampled lists; defaults to N².
    #[serde(default)]
    pub init_count: Option<usize>,
    pub list_length: usize,
    pub init_temperature: f64,
    pub critique_temperature: f64,
    pub revision_temperature: f64,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub match_threshold: f64,
    /// Execution detail; not part of the serialized search description.
    #[serde(default = "one", skip_serializing)]
    pub max_concurrency: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beam_width: 4,
            expand_width: 4,
            depth: 5,
            init_count: None,
            list_length: 10,
            init_temperature: 1.0,
            critique_temperature: 1.0,
            revision_temperature: 1.0,
            seed: 0,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            max_concurrency: 1,
        }
    }
}

impl SearchConfig {
    pub fn init_count(&self) -> usize {
        self.init_count.unwrap_or(self.expand_width * self.expand_width)
    }

    /// Lists scored by a complete beam run with this config.
    pub fn scored_budget(&self) -> usize {
        self.init_count() + self.depth.saturating_sub(1) * self.beam_width * self.expand_width
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.beam_width < 1 {
            return bad("beam_width must be >= 1".into());
        }
        if self.expand_width < self.beam_width {
            return bad(format!("expand_width {} < beam_width {}", self.expand_width, self.beam_width));
        }
        if self.depth < 1 {
            return bad("depth must be >= 1".into());
        }
        if self.init_count() < self.beam_width {
            return bad(format!("init_count {} < beam_width {}", self.init_count(), self.beam_width));
        }
        if self.list_length < 1 {
            return bad("list_length must be >= 1".into());
        }
        for (name, t) in [
            ("init_temperature", self.init_temperature),
            ("critique_temperature", self.critique_temperature),
            ("revision_temperature", self.revision_temperature),
        ] {
            if t.is_nan() || t < 0.0 {
                return bad(format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Beam,
    /// Beam width 1, same expansion width.
    GreedySmall,
    /// Beam width 1 with the expansion widened so the scored-list budget
    /// matches beam search.
    GreedyLarge,
    /// Depth 1: only independently sampled lists, as many as beam search scores.
    MonteCarlo,
    /// A single zero-temperature recommendation, no simulated user.
    None,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Beam, Strategy::GreedySmall, Strategy::GreedyLarge, Strategy::MonteCarlo, Strategy::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Beam => "beam",
            Strategy::GreedySmall => "greedy_small",
            Strategy::GreedyLarge => "greedy_large",
            Strategy::MonteCarlo => "monte_carlo",
            Strategy::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Effective configuration for this strategy derived from a beam config.
    pub fn configure(self, base: &SearchConfig) -> SearchConfig {
        let mut cfg = base.clone();
        match self {
            Strategy::Beam | Strategy::None => {}
            Strategy::GreedySmall => cfg.beam_width = 1,
            Strategy::GreedyLarge => {
                cfg.expand_width = base.beam_width * base.expand_width;
                cfg.init_count = Some(base.init_count());
                cfg.beam_width = 1;
            }
            Strategy::MonteCarlo => {
                cfg.init_count = Some(base.scored_budget());
                cfg.depth = 1;
            }
        }
        cfg
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model calls made during one search, by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub recommend: u64,
    pub critique: u64,
    pub revise: u64,
    /// Item scores requested across all scored lists.
    pub score_requested: u64,
    /// Scoring prompts actually sent.
    pub score: u64,
    pub score_cache_hits: u64,
    pub score_fallbacks: u64,
}

impl CallCounts {
    pub fn total_gateway_calls(&self) -> u64 {
        self.recommend + self.critique + self.revise + self.score
    }
}

/// Everything a search produced, for ranking, evaluation and inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub strategy: Strategy,
    pub config: SearchConfig,
    pub all_states: Vec<SearchState>,
    pub scored_state_ids: Vec<StateId>,
    /// Retained state ids per iteration, best first.
    pub retained: Vec<Vec<StateId>>,
    pub calls: CallCounts,
    /// Initial samples whose reply grounded to no catalog item.
    pub dropped_empty: u64,
    /// Set when an iteration failed; the trace holds everything up to it.
    pub aborted: Option<String>,
}

impl SearchTrace {
    pub fn state(&self, id: StateId) -> Option<&SearchState> {
        self.all_states.get(id.0 as usize).filter(|s| s.state_id == id)
    }

    pub fn scored_states(&self) -> impl Iterator<Item = &SearchState> {
        self.all_states.iter().filter(|s| s.is_scored())
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Reward of a scored state.
pub fn reward_of(state: &SearchState) -> Result<f64, SearchError> {
    state.reward.ok_or(SearchError::Unscored(state.state_id))
}

/// Backends and shared resources for a search.
pub struct SearchContext<'a> {
    pub crs: &'a dyn Backend,
    pub user: &'a dyn Backend,
    pub catalog: &'a ItemCatalog,
    pub reward_tokens: &'a RewardTokenConfig,
    pub cache: &'a ScoreCache,
}

/// Fills `child` up to the parent's length with the parent's best-scored items
/// not already present.
pub fn top_up_from_parent(child: &mut Vec<ItemId>, parent: &SearchState, list_length: usize) {
    if child.len() >= list_length {
        return;
    }
    let mut ranked: Vec<(usize, ItemId, f64)> = match &parent.per_item_scores {
        Some(scores) => parent.items.iter().zip(scores).enumerate().map(|(i, (&id, &s))| (i, id, s)).collect(),
        None => parent.items.iter().enumerate().map(|(i, &id)| (i, id, 0.0)).collect(),
    };
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    for (_, id, _) in ranked {
        if child.len() >= list_length {
            break;
        }
        if !child.contains(&id) {
            child.push(id);
        }
    }
}

fn items_of<'c>(catalog: &'c ItemCatalog, ids: &[ItemId]) -> Vec<&'c Item> {
    ids.iter().filter_map(|&i| catalog.get(i)).collect()
}

struct Engine<'a, 'h> {
    ctx: &'a SearchContext<'a>,
    history: &'h [Utterance],
    cfg: SearchConfig,
    trace: SearchTrace,
}

impl Engine<'_, '_> {
    fn next_id(&self) -> StateId {
        StateId(self.trace.all_states.len() as u64)
    }

    fn push(&mut self, state: SearchState) -> StateId {
        debug_assert_eq!(state.state_id, self.next_id());
        let id = state.state_id;
        self.trace.all_states.push(state);
        id
    }

    fn initial_states(&mut self, count: usize, temperature: f64) -> Result<Vec<StateId>, SearchError> {
        let prompt = RecommendationPrompt::initial(self.history, self.cfg.list_length);
        let requests: Vec<_> = (0..count)
            .map(|i| {
                crs::recommendation_request(&prompt, temperature, derive_seed(self.cfg.seed, &[INIT_STREAM, i as u64]))
            })
            .collect();
        self.trace.calls.recommend += requests.len() as u64;
        let results =
            gateway::generate_batch(self.ctx.crs, &requests, self.cfg.max_concurrency).into_all().map_err(|e| {
                SearchError::Gateway { context: "sampling initial lists".into(), source: e.failures[0].1.clone() }
            })?;
        let mut ids = Vec::with_capacity(count);
        for r in results {
            let items =
                crs::parse_and_ground(&r.text, self.ctx.catalog, self.cfg.list_length, self.cfg.match_threshold);
            if items.is_empty() {
                self.trace.dropped_empty += 1;
                continue;
            }
            let id = self.next_id();
            ids.push(self.push(SearchState::root(id, items)));
        }
        Ok(ids)
    }

    fn score(&mut self, frontier: &[StateId]) -> Result<(), SearchError> {
        let pending: Vec<StateId> =
            frontier.iter().copied().filter(|id| !self.trace.all_states[id.0 as usize].is_scored()).collect();
        if pending.is_empty() {
            return Ok(());
        }
        let lists: Vec<&[ItemId]> =
            pending.iter().map(|id| self.trace.all_states[id.0 as usize].items.as_slice()).collect();
        let (outcomes, stats) = user::score_lists(
            self.ctx.user,
            self.history,
            &lists,
            self.ctx.catalog,
            self.ctx.reward_tokens,
            self.ctx.cache,
            self.cfg.max_concurrency,
        )?;
        self.trace.calls.score_requested += stats.requested;
        self.trace.calls.score += stats.gateway_calls;
        self.trace.calls.score_cache_hits += stats.cache_hits;
        self.trace.calls.score_fallbacks += stats.fallbacks;
        for (id, outcome) in pending.iter().zip(outcomes) {
            let state = &mut self.trace.all_states[id.0 as usize];
            state.set_scores(outcome.per_item.iter().map(|s| s.score).collect());
            self.trace.scored_state_ids.push(*id);
        }
        Ok(())
    }

    fn retain(&self, frontier: &[StateId]) -> Vec<StateId> {
        let mut ranked: Vec<(f64, StateId)> = frontier
            .iter()
            .map(|id| (self.trace.all_states[id.0 as usize].reward.unwrap_or(f64::NEG_INFINITY), *id))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(self.cfg.beam_width).map(|(_, id)| id).collect()
    }

    fn expand(&mut self, retained: &[StateId]) -> Result<Vec<StateId>, SearchError> {
        let n = self.cfg.expand_width;
        let jobs: Vec<(StateId, u64)> = retained.iter().flat_map(|&id| (0..n as u64).map(move |j| (id, j))).collect();
        let critique_jobs: Vec<(&[ItemId], u64)> = jobs
            .iter()
            .map(|&(id, j)| {
                (
                    self.trace.all_states[id.0 as usize].items.as_slice(),
                    derive_seed(self.cfg.seed, &[CRITIQUE_STREAM, id.0, j]),
                )
            })
            .collect();
        self.trace.calls.critique += critique_jobs.len() as u64;
        let critiques = user::critique_lists(
            self.ctx.user,
            self.history,
            &critique_jobs,
            self.ctx.catalog,
            self.cfg.critique_temperature,
            self.cfg.max_concurrency,
        )?;

        let parents: Vec<Vec<&Item>> = jobs
            .iter()
            .map(|(id, _)| items_of(self.ctx.catalog, &self.trace.all_states[id.0 as usize].items))
            .collect();
        let requests: Vec<_> = jobs
            .iter()
            .zip(&critiques)
            .zip(&parents)
            .map(|((&(id, j), critique), parent)| {
                let prompt = RecommendationPrompt::revise(self.history, parent, critique, self.cfg.list_length);
                crs::recommendation_request(
                    &prompt,
                    self.cfg.revision_temperature,
                    derive_seed(self.cfg.seed, &[REVISE_STREAM, id.0, j]),
                )
            })
            .collect();
        self.trace.calls.revise += requests.len() as u64;
        let results = gateway::generate_batch(self.ctx.crs, &requests, self.cfg.max_concurrency)
            .into_all()
            .map_err(|e| SearchError::Gateway { context: "revising lists".into(), source: e.failures[0].1.clone() })?;

        let mut children = Vec::with_capacity(jobs.len());
        for ((&(parent_id, _), critique), result) in jobs.iter().zip(critiques).zip(results) {
            let parent = self.trace.all_states[parent_id.0 as usize].clone();
            let mut items =
                crs::parse_and_ground(&result.text, self.ctx.catalog, self.cfg.list_length, self.cfg.match_threshold);
            top_up_from_parent(&mut items, &parent, self.cfg.list_length);
            let id = self.next_id();
            let child =
                SearchState::child(id, items, &parent, Critique { text: critique, sampled_from_state: parent_id });
            children.push(self.push(child));
        }
        Ok(children)
    }

    fn iterate(&mut self) -> Result<(), SearchError> {
        let mut frontier = self.initial_states(self.cfg.init_count(), self.cfg.init_temperature)?;
        for t in 1..=self.cfg.depth {
            self.score(&frontier)?;
            let retained = self.retain(&frontier);
            self.trace.retained.push(retained.clone());
            if t == self.cfg.depth || retained.is_empty() {
                break;
            }
            frontier = self.expand(&retained)?;
        }
        Ok(())
    }
}

/// Runs one search for a conversation history.
///
/// Configuration problems are errors; a model failure mid-search returns the
/// partial trace with [`SearchTrace::aborted`] set.
pub fn run_search(
    ctx: &SearchContext<'_>,
    history: &[Utterance],
    base: &SearchConfig,
    strategy: Strategy,
) -> Result<SearchTrace, SearchError> {
    if history.is_empty() {
        return Err(SearchError::EmptyHistory);
    }
    let cfg = strategy.configure(base);
    cfg.validate()?;
    let trace = SearchTrace {
        strategy,
        config: cfg.clone(),
        all_states: Vec::new(),
        scored_state_ids: Vec::new(),
        retained: Vec::new(),
        calls: CallCounts::default(),
        dropped_empty: 0,
        aborted: None,
    };
    let mut engine = Engine { ctx, history, cfg, trace };
    let outcome = if strategy == Strategy::None { engine.initial_states(1, 0.0).map(|_| ()) } else { engine.iterate() };
    if let Err(e) = outcome {
        engine.trace.aborted = Some(e.to_string());
    }
    Ok(engine.trace)
}

/// Applies one critique to a state: asks the recommender to revise the list
/// and tops a short reply up from the parent.
#[allow(clippy::too_many_arguments)]
pub fn transition(
    ctx: &SearchContext<'_>,
    history: &[Utterance],
    parent: &SearchState,
    critique: &Critique,
    cfg: &SearchConfig,
    new_id: StateId,
    seed: u64,
) -> Result<SearchState, SearchError> {
    if parent.items.is_empty() {
        return Err(SearchError::User(UserError::EmptyList));
    }
    if critique.text.trim().is_empty() {
        return Err(SearchError::User(UserError::EmptyCritique));
    }
    let previous = items_of(ctx.catalog, &parent.items);
    let prompt = RecommendationPrompt::revise(history, &previous, &critique.text, cfg.list_length);
    let mut items = crs::recommend(ctx.crs, &prompt, ctx.catalog, cfg.match_threshold, cfg.revision_temperature, seed)
        .map_err(|source| SearchError::Gateway { context: "revising list".into(), source })?;
    top_up_from_parent(&mut items, parent, cfg.list_length);
    Ok(SearchState::child(new_id, items, parent, critique.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let base = SearchConfig::default();
        assert_eq!(base.scored_budget(), 80);
        let mc = Strategy::MonteCarlo.configure(&base);
        assert_eq!((mc.depth, mc.init_count(), mc.scored_budget()), (1, 80, 80));
        let gs = Strategy::GreedySmall.configure(&base);
        assert_eq!((gs.beam_width, gs.expand_width, gs.scored_budget()), (1, 4, 32));
        let gl = Strategy::GreedyLarge.configure(&base);
        assert_eq!((gl.beam_width, gl.expand_width, gl.init_count(), gl.scored_budget()), (1, 16, 16, 80));
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.as_str()), Some(s));
            s.configure(&base).validate().unwrap();
        }
    }

    #[test]
    fn budget_recurrence() {
        let cfg = SearchConfig { beam_width: 1, expand_width: 4, depth: 3, init_count: Some(16), ..Default::default() };
        assert_eq!(cfg.scored_budget(), 24);
    }

    #[test]
    fn validation() {
        let bad = SearchConfig { beam_width: 5, expand_width: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { init_count: Some(2), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { depth: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn top_up_prefers_high_scores() {
        let mut parent = SearchState::root(StateId(0), (0..5).map(ItemId).collect());
        parent.set_scores(vec![0.1, 0.9, 0.5, 0.9, 0.2]);
        let mut child = vec![ItemId(7), ItemId(3)];
        top_up_from_parent(&mut child, &parent, 5);
        assert_eq!(child, vec![ItemId(7), ItemId(3), ItemId(1), ItemId(2), ItemId(4)]);
    }

    #[test]
    fn reward_requires_scores() {
        let mut s = SearchState::root(StateId(3), vec![ItemId(0), ItemId(1)]);
        assert!(matches!(reward_of(&s), Err(SearchError::Unscored(StateId(3)))));
        s.set_scores(vec![0.0, 0.0]);
        assert_eq!(reward_of(&s).unwrap(), 0.0);
        s.set_scores(vec![1.0, 0.0]);
        assert_eq!(reward_of(&s).unwrap(), 0.5);
    }

    #[test]
    fn config_serialization_omits_concurrency() {
        let cfg = SearchConfig { max_concurrency: 8, ..Default::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("max_concurrency"));
        let missing = r#"{"beam_width":4,"expand_width":4,"depth":5,"list_length":10,"init_temperature":1.0,"critique_temperature":1.0,"revision_temperature":1.0}"#;
        let err = serde_json::from_str::<SearchConfig>(missing).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }
}
