//! Reward-guided beam search between an LLM recommender and a simulated user
//! for conversational recommendation.
//!
//! The recommender proposes item lists, the simulated user scores each item
//! through the probability of a "Yes" token and critiques lists in natural
//! language, and a beam search over critique/revision steps collects scored
//! items that are finally pooled into one ranking.

pub mod catalog;
pub mod crs;
pub mod domain;
pub mod gateway;
pub mod ingest;
pub mod metrics;
pub mod num;
pub mod prompts;
pub mod ranker;
pub mod rng;
pub mod search;
pub mod synthesis;
pub mod user;
pub mod world;

pub use catalog::{ItemCatalog, MatchResult};
pub use domain::{
    Attributes, Conversation, Item, ItemId, RecommendationTurn, ScoredItem, SearchState, StateId, Utterance,
};
pub use gateway::{Backend, GenerationRequest, GenerationResult};
pub use ranker::{Aggregation, RankedItem};
pub use search::{run_search, SearchConfig, SearchContext, SearchTrace, Strategy};

/// Scores and metrics are computed in `f64` throughout the pipeline.
pub type Scalar = f64;
pub type MetricMap = metrics::MetricMap<Scalar>;
pub type Report = metrics::Report<Scalar>;
pub type Summary = metrics::Summary<Scalar>;
