//! Deterministic backends: each is a pure function of the request (seed included).
//!
//! * [`FnBackend`] wraps a closure, for fixtures.
//! * [`OracleUser`] plays a simulated user that knows a hidden set of target
//!   attributes: it scores items by attribute overlap and critiques lists by
//!   naming a missing target attribute.
//! * [`RuleBasedCrs`] recommends the catalog items that best overlap the
//!   attributes mentioned in the conversation and the latest feedback.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, GatewayError, GenerationRequest, GenerationResult, Role, TokenAlternative};
use crate::catalog::ItemCatalog;
use crate::domain::{parse_item_rendering, AttributeKind, Attributes, ItemId};
use crate::prompts::{
    self, CONVERSATION_HEADER, FEEDBACK_HEADER, ITEM_HEADER, LIST_HEADER, PREFERENCE_HEADER, PREVIOUS_HEADER,
};
use crate::rng::{derive_seed, text_seed};

pub type AttributePair = (AttributeKind, String);

type Handler = dyn Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync;

/// Closure-backed backend returning plain text.
pub struct FnBackend {
    name: String,
    handler: Box<Handler>,
    alternatives: Option<Vec<TokenAlternative>>,
}

impl FnBackend {
    pub fn new(
        name: impl Into<String>,
        handler: impl Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), handler: Box::new(handler), alternatives: None }
    }

    /// A scorer that always answers with the given first-token alternatives.
    pub fn with_alternatives(name: impl Into<String>, alternatives: Vec<(&str, f64)>) -> Self {
        let alts = alternatives
            .into_iter()
            .map(|(t, p)| TokenAlternative { token: t.to_string(), probability: p })
            .collect::<Vec<_>>();
        let top = alts
            .iter()
            .max_by(|a, b| a.probability.total_cmp(&b.probability))
            .map(|a| a.token.clone())
            .unwrap_or_default();
        Self { name: name.into(), handler: Box::new(move |_| Ok(format!(" {top}"))), alternatives: Some(alts) }
    }
}

impl Backend for FnBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let text = (self.handler)(request)?;
        Ok(GenerationResult {
            text,
            first_token_alternatives: if request.want_token_alternatives { self.alternatives.clone() } else { None },
            backend_name: self.name.clone(),
            latency_ms: 0,
        })
    }
}

/// Seeded RNG keyed by the full request content.
fn request_rng(request: &GenerationRequest) -> ChaCha8Rng {
    let mut digest_input = String::new();
    for m in &request.messages {
        digest_input.push_str(&format!("{:?}\u{1}{}\u{2}", m.role, m.content));
    }
    if let Some(p) = &request.assistant_prefix {
        digest_input.push_str(p);
    }
    let seed = derive_seed(request.seed.unwrap_or(0), &[text_seed(&digest_input), request.temperature.to_bits()]);
    ChaCha8Rng::seed_from_u64(seed)
}

fn attribute_pairs(attrs: &Attributes) -> impl Iterator<Item = AttributePair> + '_ {
    attrs.pairs().map(|(k, v)| (k, v.to_string()))
}

fn list_lines(body: &str) -> Vec<&str> {
    body.lines().filter_map(prompts::strip_list_marker).collect()
}

fn ok_text(name: &str, text: String) -> GenerationResult {
    GenerationResult { text, first_token_alternatives: None, backend_name: name.to_string(), latency_ms: 0 }
}

pub const AFFIRMATIVE_CRITIQUE: &str = "These recommendations match what I am looking for. I would accept them.";

/// Critique sentence that names one wanted attribute.
pub fn attribute_critique(kind: AttributeKind, value: &str) -> String {
    match kind {
        AttributeKind::Genre => format!("I would like to see more {value} elements in the recommendations."),
        AttributeKind::Actor => format!("I would like to see more movies starring {value}."),
        AttributeKind::Writer => format!("I would like to see more movies written by {value}."),
        AttributeKind::Director => format!("I would like to see more movies directed by {value}."),
    }
}

/// Simulated user with hidden target attributes.
///
/// Scoring requests (those asking for token alternatives) get
/// `P(Yes) = clamp(jaccard(item attributes, target), 0.05, 0.95)`.
/// Critique requests name one target attribute missing from the list, or
/// return [`AFFIRMATIVE_CRITIQUE`] when none is missing. A `User preference:`
/// section in the prompt overrides the configured target, which makes the
/// same backend usable as a synthesis teacher.
pub struct OracleUser {
    name: String,
    target: BTreeSet<AttributePair>,
}

impl OracleUser {
    pub fn new(target: BTreeSet<AttributePair>) -> Self {
        Self { name: "scripted:oracle-user".into(), target }
    }

    /// Target = union of the attributes of the given catalog items.
    pub fn for_items(catalog: &ItemCatalog, ids: &[ItemId]) -> Self {
        let target = ids
            .iter()
            .filter_map(|id| catalog.get(*id))
            .flat_map(|item| attribute_pairs(&item.attributes).collect::<Vec<_>>())
            .collect();
        Self::new(target)
    }

    /// A teacher that only knows what the prompt's preference block tells it.
    pub fn teacher() -> Self {
        Self { name: "scripted:oracle-teacher".into(), target: BTreeSet::new() }
    }

    pub fn target(&self) -> &BTreeSet<AttributePair> {
        &self.target
    }

    pub fn acceptance(target: &BTreeSet<AttributePair>, attrs: &Attributes) -> f64 {
        let item: BTreeSet<AttributePair> = attribute_pairs(attrs).collect();
        let union = item.union(target).count();
        let jaccard = if union == 0 { 0.0 } else { item.intersection(target).count() as f64 / union as f64 };
        jaccard.clamp(0.05, 0.95)
    }

    fn effective_target(&self, request: &GenerationRequest) -> BTreeSet<AttributePair> {
        match prompts::find_section(&request.messages, PREFERENCE_HEADER) {
            Some(body) => body
                .lines()
                .filter_map(prompts::strip_list_marker)
                .flat_map(|l| attribute_pairs(&parse_item_rendering(l).1).collect::<Vec<_>>())
                .collect(),
            None => self.target.clone(),
        }
    }

    fn score(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let line = prompts::find_section(&request.messages, ITEM_HEADER)
            .ok_or_else(|| GatewayError::Scripted("scoring prompt has no item section".into()))?;
        let (_, attrs) = parse_item_rendering(line.trim());
        let p_yes = Self::acceptance(&self.effective_target(request), &attrs);
        let mut alts = vec![
            TokenAlternative { token: "Yes".into(), probability: p_yes },
            TokenAlternative { token: "No".into(), probability: 1.0 - p_yes },
        ];
        alts.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        Ok(GenerationResult {
            text: format!(" {}", alts[0].token),
            first_token_alternatives: Some(alts),
            backend_name: self.name.clone(),
            latency_ms: 0,
        })
    }

    fn critique(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let body = prompts::find_section(&request.messages, LIST_HEADER)
            .ok_or_else(|| GatewayError::Scripted("critique prompt has no list section".into()))?;
        let present: HashSet<AttributePair> = list_lines(&body)
            .into_iter()
            .flat_map(|l| attribute_pairs(&parse_item_rendering(l).1).collect::<Vec<_>>())
            .collect();
        let missing: Vec<AttributePair> =
            self.effective_target(request).into_iter().filter(|p| !present.contains(p)).collect();
        let text = if missing.is_empty() {
            AFFIRMATIVE_CRITIQUE.to_string()
        } else {
            let pick = if request.temperature > 0.0 { request_rng(request).gen_range(0..missing.len()) } else { 0 };
            let (kind, value) = &missing[pick];
            attribute_critique(*kind, value)
        };
        Ok(ok_text(&self.name, text))
    }
}

impl Backend for OracleUser {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        if request.want_token_alternatives {
            self.score(request)
        } else {
            self.critique(request)
        }
    }
}

/// Weights used by [`RuleBasedCrs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrsWeights {
    pub history: f64,
    pub feedback: f64,
    /// Bonus for items already in the list being revised.
    pub carry_over: f64,
    /// Gumbel noise scale at temperature 1.
    pub noise: f64,
}

impl Default for CrsWeights {
    fn default() -> Self {
        Self { history: 1.0, feedback: 3.0, carry_over: 0.5, noise: 0.5 }
    }
}

/// Attribute-overlap recommender over a catalog.
pub struct RuleBasedCrs {
    name: String,
    catalog: Arc<ItemCatalog>,
    vocabulary: Vec<(String, AttributePair)>,
    weights: CrsWeights,
}

impl RuleBasedCrs {
    pub fn new(catalog: Arc<ItemCatalog>) -> Self {
        Self::with_weights(catalog, CrsWeights::default())
    }

    pub fn with_weights(catalog: Arc<ItemCatalog>, weights: CrsWeights) -> Self {
        let vocab: BTreeSet<AttributePair> =
            catalog.items().iter().flat_map(|i| attribute_pairs(&i.attributes).collect::<Vec<_>>()).collect();
        let vocabulary = vocab.into_iter().map(|p| (p.1.to_lowercase(), p)).filter(|(v, _)| !v.is_empty()).collect();
        Self { name: "scripted:rule-crs".into(), catalog, vocabulary, weights }
    }

    /// Attribute values mentioned in `text` at word boundaries.
    pub fn mentioned(&self, text: &str) -> Vec<&AttributePair> {
        let lower = text.to_lowercase();
        self.vocabulary.iter().filter(|(v, _)| mentions(&lower, v)).map(|(_, p)| p).collect()
    }

    fn list_length(request: &GenerationRequest) -> usize {
        request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .find_map(|m| {
                let rest = &m.content[m.content.find("recommend ")? + "recommend ".len()..];
                rest.split_whitespace().next()?.parse().ok()
            })
            .unwrap_or(10)
    }
}

fn mentions(haystack: &str, needle: &str) -> bool {
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let at = start + pos;
        let end = at + needle.len();
        if boundary(haystack[..at].chars().next_back()) && boundary(haystack[end..].chars().next()) {
            return true;
        }
        start = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

impl Backend for RuleBasedCrs {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let l = Self::list_length(request);
        let mut weight: HashMap<&AttributePair, f64> = HashMap::new();
        if let Some(history) = prompts::find_section(&request.messages, CONVERSATION_HEADER) {
            for p in self.mentioned(&history) {
                *weight.entry(p).or_default() += self.weights.history;
            }
        }
        if let Some(feedback) = prompts::find_section(&request.messages, FEEDBACK_HEADER) {
            for p in self.mentioned(&feedback) {
                *weight.entry(p).or_default() += self.weights.feedback;
            }
        }
        let previous: HashSet<ItemId> = prompts::find_section(&request.messages, PREVIOUS_HEADER)
            .map(|body| {
                list_lines(&body).into_iter().filter_map(|l| self.catalog.lookup(&parse_item_rendering(l).0)).collect()
            })
            .unwrap_or_default();

        let mut rng = request_rng(request);
        let noise_scale = request.temperature * self.weights.noise;
        let mut scored: Vec<(f64, ItemId)> = self
            .catalog
            .items()
            .iter()
            .map(|item| {
                let mut s: f64 =
                    attribute_pairs(&item.attributes).map(|p| weight.get(&p).copied().unwrap_or(0.0)).sum();
                if previous.contains(&item.item_id) {
                    s += self.weights.carry_over;
                }
                if noise_scale > 0.0 {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    s += noise_scale * -(-u.ln()).ln();
                }
                (s, item.item_id)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let titles: Vec<String> =
            scored.iter().take(l).filter_map(|(_, id)| self.catalog.title(*id).map(str::to_string)).collect();
        Ok(ok_text(&self.name, prompts::numbered(&titles)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_boundary_mentions() {
        assert!(mentions("i like comedy films", "comedy"));
        assert!(!mentions("i like comedyish films", "comedy"));
        assert!(mentions("actor 012, please", "actor 012"));
        assert!(!mentions("actor 0123", "actor 012"));
        assert!(mentions("more comedy", "comedy"));
    }

    #[test]
    fn acceptance_is_clamped_jaccard() {
        let target: BTreeSet<AttributePair> =
            [(AttributeKind::Genre, "comedy".to_string()), (AttributeKind::Actor, "A".to_string())].into();
        let full = Attributes { genre: vec!["comedy".into()], actor: vec!["A".into()], ..Default::default() };
        assert_eq!(OracleUser::acceptance(&target, &full), 0.95);
        let half = Attributes { genre: vec!["comedy".into()], ..Default::default() };
        assert_eq!(OracleUser::acceptance(&target, &half), 0.5);
        assert_eq!(OracleUser::acceptance(&target, &Attributes::default()), 0.05);
    }
}
