//! Shared domain types: items, dialogue, search states and simulated-user outputs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::num::mean;

/// Dense catalog index of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of a search state, assigned in creation order within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u64);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Genre,
    Actor,
    Writer,
    Director,
}

impl AttributeKind {
    /// Canonical rendering order.
    pub const ALL: [AttributeKind; 4] =
        [AttributeKind::Genre, AttributeKind::Actor, AttributeKind::Writer, AttributeKind::Director];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Genre => "genre",
            AttributeKind::Actor => "actor",
            AttributeKind::Writer => "writer",
            AttributeKind::Director => "director",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribute values of an item, one list per kind. Lists may be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    pub genre: Vec<String>,
    pub actor: Vec<String>,
    pub writer: Vec<String>,
    pub director: Vec<String>,
}

impl Attributes {
    pub fn get(&self, kind: AttributeKind) -> &[String] {
        match kind {
            AttributeKind::Genre => &self.genre,
            AttributeKind::Actor => &self.actor,
            AttributeKind::Writer => &self.writer,
            AttributeKind::Director => &self.director,
        }
    }

    pub fn get_mut(&mut self, kind: AttributeKind) -> &mut Vec<String> {
        match kind {
            AttributeKind::Genre => &mut self.genre,
            AttributeKind::Actor => &mut self.actor,
            AttributeKind::Writer => &mut self.writer,
            AttributeKind::Director => &mut self.director,
        }
    }

    /// All (kind, value) pairs in canonical kind order.
    pub fn pairs(&self) -> impl Iterator<Item = (AttributeKind, &str)> + '_ {
        AttributeKind::ALL.into_iter().flat_map(move |k| self.get(k).iter().map(move |v| (k, v.as_str())))
    }

    pub fn is_empty(&self) -> bool {
        AttributeKind::ALL.iter().all(|k| self.get(*k).is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub title: String,
    pub attributes: Attributes,
}

/// Renders an item as a single line: `Title (genre: g1, g2; actor: a1)`.
///
/// Kinds are emitted in canonical order regardless of the order of `kinds`;
/// kinds without values are omitted, and an item with no rendered values is
/// just its title.
pub fn format_item_with_attributes(item: &Item, kinds: &[AttributeKind]) -> String {
    let segments: Vec<String> = AttributeKind::ALL
        .into_iter()
        .filter(|k| kinds.contains(k))
        .filter_map(|k| {
            let values = item.attributes.get(k);
            (!values.is_empty()).then(|| format!("{}: {}", k, values.join(", ")))
        })
        .collect();
    if segments.is_empty() {
        item.title.clone()
    } else {
        format!("{} ({})", item.title, segments.join("; "))
    }
}

/// Inverse of [`format_item_with_attributes`] for renderings whose values
/// contain no `,`, `;` or `)`.
pub fn parse_item_rendering(line: &str) -> (String, Attributes) {
    let line = line.trim();
    if let Some(body) = line.strip_suffix(')') {
        if let Some(open) = body.rfind(" (") {
            let inner = &body[open + 2..];
            let mut parsed = Attributes::default();
            let mut ok = !inner.is_empty();
            for segment in inner.split("; ") {
                let Some((kind, values)) = segment.split_once(": ") else {
                    ok = false;
                    break;
                };
                let Some(kind) = AttributeKind::parse(kind) else {
                    ok = false;
                    break;
                };
                parsed.get_mut(kind).extend(values.split(", ").map(str::to_string));
            }
            if ok {
                return (body[..open].to_string(), parsed);
            }
        }
    }
    (line.to_string(), Attributes::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Recommender,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(rename = "items", default)]
    pub mentioned_item_ids: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub conv_id: String,
    pub turns: Vec<Utterance>,
}

/// One evaluation point: the history before turn `turn_index` and the items the
/// recommender mentioned at that turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationTurn {
    pub conv_id: String,
    pub turn_index: usize,
    pub history: Vec<Utterance>,
    pub ground_truth_item_ids: Vec<ItemId>,
}

impl RecommendationTurn {
    /// File-name-safe key `conv_id-turn_index`.
    pub fn key(&self) -> String {
        let safe: String = self
            .conv_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .collect();
        format!("{}-{}", safe, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub text: String,
    pub sampled_from_state: StateId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: ItemId,
    pub score: f64,
}

/// A recommended item list visited during search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub state_id: StateId,
    pub items: Vec<ItemId>,
    pub per_item_scores: Option<Vec<f64>>,
    pub reward: Option<f64>,
    pub depth: u32,
    pub parent_state_id: Option<StateId>,
    pub critique_used: Option<Critique>,
}

impl SearchState {
    pub fn root(state_id: StateId, items: Vec<ItemId>) -> Self {
        Self {
            state_id,
            items,
            per_item_scores: None,
            reward: None,
            depth: 0,
            parent_state_id: None,
            critique_used: None,
        }
    }

    pub fn child(state_id: StateId, items: Vec<ItemId>, parent: &SearchState, critique: Critique) -> Self {
        Self {
            state_id,
            items,
            per_item_scores: None,
            reward: None,
            depth: parent.depth + 1,
            parent_state_id: Some(parent.state_id),
            critique_used: Some(critique),
        }
    }

    pub fn is_scored(&self) -> bool {
        self.reward.is_some()
    }

    /// Attaches per-item scores and sets the reward to their mean.
    pub fn set_scores(&mut self, scores: Vec<f64>) {
        assert_eq!(scores.len(), self.items.len(), "one score per item");
        self.reward = mean(&scores);
        self.per_item_scores = Some(scores);
    }

    pub fn scored_items(&self) -> impl Iterator<Item = ScoredItem> + '_ {
        self.per_item_scores
            .iter()
            .flat_map(move |s| self.items.iter().zip(s).map(|(&item_id, &score)| ScoredItem { item_id, score }))
    }

    /// Checks the structural invariants of a state; returns a description of
    /// the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.items.iter().find(|i| !seen.insert(**i)) {
            return Err(format!("state {}: duplicate item {}", self.state_id, dup));
        }
        match (&self.per_item_scores, self.reward) {
            (None, None) => {}
            (Some(scores), Some(reward)) => {
                if scores.len() != self.items.len() {
                    return Err(format!("state {}: score count mismatch", self.state_id));
                }
                if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                    return Err(format!("state {}: score out of [0,1]", self.state_id));
                }
                let m = mean(scores).unwrap_or(0.0);
                if (m - reward).abs() > 1e-12 {
                    return Err(format!("state {}: reward {} != mean {}", self.state_id, reward, m));
                }
            }
            _ => return Err(format!("state {}: reward and scores must be set together", self.state_id)),
        }
        let root_shape = self.parent_state_id.is_none() && self.critique_used.is_none();
        let child_shape = self.parent_state_id.is_some() && self.critique_used.is_some();
        if (self.depth == 0 && !root_shape) || (self.depth > 0 && !child_shape) {
            return Err(format!("state {}: provenance inconsistent with depth {}", self.state_id, self.depth));
        }
        Ok(())
    }
}
