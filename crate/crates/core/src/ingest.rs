//! Conversation corpora: loading, evaluation-turn derivation and splits.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::catalog::ItemCatalog;
use crate::domain::{Conversation, ItemId, RecommendationTurn, Speaker};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error("{path}:{line}: conversation {conv_id:?} mentions unknown item_id {item_id}")]
    UnknownItem { path: String, line: usize, conv_id: String, item_id: ItemId },
    #[error("conversation id {0:?} appears in more than one split")]
    SplitOverlap(String),
    #[error("{} corpus conversations are not assigned to any split (first: {:?})", .0.len(), .0[0])]
    Unassigned(Vec<String>),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.display().to_string(), source }
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::Schema {
                path: origin.to_string(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}

pub fn load_conversations(path: impl AsRef<Path>, catalog: &ItemCatalog) -> Result<Vec<Conversation>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_conversations(&text, &path.display().to_string(), catalog)
}

/// Parses and validates corpus JSONL: non-empty turns, known items, unique ids.
pub fn parse_conversations(text: &str, origin: &str, catalog: &ItemCatalog) -> Result<Vec<Conversation>, IngestError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| IngestError::Schema { path: origin.to_string(), line: n + 1, message };
        let conv: Conversation = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        if conv.turns.is_empty() {
            return Err(schema(format!("conversation {:?} has no turns", conv.conv_id)));
        }
        if !ids.insert(conv.conv_id.clone()) {
            return Err(schema(format!("duplicate conv_id {:?}", conv.conv_id)));
        }
        for u in &conv.turns {
            if let Some(&bad) = u.mentioned_item_ids.iter().find(|id| !catalog.contains(**id)) {
                return Err(IngestError::UnknownItem {
                    path: origin.to_string(),
                    line: n + 1,
                    conv_id: conv.conv_id.clone(),
                    item_id: bad,
                });
            }
        }
        out.push(conv);
    }
    Ok(out)
}

/// One evaluation turn per recommender utterance that mentions items and has
/// a non-empty history. With `dedupe`, items mentioned anywhere earlier in the
/// conversation are dropped from the ground truth, and turns left without
/// ground truth are skipped.
pub fn derive_recommendation_turns(convs: &[Conversation], dedupe: bool) -> Vec<RecommendationTurn> {
    let mut out = Vec::new();
    for conv in convs {
        let mut seen: HashSet<ItemId> = HashSet::new();
        for (k, utt) in conv.turns.iter().enumerate() {
            if utt.speaker == Speaker::Recommender && k > 0 {
                let mut gt = Vec::new();
                for &id in &utt.mentioned_item_ids {
                    if gt.contains(&id) || (dedupe && seen.contains(&id)) {
                        continue;
                    }
                    gt.push(id);
                }
                if !gt.is_empty() {
                    out.push(RecommendationTurn {
                        conv_id: conv.conv_id.clone(),
                        turn_index: k,
                        history: conv.turns[..k].to_vec(),
                        ground_truth_item_ids: gt,
                    });
                }
            }
            seen.extend(utt.mentioned_item_ids.iter().copied());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    train: Vec<String>,
    valid: Vec<String>,
    test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub assignment: BTreeMap<String, SplitName>,
}

impl Split {
    pub fn ids(&self, which: SplitName) -> impl Iterator<Item = &str> {
        self.assignment.iter().filter(move |(_, s)| **s == which).map(|(id, _)| id.as_str())
    }

    /// Errors if a corpus conversation is unassigned; returns split ids that
    /// are absent from the corpus as warnings.
    pub fn check_against(&self, convs: &[Conversation]) -> Result<Vec<String>, IngestError> {
        let corpus: HashSet<&str> = convs.iter().map(|c| c.conv_id.as_str()).collect();
        let unassigned: Vec<String> =
            convs.iter().filter(|c| !self.assignment.contains_key(&c.conv_id)).map(|c| c.conv_id.clone()).collect();
        if !unassigned.is_empty() {
            return Err(IngestError::Unassigned(unassigned));
        }
        Ok(self.assignment.keys().filter(|id| !corpus.contains(id.as_str())).cloned().collect())
    }
}

pub fn parse_split(text: &str, origin: &str) -> Result<Split, IngestError> {
    let file: SplitFile = serde_json::from_str(text).map_err(|e| IngestError::Schema {
        path: origin.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut assignment = BTreeMap::new();
    for (name, ids) in [(SplitName::Train, file.train), (SplitName::Valid, file.valid), (SplitName::Test, file.test)] {
        for id in ids {
            if assignment.insert(id.clone(), name).is_some() {
                return Err(IngestError::SplitOverlap(id));
            }
        }
    }
    Ok(Split { assignment })
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_split(&text, &path.display().to_string())
}
