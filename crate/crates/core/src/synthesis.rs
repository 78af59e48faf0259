//! Instruction data for the simulated user: offline scoring examples and
//! teacher-generated critiques.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogError, ItemCatalog};
use crate::domain::{format_item_with_attributes, AttributeKind, ItemId, RecommendationTurn};
use crate::gateway::{self, Backend, ChatMessage, GenerationRequest};
use crate::prompts::{self, CONVERSATION_HEADER, PREFERENCE_HEADER};
use crate::rng::{derive_seed, text_seed};
use crate::user::RewardTokenConfig;

const CRITIQUE_LISTS: u64 = 0x5C17;
const SCORING_NEGATIVES: u64 = 0x5C0E;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("list length must be at least 1")]
    ZeroListLength,
    #[error("turn {turn}: not enough negatives: {source}")]
    Negatives {
        turn: String,
        #[source]
        source: CatalogError,
    },
    #[error("turn {0}: unknown ground-truth item")]
    UnknownItem(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Scoring,
    Critiquing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub conv_id: String,
    pub turn_index: usize,
    pub l_p: usize,
    pub l_n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionExample {
    pub messages: Vec<ChatMessage>,
    pub target: String,
    pub behavior: Behavior,
    pub meta: ExampleMeta,
}

/// A recommendation list built for critique synthesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructedList {
    pub items: Vec<ItemId>,
    pub l_p: usize,
    pub l_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "default_list_length")]
    pub list_length: usize,
    #[serde(default = "default_max_lists")]
    pub max_lists: usize,
    #[serde(default = "default_negatives")]
    pub negatives_per_positive: usize,
    #[serde(default)]
    pub teacher_temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency", skip_serializing)]
    pub max_concurrency: usize,
}

fn default_list_length() -> usize {
    10
}
fn default_max_lists() -> usize {
    64
}
fn default_negatives() -> usize {
    1
}
fn default_concurrency() -> usize {
    1
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            list_length: default_list_length(),
            max_lists: default_max_lists(),
            negatives_per_positive: default_negatives(),
            teacher_temperature: 0.0,
            seed: 0,
            max_concurrency: default_concurrency(),
        }
    }
}

/// Seed for one turn, independent of processing order.
pub fn turn_seed(master: u64, turn: &RecommendationTurn) -> u64 {
    derive_seed(master, &[text_seed(&turn.key())])
}

/// Index subsets of `0..n` with size below `max_size`, smaller first, then
/// lexicographic, at most `cap` of them.
pub fn enumerate_subsets(n: usize, max_size: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=n.min(max_size) {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            if out.len() == cap {
                return out;
            }
            out.push(combo.clone());
            // next combination in lexicographic order
            let Some(i) = (0..size).rev().find(|&i| combo[i] < n - size + i) else { break };
            combo[i] += 1;
            for j in i + 1..size {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

fn negatives(
    catalog: &ItemCatalog,
    turn: &RecommendationTurn,
    count: usize,
    seed: u64,
) -> Result<Vec<ItemId>, SynthesisError> {
    let exclude: HashSet<ItemId> = turn.ground_truth_item_ids.iter().copied().collect();
    catalog
        .sample_negatives(&exclude, count, seed)
        .map_err(|source| SynthesisError::Negatives { turn: turn.key(), source })
}

/// Lists for critique synthesis: every non-empty ground-truth subset smaller
/// than `l` (capped at `max_lists`) padded with negatives and shuffled, plus
/// one all-negative list.
pub fn build_critiquing_lists(
    turn: &RecommendationTurn,
    catalog: &ItemCatalog,
    l: usize,
    max_lists: usize,
    seed: u64,
) -> Result<Vec<ConstructedList>, SynthesisError> {
    if l == 0 {
        return Err(SynthesisError::ZeroListLength);
    }
    let gt = &turn.ground_truth_item_ids;
    let mut lists = Vec::new();
    let subsets = enumerate_subsets(gt.len(), l - 1, max_lists);
    for (j, subset) in subsets.iter().enumerate() {
        let list_seed = derive_seed(seed, &[CRITIQUE_LISTS, j as u64]);
        let mut items: Vec<ItemId> = subset.iter().map(|&i| gt[i]).collect();
        items.extend(negatives(catalog, turn, l - subset.len(), list_seed)?);
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(list_seed));
        lists.push(ConstructedList { items, l_p: subset.len(), l_n: l - subset.len() });
    }
    let all_neg_seed = derive_seed(seed, &[CRITIQUE_LISTS, u64::MAX]);
    lists.push(ConstructedList { items: negatives(catalog, turn, l, all_neg_seed)?, l_p: 0, l_n: l });
    Ok(lists)
}

fn item_line(catalog: &ItemCatalog, turn: &RecommendationTurn, id: ItemId) -> Result<String, SynthesisError> {
    let item = catalog.get(id).ok_or_else(|| SynthesisError::UnknownItem(turn.key()))?;
    Ok(format_item_with_attributes(item, &AttributeKind::ALL))
}

/// One positive and `k` negative scoring examples per ground-truth item.
pub fn build_scoring_examples(
    turn: &RecommendationTurn,
    catalog: &ItemCatalog,
    k: usize,
    seed: u64,
) -> Result<Vec<InstructionExample>, SynthesisError> {
    let tokens = RewardTokenConfig::default();
    let example = |id: ItemId, accept: bool| -> Result<InstructionExample, SynthesisError> {
        Ok(InstructionExample {
            messages: prompts::scoring_messages(&turn.history, &item_line(catalog, turn, id)?),
            target: tokens.target(accept),
            behavior: Behavior::Scoring,
            meta: ExampleMeta {
                conv_id: turn.conv_id.clone(),
                turn_index: turn.turn_index,
                l_p: usize::from(accept),
                l_n: usize::from(!accept),
            },
        })
    };
    let mut out = Vec::with_capacity(turn.ground_truth_item_ids.len() * (1 + k));
    for (g, &id) in turn.ground_truth_item_ids.iter().enumerate() {
        out.push(example(id, true)?);
        for neg in negatives(catalog, turn, k, derive_seed(seed, &[SCORING_NEGATIVES, g as u64]))? {
            out.push(example(neg, false)?);
        }
    }
    Ok(out)
}

/// Critique synthesis outcome for one turn.
#[derive(Debug, Clone, Default)]
pub struct TurnSynthesis {
    pub examples: Vec<InstructionExample>,
    pub lists: usize,
    pub dropped_empty: usize,
    pub failures: Vec<String>,
}

/// Teacher form of the critique instruction, with the preference block.
pub fn teacher_request(
    turn: &RecommendationTurn,
    catalog: &ItemCatalog,
    list: &[ItemId],
    temperature: f64,
    seed: u64,
) -> Result<GenerationRequest, SynthesisError> {
    let lines = list.iter().map(|&i| item_line(catalog, turn, i)).collect::<Result<Vec<_>, _>>()?;
    let preference =
        turn.ground_truth_item_ids.iter().map(|&i| item_line(catalog, turn, i)).collect::<Result<Vec<_>, _>>()?;
    Ok(GenerationRequest {
        temperature,
        seed: Some(seed),
        max_new_tokens: 256,
        ..GenerationRequest::new(prompts::critique_messages(&turn.history, &lines, Some(&preference)))
    })
}

/// Calls the teacher once per constructed list of one turn. Stored examples
/// use the instruction without the preference block.
pub fn synthesize_turn_critiques(
    backend: &dyn Backend,
    turn: &RecommendationTurn,
    catalog: &ItemCatalog,
    cfg: &SynthesisConfig,
) -> Result<TurnSynthesis, SynthesisError> {
    let seed = turn_seed(cfg.seed, turn);
    let lists = build_critiquing_lists(turn, catalog, cfg.list_length, cfg.max_lists, seed)?;
    let requests = lists
        .iter()
        .enumerate()
        .map(|(j, l)| teacher_request(turn, catalog, &l.items, cfg.teacher_temperature, derive_seed(seed, &[j as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    let results = gateway::generate_batch(backend, &requests, cfg.max_concurrency);
    let mut out = TurnSynthesis { lists: lists.len(), ..TurnSynthesis::default() };
    for (list, result) in lists.iter().zip(results.results) {
        match result {
            Ok(r) if r.text.trim().is_empty() => out.dropped_empty += 1,
            Ok(r) => {
                let lines = list.items.iter().map(|&i| item_line(catalog, turn, i)).collect::<Result<Vec<_>, _>>()?;
                out.examples.push(InstructionExample {
                    messages: prompts::critique_messages(&turn.history, &lines, None),
                    target: r.text.trim().to_string(),
                    behavior: Behavior::Critiquing,
                    meta: ExampleMeta {
                        conv_id: turn.conv_id.clone(),
                        turn_index: turn.turn_index,
                        l_p: list.l_p,
                        l_n: list.l_n,
                    },
                });
            }
            Err(e) => out.failures.push(format!("{}: {e}", turn.key())),
        }
    }
    Ok(out)
}

/// Critique synthesis over many turns; teacher failures are isolated per
/// example and reported, not fatal.
pub fn synthesize_critiques(
    backend: &dyn Backend,
    turns: &[RecommendationTurn],
    catalog: &ItemCatalog,
    cfg: &SynthesisConfig,
) -> Result<TurnSynthesis, SynthesisError> {
    let mut total = TurnSynthesis::default();
    for turn in turns {
        let part = synthesize_turn_critiques(backend, turn, catalog, cfg)?;
        total.examples.extend(part.examples);
        total.lists += part.lists;
        total.dropped_empty += part.dropped_empty;
        total.failures.extend(part.failures);
    }
    Ok(total)
}

/// Ground-truth items whose titles appear in a critiquing example outside the
/// conversation and outside its recommended list. Any preference block counts
/// as leakage of every ground-truth item.
pub fn leaked_items(example: &InstructionExample, gt: &[ItemId], catalog: &ItemCatalog) -> Vec<ItemId> {
    let blocks: Vec<(String, String)> = example.messages.iter().flat_map(|m| prompts::sections(&m.content)).collect();
    if blocks.iter().any(|(h, _)| h == PREFERENCE_HEADER) {
        return gt.to_vec();
    }
    let listed: HashSet<ItemId> = blocks
        .iter()
        .filter(|(h, _)| h == prompts::LIST_HEADER)
        .flat_map(|(_, body)| {
            body.lines().filter_map(prompts::strip_list_marker).map(str::to_string).collect::<Vec<_>>()
        })
        .filter_map(|line| catalog.lookup(&crate::domain::parse_item_rendering(&line).0))
        .collect();
    let scanned: String =
        blocks.iter().filter(|(h, _)| h != CONVERSATION_HEADER).map(|(_, b)| b.as_str()).collect::<Vec<_>>().join("\n");
    gt.iter()
        .copied()
        .filter(|id| !listed.contains(id))
        .filter(|id| catalog.title(*id).is_some_and(|t| scanned.contains(t)))
        .collect()
}

/// Seeded shuffle used by [`export_dataset`].
pub fn shuffle_examples(examples: &[InstructionExample], seed: u64) -> Vec<InstructionExample> {
    let mut out = examples.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Writes chat-format JSONL after a seeded shuffle; returns the row count.
pub fn export_dataset(
    examples: &[InstructionExample],
    path: impl AsRef<Path>,
    seed: u64,
) -> Result<usize, SynthesisError> {
    let rows = shuffle_examples(examples, seed);
    let mut text = String::new();
    for row in &rows {
        text.push_str(&serde_json::to_string(row).expect("example serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(rows.len())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<InstructionExample>, SynthesisError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| SynthesisError::Parse { line: n + 1, message: e.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Attributes, Item, Speaker, Utterance};
    use crate::gateway::scripted::{FnBackend, OracleUser};

    fn catalog(n: u32) -> ItemCatalog {
        ItemCatalog::from_items(
            (0..n)
                .map(|i| {
                    let mut attributes = Attributes::default();
                    attributes.genre.push(format!("genre{}", i % 5));
                    attributes.director.push(format!("Director {i:03}"));
                    Item { item_id: ItemId(i), title: format!("Film Number {i} ({})", 1950 + i), attributes }
                })
                .collect(),
        )
        .unwrap()
    }

    fn turn(gt: &[u32]) -> RecommendationTurn {
        RecommendationTurn {
            conv_id: "c0".into(),
            turn_index: 1,
            history: vec![Utterance {
                speaker: Speaker::Seeker,
                text: "Any good films?".into(),
                mentioned_item_ids: vec![],
            }],
            ground_truth_item_ids: gt.iter().copied().map(ItemId).collect(),
        }
    }

    #[test]
    fn subsets_small_first() {
        assert_eq!(
            enumerate_subsets(3, 9, 64),
            vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
        );
        assert_eq!(enumerate_subsets(3, 9, 4).len(), 4);
        assert_eq!(enumerate_subsets(3, 1, 64).len(), 3);
        assert!(enumerate_subsets(0, 9, 64).is_empty());
    }

    #[test]
    fn list_counts() {
        let c = catalog(100);
        for (gt, expected) in [(vec![1], 2), (vec![1, 2], 4), (vec![1, 2, 3], 8)] {
            let lists = build_critiquing_lists(&turn(&gt), &c, 10, 64, 7).unwrap();
            assert_eq!(lists.len(), expected);
            for l in &lists {
                assert_eq!(l.items.len(), 10);
                assert_eq!(l.l_p + l.l_n, 10);
            }
            assert_eq!(lists.last().unwrap().l_p, 0);
        }
        assert!(matches!(build_critiquing_lists(&turn(&[1]), &c, 0, 64, 7), Err(SynthesisError::ZeroListLength)));
        assert!(matches!(
            build_critiquing_lists(&turn(&[1]), &catalog(5), 10, 64, 7),
            Err(SynthesisError::Negatives { .. })
        ));
    }

    #[test]
    fn scoring_counts_and_targets() {
        let c = catalog(50);
        let ex = build_scoring_examples(&turn(&[1, 2, 3]), &c, 1, 3).unwrap();
        assert_eq!(ex.len(), 6);
        assert_eq!(ex.iter().filter(|e| e.target.ends_with("? Yes")).count(), 3);
        assert!(ex.iter().all(|e| e.target == "Accept the recommendation (Yes/No)? Yes"
            || e.target == "Accept the recommendation (Yes/No)? No"));
        assert_eq!(build_scoring_examples(&turn(&[1, 2]), &c, 0, 3).unwrap().len(), 2);
    }

    #[test]
    fn teacher_critiques_are_leak_free() {
        let c = catalog(60);
        let t = turn(&[4, 9, 17]);
        let teacher = OracleUser::teacher();
        let out = synthesize_turn_critiques(&teacher, &t, &c, &SynthesisConfig::default()).unwrap();
        assert_eq!(out.lists, 8);
        assert_eq!(out.examples.len(), 8);
        for e in &out.examples {
            assert!(leaked_items(e, &t.ground_truth_item_ids, &c).is_empty());
            assert!(!e.target.is_empty());
        }
        // the all-negative list gets feedback naming a ground-truth attribute
        let neg = out.examples.iter().find(|e| e.meta.l_p == 0).unwrap();
        let gt_attrs: Vec<String> = [4u32, 9, 17]
            .iter()
            .flat_map(|i| c.get(ItemId(*i)).unwrap().attributes.pairs().map(|(_, v)| v.to_string()).collect::<Vec<_>>())
            .collect();
        assert!(gt_attrs.iter().any(|a| neg.target.contains(a.as_str())), "{}", neg.target);

        let req = teacher_request(&t, &c, &[ItemId(0)], 0.0, 1).unwrap();
        let with_pref = InstructionExample {
            messages: req.messages,
            target: "x".into(),
            behavior: Behavior::Critiquing,
            meta: neg.meta.clone(),
        };
        assert_eq!(leaked_items(&with_pref, &t.ground_truth_item_ids, &c).len(), 3);
    }

    #[test]
    fn empty_and_failed_teacher_outputs() {
        let c = catalog(40);
        let t = turn(&[1]);
        let empty = FnBackend::new("empty", |_: &GenerationRequest| Ok("  ".to_string()));
        let out = synthesize_turn_critiques(&empty, &t, &c, &SynthesisConfig::default()).unwrap();
        assert_eq!((out.examples.len(), out.dropped_empty), (0, 2));
        let failing =
            FnBackend::new("fail", |_: &GenerationRequest| Err(crate::gateway::GatewayError::Scripted("down".into())));
        let out = synthesize_turn_critiques(&failing, &t, &c, &SynthesisConfig::default()).unwrap();
        assert_eq!(out.failures.len(), 2);
    }

    #[test]
    fn export_round_trip() {
        let c = catalog(50);
        let mut ex = build_scoring_examples(&turn(&[1, 2, 3]), &c, 1, 3).unwrap();
        ex.extend(
            synthesize_turn_critiques(&OracleUser::teacher(), &turn(&[1, 2, 3]), &c, &SynthesisConfig::default())
                .unwrap()
                .examples,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        assert_eq!(export_dataset(&ex, &path, 11).unwrap(), ex.len());
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, shuffle_examples(&ex, 11));
        assert_eq!(export_dataset(&[], &path, 11).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }
}
