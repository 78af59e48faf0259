//! Item catalog and the fuzzy title matcher that grounds generated names.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attributes, Item, ItemId};

/// Similarity a match must reach to be accepted unless configured otherwise.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("empty catalog")]
    Empty,
    #[error("catalog line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate normalized title {title:?} (items {first} and {second})")]
    DuplicateTitle { title: String, first: ItemId, second: ItemId },
    #[error("cannot sample {requested} negatives: only {available} items outside the exclusion set")]
    InsufficientPopulation { requested: usize, available: usize },
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogLine {
    item_id: u32,
    title: String,
    attributes: Attributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub item_id: Option<ItemId>,
    pub similarity: f64,
    pub raw_text: String,
}

/// Immutable item universe with a normalized-title index.
#[derive(Debug, Clone)]
pub struct ItemCatalog {
    items: Vec<Item>,
    index: HashMap<String, ItemId>,
    /// Year-stripped normalized title -> lowest item id carrying it.
    stripped_index: HashMap<String, ItemId>,
    normalized: Vec<Vec<char>>,
    stripped: Vec<Vec<char>>,
}

impl ItemCatalog {
    /// Builds a catalog; item ids must equal their positions.
    pub fn from_items(items: Vec<Item>) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut index = HashMap::with_capacity(items.len());
        let mut stripped_index = HashMap::with_capacity(items.len());
        let mut normalized = Vec::with_capacity(items.len());
        let mut stripped = Vec::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            if item.item_id.index() != pos {
                return Err(CatalogError::Parse {
                    line: pos + 1,
                    message: format!("item_id {} is not dense (expected {})", item.item_id, pos),
                });
            }
            let norm = normalize_title(&item.title);
            if norm.is_empty() {
                return Err(CatalogError::Parse { line: pos + 1, message: "empty title".into() });
            }
            if let Some(&first) = index.get(&norm) {
                return Err(CatalogError::DuplicateTitle { title: norm, first, second: item.item_id });
            }
            let strip = strip_year(&norm).to_string();
            stripped_index.entry(strip.clone()).or_insert(item.item_id);
            normalized.push(norm.chars().collect());
            stripped.push(strip.chars().collect());
            index.insert(norm, item.item_id);
        }
        Ok(Self { items, index, stripped_index, normalized, stripped })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, id: ItemId) -> Option<&Item> {
        self.items.get(id.index())
    }

    pub fn contains(&self, id: ItemId) -> bool {
        id.index() < self.items.len()
    }

    pub fn title(&self, id: ItemId) -> Option<&str> {
        self.get(id).map(|i| i.title.as_str())
    }

    /// Exact lookup by normalized title.
    pub fn lookup(&self, title: &str) -> Option<ItemId> {
        self.index.get(&normalize_title(title)).copied()
    }

    /// Maps free text onto the most similar catalog title.
    ///
    /// Similarity is the larger of the indel similarity against the full
    /// normalized title and against the title with its trailing `(year)`
    /// removed. Ties go to the lower item id.
    pub fn fuzzy_match(&self, raw: &str, threshold: f64) -> MatchResult {
        let norm = normalize_title(raw);
        let raw_text = raw.to_string();
        if norm.is_empty() {
            return MatchResult { item_id: None, similarity: 0.0, raw_text };
        }

        let exact = [self.index.get(&norm), self.stripped_index.get(&norm)].into_iter().flatten().min().copied();
        if let Some(id) = exact {
            return MatchResult { item_id: Some(id), similarity: 1.0, raw_text };
        }

        let query: Vec<char> = norm.chars().collect();
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..self.items.len() {
            let full = &self.normalized[pos];
            let strip = &self.stripped[pos];
            let bound = indel_upper_bound(query.len(), full.len()).max(indel_upper_bound(query.len(), strip.len()));
            if let Some((_, b)) = best {
                if bound <= b {
                    continue;
                }
            }
            let mut sim = indel_similarity(&query, full);
            if strip.len() != full.len() {
                sim = sim.max(indel_similarity(&query, strip));
            }
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((pos, sim));
            }
        }
        let (pos, similarity) = best.unwrap_or((0, 0.0));
        let item_id = (similarity >= threshold).then_some(self.items[pos].item_id);
        MatchResult { item_id, similarity, raw_text }
    }

    /// Uniform sample without replacement from the items not in `exclude`,
    /// deterministic for a given seed.
    pub fn sample_negatives(
        &self,
        exclude: &HashSet<ItemId>,
        count: usize,
        seed: u64,
    ) -> Result<Vec<ItemId>, CatalogError> {
        let population: Vec<ItemId> = self.items.iter().map(|i| i.item_id).filter(|id| !exclude.contains(id)).collect();
        if population.len() < count {
            return Err(CatalogError::InsufficientPopulation { requested: count, available: population.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(rand::seq::index::sample(&mut rng, population.len(), count).into_iter().map(|i| population[i]).collect())
    }
}

/// Reads a catalog from JSON lines, one item per line.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<ItemCatalog, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    parse_catalog(&text)
}

pub fn parse_catalog(text: &str) -> Result<ItemCatalog, CatalogError> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CatalogLine =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse { line: n + 1, message: e.to_string() })?;
        if parsed.item_id as usize != items.len() {
            return Err(CatalogError::Parse {
                line: n + 1,
                message: format!("item_id {} out of order (expected {})", parsed.item_id, items.len()),
            });
        }
        items.push(Item { item_id: ItemId(parsed.item_id), title: parsed.title, attributes: parsed.attributes });
    }
    ItemCatalog::from_items(items)
}

/// Serializes a catalog in the line format read by [`load_catalog`].
pub fn write_catalog(catalog: &ItemCatalog) -> String {
    let mut out = String::new();
    for item in catalog.items() {
        let line = serde_json::json!({
            "item_id": item.item_id.0,
            "title": item.title,
            "attributes": item.attributes,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn is_strippable(c: char) -> bool {
    (c.is_ascii_punctuation() && !matches!(c, '(' | ')' | '[' | ']'))
        || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…')
}

/// Lowercases, collapses whitespace and trims surrounding punctuation.
pub fn normalize_title(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(|c: char| is_strippable(c) || c.is_whitespace()).to_string()
}

/// Removes a trailing ` (dddd)` year suffix, if present.
pub fn strip_year(s: &str) -> &str {
    let bytes = s.as_bytes();
    let n = bytes.len();
    if n >= 6 && bytes[n - 1] == b')' && bytes[n - 6] == b'(' && bytes[n - 5..n - 1].iter().all(u8::is_ascii_digit) {
        s[..n - 6].trim_end()
    } else {
        s
    }
}

/// Normalized indel similarity `1 - indel_distance / (|a| + |b|)`, computed
/// through the longest common subsequence.
pub fn indel_similarity(a: &[char], b: &[char]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for &lc in long {
        for (j, &sc) in short.iter().enumerate() {
            cur[j + 1] = if lc == sc { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[short.len()];
    2.0 * lcs as f64 / total as f64
}

fn indel_upper_bound(a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * a.min(b) as f64 / (a + b) as f64
    }
}
