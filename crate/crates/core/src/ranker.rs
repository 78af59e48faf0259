//! Final ranking over every item scored during a search. Uses only the
//! scores already in the trace; no model calls.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::catalog::ItemCatalog;
use crate::domain::{ItemId, ScoredItem};
use crate::search::SearchTrace;

/// Default number of items in the final ranking.
pub const DEFAULT_OUTPUT_LENGTH: usize = 50;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RankError {
    #[error("trace contains no scored states")]
    EmptyTrace,
}

/// How repeated observations of one item are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

/// One row of the emitted ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: ItemId,
    pub title: String,
    pub score: Option<f64>,
    pub rank: usize,
}

/// Pools `(item, score)` observations in order of appearance, merges repeats
/// and sorts by score, ties by first appearance.
pub fn rank_pool(
    pool: impl IntoIterator<Item = ScoredItem>,
    l_out: usize,
    aggregation: Aggregation,
) -> Vec<ScoredItem> {
    // (first appearance, running value, observation count)
    let mut merged: HashMap<ItemId, (usize, f64, usize)> = HashMap::new();
    for (pos, obs) in pool.into_iter().enumerate() {
        merged
            .entry(obs.item_id)
            .and_modify(|e| {
                match aggregation {
                    Aggregation::Max => e.1 = e.1.max(obs.score),
                    Aggregation::Mean => e.1 += obs.score,
                }
                e.2 += 1;
            })
            .or_insert((pos, obs.score, 1));
    }
    let mut rows: Vec<(usize, ScoredItem)> = merged
        .into_iter()
        .map(|(item_id, (first, value, count))| {
            let score = match aggregation {
                Aggregation::Max => value,
                Aggregation::Mean => value / count as f64,
            };
            (first, ScoredItem { item_id, score })
        })
        .collect();
    rows.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    rows.into_iter().take(l_out).map(|(_, s)| s).collect()
}

/// Ranks all items scored in `trace`. Observations are visited by state id,
/// then list position.
pub fn rank_candidates(
    trace: &SearchTrace,
    l_out: usize,
    aggregation: Aggregation,
) -> Result<Vec<ScoredItem>, RankError> {
    let mut scored: Vec<_> = trace.scored_states().collect();
    if scored.is_empty() {
        return Err(RankError::EmptyTrace);
    }
    scored.sort_by_key(|s| s.state_id);
    Ok(rank_pool(scored.into_iter().flat_map(|s| s.scored_items()), l_out, aggregation))
}

/// Final ranking for any trace: pooled scores when the search scored
/// anything, otherwise the single unscored list as-is.
pub fn final_ranking(
    trace: &SearchTrace,
    catalog: &ItemCatalog,
    l_out: usize,
    aggregation: Aggregation,
) -> Result<Vec<RankedItem>, RankError> {
    let rows: Vec<(ItemId, Option<f64>)> = match rank_candidates(trace, l_out, aggregation) {
        Ok(scored) => scored.into_iter().map(|s| (s.item_id, Some(s.score))).collect(),
        Err(RankError::EmptyTrace) => {
            let first = trace.all_states.first().ok_or(RankError::EmptyTrace)?;
            first.items.iter().take(l_out).map(|&id| (id, None)).collect()
        }
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (item_id, score))| RankedItem {
            item_id,
            title: catalog.title(item_id).unwrap_or_default().to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn si(id: u32, score: f64) -> ScoredItem {
        ScoredItem { item_id: ItemId(id), score }
    }

    #[test]
    fn max_dedup() {
        let out = rank_pool([si(0, 0.9), si(1, 0.4), si(0, 0.2)], 2, Aggregation::Max);
        assert_eq!(out, vec![si(0, 0.9), si(1, 0.4)]);
    }

    #[test]
    fn equal_scores_keep_first_appearance() {
        let out = rank_pool([si(5, 0.5), si(2, 0.5), si(9, 0.5), si(2, 0.5)], 10, Aggregation::Max);
        assert_eq!(out.iter().map(|s| s.item_id.0).collect::<Vec<_>>(), vec![5, 2, 9]);
    }

    #[test]
    fn mean_aggregation() {
        let out = rank_pool([si(0, 0.9), si(1, 0.6), si(0, 0.1)], 5, Aggregation::Mean);
        assert_eq!(out[0], si(1, 0.6));
        assert!((out[1].score - 0.5).abs() < 1e-12);
    }
}
