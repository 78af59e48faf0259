use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crsearch::catalog::load_catalog;
use crsearch::ingest::read_jsonl;
use crsearch::ranker::final_ranking;
use crsearch::rng::{derive_seed, text_seed};
use crsearch::search::CallCounts;
use crsearch::user::ScoreCache;
use crsearch::{run_search, RankedItem, RecommendationTurn, SearchConfig, SearchContext, Strategy};

use crate::config::{self, SearchRunConfig, UserBackends};
use crate::{digest_file, digest_json, write_json, PromptVersions, UsageError, PROMPT_VERSIONS};

pub struct SearchArgs {
    pub turns: PathBuf,
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub max_concurrency: Option<usize>,
    pub limit: Option<usize>,
}

/// Contents of `rankings/<turn>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFile {
    pub conv_id: String,
    pub turn_index: usize,
    pub strategy: Strategy,
    pub ranking: Vec<RankedItem>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TurnRecord {
    pub turn: String,
    pub seed: u64,
    pub states: usize,
    pub scored_states: usize,
    pub calls: CallCounts,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchManifest {
    pub command: &'static str,
    pub strategy: Strategy,
    pub seed: u64,
    pub max_concurrency: usize,
    pub config: SearchRunConfig,
    pub config_sha256: String,
    pub catalog_sha256: String,
    pub turns_sha256: String,
    pub prompt_versions: PromptVersions,
    pub backends: (String, String),
    pub calls: CallCounts,
    pub turns: Vec<TurnRecord>,
}

impl SearchManifest {
    pub fn failed_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.aborted.is_some()).count()
    }
}

fn add(total: &mut CallCounts, c: &CallCounts) {
    total.recommend += c.recommend;
    total.critique += c.critique;
    total.revise += c.revise;
    total.score_requested += c.score_requested;
    total.score += c.score;
    total.score_cache_hits += c.score_cache_hits;
    total.score_fallbacks += c.score_fallbacks;
}

/// Per-turn seed, independent of turn order and of other turns.
pub fn turn_seed(master: u64, turn: &RecommendationTurn) -> u64 {
    derive_seed(master, &[text_seed(&turn.key())])
}

pub fn run(args: &SearchArgs) -> anyhow::Result<SearchManifest> {
    let mut cfg: SearchRunConfig = config::load(&args.config)?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(seed) = args.seed {
        cfg.search.seed = seed;
    }
    if let Some(c) = args.max_concurrency {
        if c == 0 {
            return Err(UsageError("--max-concurrency must be at least 1".into()).into());
        }
        cfg.search.max_concurrency = c;
    }
    cfg.strategy.configure(&cfg.search).validate().map_err(|e| UsageError(e.to_string()))?;
    let catalog_path = config::resolve(&args.config, &cfg.catalog);
    let catalog =
        Arc::new(load_catalog(&catalog_path).with_context(|| format!("loading catalog {}", catalog_path.display()))?);
    let mut turns: Vec<RecommendationTurn> = read_jsonl(&args.turns)?;
    if let Some(n) = args.limit {
        turns.truncate(n);
    }

    let crs = config::crs_backend(&cfg.crs_backend, &catalog);
    let users = UserBackends::new(&cfg.user_backend);
    let traces = args.out_dir.join("traces");
    let rankings = args.out_dir.join("rankings");
    for dir in [&traces, &rankings] {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut records = Vec::with_capacity(turns.len());
    let mut totals = CallCounts::default();
    let mut user_name = String::new();
    for turn in &turns {
        let user = users.for_turn(&catalog, &turn.ground_truth_item_ids);
        user_name = user.name().to_string();
        let cache = ScoreCache::new();
        let ctx = SearchContext {
            crs: crs.as_ref(),
            user: user.as_ref(),
            catalog: &catalog,
            reward_tokens: &cfg.reward_tokens,
            cache: &cache,
        };
        let seed = turn_seed(cfg.search.seed, turn);
        let search_cfg = SearchConfig { seed, ..cfg.search.clone() };
        let trace = run_search(&ctx, &turn.history, &search_cfg, cfg.strategy)
            .with_context(|| format!("searching turn {}", turn.key()))?;
        write_json(&traces.join(format!("{}.json", turn.key())), &trace)?;
        if trace.aborted.is_none() {
            let ranking = final_ranking(&trace, &catalog, cfg.ranker.l_out, cfg.ranker.aggregation)
                .with_context(|| format!("ranking turn {}", turn.key()))?;
            let file = RankingFile {
                conv_id: turn.conv_id.clone(),
                turn_index: turn.turn_index,
                strategy: cfg.strategy,
                ranking,
            };
            write_json(&rankings.join(format!("{}.json", turn.key())), &file)?;
        }
        add(&mut totals, &trace.calls);
        records.push(TurnRecord {
            turn: turn.key(),
            seed,
            states: trace.all_states.len(),
            scored_states: trace.scored_states().count(),
            calls: trace.calls,
            aborted: trace.aborted.clone(),
        });
    }

    let manifest = SearchManifest {
        command: "search",
        strategy: cfg.strategy,
        seed: cfg.search.seed,
        max_concurrency: cfg.search.max_concurrency,
        config_sha256: digest_json(&cfg),
        config: cfg,
        catalog_sha256: digest_file(&catalog_path)?,
        turns_sha256: digest_file(&args.turns)?,
        prompt_versions: PROMPT_VERSIONS,
        backends: (crs.name().to_string(), user_name),
        calls: totals,
        turns: records,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn ranking_path(run_dir: &Path, turn: &RecommendationTurn) -> PathBuf {
    run_dir.join("rankings").join(format!("{}.json", turn.key()))
}
