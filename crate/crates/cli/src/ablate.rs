use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crsearch::metrics::{aggregate, turn_metrics, Metric};
use crsearch::ranker::final_ranking;
use crsearch::search::CallCounts;
use crsearch::user::{RewardTokenConfig, ScoreCache};
use crsearch::world::OracleWorld;
use crsearch::{run_search, ItemId, MetricMap, Report, SearchConfig, SearchContext, Strategy};

use crate::config::{self, AblationConfig};
use crate::search::turn_seed;
use crate::{digest_json, write_json, PromptVersions, UsageError, PROMPT_VERSIONS};

pub struct AblateArgs {
    pub config: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: Strategy,
    /// Scored lists per episode predicted by the strategy's configuration.
    pub expected_scored_states: usize,
    /// Scored lists per episode, as observed (min, max).
    pub scored_states: (usize, usize),
    pub calls: CallCounts,
    pub report: Report,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationManifest {
    pub command: &'static str,
    pub config: AblationConfig,
    pub config_sha256: String,
    pub prompt_versions: PromptVersions,
    pub rows: Vec<AblationRow>,
}

pub fn run(args: &AblateArgs) -> anyhow::Result<(AblationManifest, String)> {
    let mut cfg: AblationConfig = config::load(&args.config)?;
    if let Some(c) = args.max_concurrency {
        cfg.search.max_concurrency = c.max(1);
    }
    if cfg.strategies.is_empty() || cfg.episodes == 0 || cfg.cuts.is_empty() {
        return Err(UsageError("strategies, episodes and cuts must be non-empty".into()).into());
    }
    for s in &cfg.strategies {
        s.configure(&cfg.search).validate().map_err(|e| UsageError(format!("{s}: {e}")))?;
    }
    let world = OracleWorld::new(cfg.world.clone());
    let tokens = RewardTokenConfig::default();
    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        let mut turns: Vec<MetricMap> = Vec::new();
        let mut calls = CallCounts::default();
        let (mut lo, mut hi) = (usize::MAX, 0);
        for episode in world.episodes(cfg.episodes) {
            let cache = ScoreCache::new();
            let ctx = SearchContext {
                crs: &world.crs,
                user: &episode.user,
                catalog: &world.catalog,
                reward_tokens: &tokens,
                cache: &cache,
            };
            let search = SearchConfig { seed: turn_seed(cfg.search.seed, &episode.turn), ..cfg.search.clone() };
            let trace = run_search(&ctx, &episode.turn.history, &search, strategy)?;
            if let Some(e) = &trace.aborted {
                anyhow::bail!("{strategy} on {}: {e}", episode.turn.conv_id);
            }
            let ranking = final_ranking(&trace, &world.catalog, cfg.ranker.l_out, cfg.ranker.aggregation)?;
            let ids: Vec<ItemId> = ranking.iter().map(|r| r.item_id).collect();
            turns.push(turn_metrics(&ids, &episode.targets, &cfg.cuts)?);
            let scored = trace.scored_states().count();
            lo = lo.min(scored);
            hi = hi.max(scored);
            calls.recommend += trace.calls.recommend;
            calls.critique += trace.calls.critique;
            calls.revise += trace.calls.revise;
            calls.score_requested += trace.calls.score_requested;
            calls.score += trace.calls.score;
            calls.score_cache_hits += trace.calls.score_cache_hits;
            calls.score_fallbacks += trace.calls.score_fallbacks;
        }
        let expected = match strategy {
            Strategy::None => 0,
            s => s.configure(&cfg.search).scored_budget(),
        };
        rows.push(AblationRow {
            strategy,
            expected_scored_states: expected,
            scored_states: (lo, hi),
            calls,
            report: aggregate(&[turns]).context("aggregating")?,
        });
    }
    let table = render(&rows, &cfg.cuts);
    let manifest = AblationManifest {
        command: "ablate",
        config_sha256: digest_json(&cfg),
        config: cfg,
        prompt_versions: PROMPT_VERSIONS,
        rows,
    };
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        std::fs::write(dir.join("ablation.txt"), &table)?;
    }
    Ok((manifest, table))
}

fn render(rows: &[AblationRow], cuts: &[usize]) -> String {
    let mut out = format!("{:<14} {:>8} {:>8} {:>9}", "strategy", "scored", "budget", "critiques");
    for m in Metric::ALL {
        for &k in cuts {
            out.push_str(&format!(" {:>10}", m.label(k)));
        }
    }
    out.push('\n');
    for r in rows {
        let scored = if r.scored_states.0 == r.scored_states.1 {
            r.scored_states.0.to_string()
        } else {
            format!("{}-{}", r.scored_states.0, r.scored_states.1)
        };
        out.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>9}",
            r.strategy.as_str(),
            scored,
            r.expected_scored_states,
            r.calls.critique
        ));
        for m in Metric::ALL {
            for &k in cuts {
                out.push_str(&format!(" {:>10.3}", r.report.metrics[&m.key(k)].mean));
            }
        }
        out.push('\n');
    }
    out
}
