use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crsearch::ingest::read_jsonl;
use crsearch::metrics::{aggregate, render_table, turn_metrics};
use crsearch::{ItemId, MetricMap, RecommendationTurn, Report};

use crate::search::{ranking_path, RankingFile};
use crate::{read_json, write_json, UsageError};

pub struct EvaluateArgs {
    pub run_dirs: Vec<PathBuf>,
    pub turns: PathBuf,
    pub cuts: Vec<usize>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cuts: Vec<usize>,
    pub run_dirs: Vec<String>,
    pub report: Report,
}

pub fn run(args: &EvaluateArgs) -> anyhow::Result<(EvaluationReport, String)> {
    if args.run_dirs.is_empty() {
        return Err(UsageError("at least one run directory is required".into()).into());
    }
    if let Some(n) = args.runs {
        if n != args.run_dirs.len() {
            return Err(UsageError(format!("--runs {n} but {} run directories given", args.run_dirs.len())).into());
        }
    }
    if args.cuts.is_empty() || args.cuts.contains(&0) {
        return Err(UsageError("--cuts must be positive integers".into()).into());
    }
    let turns: Vec<RecommendationTurn> = read_jsonl(&args.turns)?;
    let mut runs = Vec::with_capacity(args.run_dirs.len());
    for dir in &args.run_dirs {
        let mut per_turn: Vec<MetricMap> = Vec::with_capacity(turns.len());
        for turn in &turns {
            let file: RankingFile = read_json(&ranking_path(dir, turn))?;
            let ranked: Vec<ItemId> = file.ranking.iter().map(|r| r.item_id).collect();
            let m = turn_metrics(&ranked, &turn.ground_truth_item_ids, &args.cuts)
                .with_context(|| format!("turn {} in {}", turn.key(), dir.display()))?;
            per_turn.push(m);
        }
        runs.push(per_turn);
    }
    let report = aggregate(&runs).context("aggregating metrics")?;
    let label = args.run_dirs[0].file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let table = render_table(&label, &report, &args.cuts);
    let out = EvaluationReport {
        cuts: args.cuts.clone(),
        run_dirs: args.run_dirs.iter().map(|p| p.display().to_string()).collect(),
        report,
    };
    let path = args.out.clone().unwrap_or_else(|| args.run_dirs[0].join("report.json"));
    write_json(&path, &out)?;
    Ok((out, table))
}
