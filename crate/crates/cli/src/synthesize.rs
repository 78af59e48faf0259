use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crsearch::catalog::load_catalog;
use crsearch::gateway::CountingBackend;
use crsearch::ingest::read_jsonl;
use crsearch::synthesis::{
    build_scoring_examples, export_dataset, synthesize_turn_critiques, turn_seed, InstructionExample,
};
use crsearch::RecommendationTurn;

use crate::config::{self, SynthesizeConfig};
use crate::{digest_file, digest_json, write_json, PromptVersions, PROMPT_VERSIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorArg {
    Scoring,
    Critiquing,
    Both,
}

impl BehaviorArg {
    fn scoring(self) -> bool {
        matches!(self, Self::Scoring | Self::Both)
    }

    fn critiquing(self) -> bool {
        matches!(self, Self::Critiquing | Self::Both)
    }
}

pub struct SynthesizeArgs {
    pub turns: PathBuf,
    pub catalog: PathBuf,
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub behavior: BehaviorArg,
    /// Process at most this many not-yet-completed turns, then stop.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnCounts {
    pub turn: String,
    pub seed: u64,
    pub ground_truth: usize,
    pub scoring_examples: usize,
    pub critiquing_lists: usize,
    pub critiquing_examples: usize,
    pub dropped_empty: usize,
    pub teacher_failures: Vec<String>,
}

/// One line of `progress.jsonl`, written once a turn is complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    config_sha256: String,
    counts: TurnCounts,
    examples: Vec<InstructionExample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisManifest {
    pub command: &'static str,
    pub behavior: BehaviorArg,
    pub complete: bool,
    pub config: SynthesizeConfig,
    pub config_sha256: String,
    pub catalog_sha256: String,
    pub turns_sha256: String,
    pub prompt_versions: PromptVersions,
    pub teacher_backend: String,
    /// Teacher calls made by this invocation (resumed turns excluded).
    pub teacher_calls: u64,
    pub resumed_turns: usize,
    pub examples_written: usize,
    pub per_turn: Vec<TurnCounts>,
}

fn read_progress(path: &Path, digest: &str) -> anyhow::Result<HashMap<String, Progress>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<Progress>(line) {
            Ok(p) => {
                if p.config_sha256 != digest {
                    bail!("{} was written with a different configuration; remove it to start over", path.display());
                }
                done.insert(p.counts.turn.clone(), p);
            }
            // a torn final line from an interrupted run
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
            Err(e) => bail!("{}: line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(done)
}

fn rewrite_progress(path: &Path, done: &HashMap<String, Progress>, order: &[RecommendationTurn]) -> anyhow::Result<()> {
    let mut text = String::new();
    for t in order {
        if let Some(p) = done.get(&t.key()) {
            text.push_str(&serde_json::to_string(p)?);
            text.push('\n');
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: &SynthesizeArgs) -> anyhow::Result<SynthesisManifest> {
    let cfg: SynthesizeConfig = config::load(&args.config)?;
    let catalog = load_catalog(&args.catalog).with_context(|| format!("loading catalog {}", args.catalog.display()))?;
    let turns: Vec<RecommendationTurn> = read_jsonl(&args.turns)?;
    let digest = digest_json(&(&cfg, args.behavior));
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let progress_path = args.out_dir.join("progress.jsonl");
    let mut done = read_progress(&progress_path, &digest)?;
    let resumed_turns = done.len();
    rewrite_progress(&progress_path, &done, &turns)?;
    let mut progress = OpenOptions::new().append(true).create(true).open(&progress_path)?;

    let teacher = CountingBackend::new(config::teacher_backend(&cfg.teacher_backend));
    let mut processed = 0;
    for turn in &turns {
        if done.contains_key(&turn.key()) {
            continue;
        }
        if args.stop_after.is_some_and(|n| processed >= n) {
            break;
        }
        let seed = turn_seed(cfg.synthesis.seed, turn);
        let mut counts = TurnCounts {
            turn: turn.key(),
            seed,
            ground_truth: turn.ground_truth_item_ids.len(),
            ..TurnCounts::default()
        };
        let mut examples = Vec::new();
        if args.behavior.scoring() {
            let s = build_scoring_examples(turn, &catalog, cfg.synthesis.negatives_per_positive, seed)?;
            counts.scoring_examples = s.len();
            examples.extend(s);
        }
        if args.behavior.critiquing() {
            let c = synthesize_turn_critiques(&teacher, turn, &catalog, &cfg.synthesis)?;
            counts.critiquing_lists = c.lists;
            counts.critiquing_examples = c.examples.len();
            counts.dropped_empty = c.dropped_empty;
            counts.teacher_failures = c.failures;
            examples.extend(c.examples);
        }
        let record = Progress { config_sha256: digest.clone(), counts, examples };
        writeln!(progress, "{}", serde_json::to_string(&record)?)?;
        progress.flush()?;
        done.insert(turn.key(), record);
        processed += 1;
    }

    let complete = turns.iter().all(|t| done.contains_key(&t.key()));
    let mut per_turn = Vec::new();
    let mut all = Vec::new();
    for t in &turns {
        if let Some(p) = done.get(&t.key()) {
            per_turn.push(p.counts.clone());
            all.extend(p.examples.iter().cloned());
        }
    }
    let examples_written =
        if complete { export_dataset(&all, args.out_dir.join("dataset.jsonl"), cfg.synthesis.seed)? } else { 0 };
    let manifest = SynthesisManifest {
        command: "synthesize",
        behavior: args.behavior,
        complete,
        config_sha256: digest,
        config: cfg,
        catalog_sha256: digest_file(&args.catalog)?,
        turns_sha256: digest_file(&args.turns)?,
        prompt_versions: PROMPT_VERSIONS,
        teacher_backend: crsearch::Backend::name(&teacher).to_string(),
        teacher_calls: teacher.calls(),
        resumed_turns,
        examples_written,
        per_turn,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
