use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use crsearch::catalog::load_catalog;
use crsearch::ingest::{derive_recommendation_turns, load_conversations, load_split, to_jsonl, SplitName};
use crsearch::RecommendationTurn;

use crate::{digest_file, write_json};

pub struct IngestArgs {
    pub corpus: PathBuf,
    pub catalog: PathBuf,
    pub out_dir: PathBuf,
    pub dedupe: bool,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestManifest {
    pub command: &'static str,
    pub corpus_sha256: String,
    pub catalog_sha256: String,
    pub split_sha256: Option<String>,
    pub dedupe: bool,
    pub items: usize,
    pub conversations: usize,
    pub turns: usize,
    pub turns_per_split: Option<Vec<(SplitName, usize)>>,
    pub turns_sha256: String,
    pub warnings: Vec<String>,
}

impl IngestManifest {
    pub fn summary(&self) -> String {
        format!(
            "{} conversations, {} recommendation turns, {} catalog items",
            self.conversations, self.turns, self.items
        )
    }
}

fn write_turns(path: &Path, turns: &[RecommendationTurn]) -> anyhow::Result<()> {
    std::fs::write(path, to_jsonl(turns)).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: &IngestArgs) -> anyhow::Result<IngestManifest> {
    let catalog = load_catalog(&args.catalog).with_context(|| format!("loading catalog {}", args.catalog.display()))?;
    let convs = load_conversations(&args.corpus, &catalog)?;
    if convs.is_empty() {
        bail!("corpus {} contains no conversations", args.corpus.display());
    }
    let turns = derive_recommendation_turns(&convs, args.dedupe);
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let turns_path = args.out_dir.join("turns.jsonl");
    write_turns(&turns_path, &turns)?;

    let mut warnings = Vec::new();
    let mut per_split = None;
    if let Some(split_path) = &args.split {
        let split = load_split(split_path)?;
        for id in split.check_against(&convs)? {
            warnings.push(format!("split id {id:?} is not in the corpus"));
        }
        let mut counts = Vec::new();
        for name in [SplitName::Train, SplitName::Valid, SplitName::Test] {
            let part: Vec<RecommendationTurn> =
                turns.iter().filter(|t| split.assignment.get(&t.conv_id) == Some(&name)).cloned().collect();
            let file = format!("turns_{}.jsonl", serde_json::to_value(name)?.as_str().expect("enum name"));
            write_turns(&args.out_dir.join(file), &part)?;
            counts.push((name, part.len()));
        }
        per_split = Some(counts);
    }

    let manifest = IngestManifest {
        command: "ingest",
        corpus_sha256: digest_file(&args.corpus)?,
        catalog_sha256: digest_file(&args.catalog)?,
        split_sha256: args.split.as_deref().map(digest_file).transpose()?,
        dedupe: args.dedupe,
        items: catalog.len(),
        conversations: convs.len(),
        turns: turns.len(),
        turns_per_split: per_split,
        turns_sha256: digest_file(&turns_path)?,
        warnings,
    };
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
